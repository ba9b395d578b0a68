"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line."""

import decimal
import itertools
import math
import time

import numpy as np
import pytest

from perrongap.assumptions import AssumptionAWitness, full_witness_search
from perrongap.constants import build_ledger
from perrongap.eigensolver import (compute_gamma, compute_h, compute_lambda, convergence_audit,
                                   oracle_eigen, self_consistency, solve_triplet)
from perrongap.measure import KernelOperator, matrix_exp
from perrongap.models import (BirthDeathModel, ConditionHError, bd_build, bd_qsd, gf_build,
                              gf_drift_constants, gf_evolve_audit, gf_small_set_constants)
from perrongap.propagator import fit_harris_spec, verify_harris_contraction

from conftest import FIXTURE, random_chain, random_metzler


def report(capsys, number, ok, detail):
    with capsys.disabled():
        print(f"\nACCEPTANCE {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
    assert ok, detail


def _entry(name, M, V, psi, res, tri):
    return {"name": name, "M": M, "V": V, "psi": psi, "witness": res.witness,
            "ledger": res.ledger, "triplet": tri}


@pytest.fixture(scope="module")
def corpus(metzler_kernels, bd_result, gf_setup):
    """Every witness-passing model of the suite with its triplet."""
    out = []
    one2 = np.ones(2)
    M = KernelOperator(FIXTURE, tau=1.0)
    res = full_witness_search(M, one2, one2)
    out.append(_entry("fixture", M, one2, one2, res,
                       solve_triplet(M, one2, nu=res.witness.nu, ledger=res.ledger)))
    one = np.ones(50)
    for i, M in enumerate(metzler_kernels):
        res = full_witness_search(M, one, one)
        if res.found:
            tri = solve_triplet(M, one, nu=res.witness.nu, ledger=res.ledger)
            out.append(_entry(f"metzler-{i}", M, one, one, res, tri))
    # short time steps mix slowly, so the decay rates are finite and informative
    rng = np.random.default_rng(11)
    for i in range(10):
        M = matrix_exp(random_metzler(rng, 30, spread=2.0), 0.05)
        one = np.ones(30)
        res = full_witness_search(M, one, one)
        if res.found:
            tri = solve_triplet(M, one, nu=res.witness.nu, ledger=res.ledger)
            out.append(_entry(f"slow-{i}", M, one, one, res, tri))
    bd = bd_result
    out.append({"name": "birth-death", "M": bd["kernel"], "V": bd["V"], "psi": bd["psi"],
                "witness": bd["witness"], "ledger": bd["ledger"], "triplet": bd["triplet"]})
    gw = gf_setup["gw"]
    out.append({"name": "growth-frag", "M": gw["kernel"], "V": gw["V"], "psi": gw["psi"],
                "witness": gw["witness"], "ledger": build_ledger(gw["witness"]),
                "triplet": gf_setup["triplet"]})
    return out


@pytest.fixture(scope="module")
def consistency(corpus):
    """psi := h witness and ledger of every triplet in the corpus."""
    out = {}
    for entry in corpus:
        w = self_consistency(entry["M"], entry["V"], entry["triplet"])
        out[entry["name"]] = (w, build_ledger(w))
    return out


def test_01_fixture_exactness(capsys):
    t0 = time.perf_counter()
    M = KernelOperator(FIXTURE, tau=1.0)
    psi = np.ones(2)
    res = full_witness_search(M, psi, psi)
    tri = solve_triplet(M, psi, nu=res.witness.nu, ledger=res.ledger)
    elapsed = time.perf_counter() - t0
    err = max(abs(tri.growth - 2.0), float(np.max(np.abs(tri.h - 1.0))),
              float(np.max(np.abs(tri.gamma - [0.0, 1.0]))))
    report(capsys, 1, err <= 1e-12 and elapsed < 1.0,
           f"max error {err:.2e}, {elapsed:.3f} s")


def test_02_oracle_equivalence(capsys):
    t0 = time.perf_counter()
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(100):
        M = matrix_exp(random_metzler(rng, 50), 1.0)
        psi = np.ones(50)
        nu = np.full(50, 1 / 50)
        h, _ = compute_h(M, psi, nu)
        lam = compute_lambda(M, psi, nu, h)
        gamma = compute_gamma(M, psi, nu, h)
        oracle = oracle_eigen(M)
        h_o = oracle.h_star / oracle.h_star.max()
        g_o = oracle.gamma_star / float(oracle.gamma_star @ h_o)
        h = h / h.max()
        gamma = gamma / float(gamma @ h)
        worst = max(worst, abs(lam - oracle.rate) / abs(oracle.rate),
                    float(np.max(np.abs(h - h_o) / h_o)),
                    float(np.max(np.abs(gamma - g_o) / g_o)))
    elapsed = time.perf_counter() - t0
    report(capsys, 2, worst <= 1e-8 and elapsed < 60,
           f"worst relative error {worst:.2e} over 100 kernels, {elapsed:.1f} s")


def test_03_eigenvalue_bracket(corpus, capsys):
    worst = math.inf
    for entry in corpus:
        led, lam = entry["ledger"], entry["triplet"].lam
        worst = min(worst, lam - led.lambda_lo, led.lambda_hi - lam)
    report(capsys, 3, worst >= -1e-10,
           f"smallest slack {worst:.3e} over {len(corpus)} models")


def test_04_certified_rate_is_lower_bound(corpus, consistency, capsys):
    worst, bounds_ok = math.inf, True
    for entry in corpus:
        M, tri = entry["M"], entry["triplet"]
        _, led = consistency[entry["name"]]
        if getattr(M, "is_implicit", False):
            M = KernelOperator(M.dense(), tau=M.tau)
            k_max = 6
        else:
            k_max = 60
        audit = convergence_audit(M, tri.h, tri, ledger=led, mu_set=np.eye(M.n), k_max=k_max)
        worst = min(worst, audit.min_rate - led.sigma)
        bounds_ok &= audit.details["bound_ok"]
    report(capsys, 4, worst >= -1e-6 and bounds_ok,
           f"min(rate - sigma) = {worst:.3e} over all Diracs of {len(corpus)} models, "
           f"bounds hold: {bounds_ok}")


def test_05_harris_contraction(capsys):
    rng = np.random.default_rng(5)
    worst_excess = -math.inf
    for _ in range(20):
        P = random_chain(rng, 30)
        rep = verify_harris_contraction(fit_harris_spec(P, 1 + 0.1 * np.arange(30) ** 2))
        worst_excess = max(worst_excess, rep["worst_ratio"] - rep["frak_y"])
    report(capsys, 5, worst_excess <= 1e-12,
           f"max(worst ratio - y) = {worst_excess:.3e} over 20 chains")


def test_06_birth_death_qsd(capsys):
    t0 = time.perf_counter()
    model = BirthDeathModel(b=1.0, d=4.0, b1=1.0, d1=1.0, N=200)
    n = np.arange(1, 201)
    geo = [r ** n / (r ** n).sum() for r in (0.45, 0.3)]
    mus = np.vstack([np.eye(200), *geo])
    res = bd_qsd(model, mu_set=mus, k_max=120)
    # the QSD does not depend on the iteration measure
    M = res["kernel"]
    alt = solve_triplet(M, res["psi"], nu=np.eye(200)[5], V=res["V"])
    unique = float(np.abs(alt.gamma / alt.gamma.sum() - res["pi"]).sum())
    elapsed = time.perf_counter() - t0
    rates = res["conv_table"].rates
    ok = (model.Delta == 1.0 and res["N"] == 200 and res["tail_tv"] <= 1e-6
          and res["lambda0"] > 0 and unique <= 1e-10 and np.all(rates > 0) and elapsed < 30)
    report(capsys, 6, ok,
           f"lambda0 = {res['lambda0']:.12f}, tail TV {res['tail_tv']:.1e}, "
           f"min rate {rates.min():.3e}, {elapsed:.1f} s")


def _delta_decimal(b, d, b1, d1):
    """Delta at 50 significant digits."""
    with decimal.localcontext() as ctx:
        ctx.prec = 50
        b, d, b1, d1 = (decimal.Decimal(v) for v in (b, d, b1, d1))
        return (b.sqrt() - d.sqrt()) ** 2 + b1 * ((d / b).sqrt() - 1) - d1


def test_07_condition_h_boundary(capsys):
    grid = [0.25, 1.0, 2.0, 4.0]
    agree = True
    count = 0
    for b, d, b1, d1 in itertools.product(grid, repeat=4):
        model = BirthDeathModel(b=b, d=d, b1=b1, d1=d1, N=20)
        try:
            _, _, _, cert = bd_build(model)
            rejected = False
            # accepted parameters give a usable drift certificate
            agree &= cert.a < cert.b and cert.zeta > 0
        except ConditionHError:
            rejected = True
        agree &= rejected == (_delta_decimal(b, d, b1, d1) <= decimal.Decimal("1e-40"))
        if b == d:
            agree &= rejected
        count += 1
    report(capsys, 7, agree, f"{count} parameter sets, rejection iff Delta <= 0, b = d rejected")


def test_08_growth_fragmentation(gf_setup, capsys):
    t0 = time.perf_counter()
    model, gw, tri = gf_setup["model"], gf_setup["gw"], gf_setup["triplet"]
    dc = gf_drift_constants(model)
    x = model.grid
    u0 = np.zeros((4, x.size))
    for i, j in enumerate((50, 300, 1000, 2000)):
        u0[i, j] = 1.0
    audit = gf_evolve_audit(model, matrix_exp(gf_setup["built"][0], 0.5), tri, u0, k_max=40)
    fine = model.with_cells(2 * model.n_cells)
    L2, V2, psi2, _, cert2 = gf_build(fine)
    tri2 = solve_triplet(matrix_exp(L2, cert2.tau), psi2, nu=gf_small_set_constants(fine)["nu"],
                         V=V2)
    change = abs(tri2.lam - tri.lam) / abs(tri.lam)
    elapsed = gf_setup["seconds"] + time.perf_counter() - t0
    ok = (gw["witness"] is not None and dc["xi"] == pytest.approx(8 + 4 * math.sqrt(2), rel=1e-14)
          and gw["drift"].b == 0.0 and np.all(audit["rates"] > 0) and change < 1e-3
          and elapsed < 300)
    report(capsys, 8, ok,
           f"xi = {dc['xi']:.12f}, lambda = {tri.lam:.12f}, min rate {audit['rates'].min():.3f}, "
           f"doubling change {change:.1e}, {elapsed:.1f} s")


def test_09_monotonicity(gf_setup, capsys):
    model, tri = gf_setup["model"], gf_setup["triplet"]
    worst = 0.0
    for kernel in (gf_setup["gw"]["kernel"], matrix_exp(gf_setup["built"][0], 0.5)):
        u0 = np.zeros((1, model.n_cells))
        u0[0, 10] = 1.0
        mono = gf_evolve_audit(model, kernel, tri, u0, k_max=20)["monotonicity"]
        worst = max(worst, mono["t_violation"], mono["x_violation"])
    report(capsys, 9, worst <= 1e-8, f"largest relative violation {worst:.2e}")


def test_10_self_consistency(corpus, consistency, capsys):
    worst_beta = worst_sup = 0.0
    ok = True
    for entry in corpus:
        check = consistency[entry["name"]][0].report["self_consistency"]
        ok &= check["pass"] and check["horizon"] >= 50
        worst_beta = max(worst_beta, check["beta_rel_err"])
        worst_sup = max(worst_sup, check["sup_ratio_rel_err"])
    report(capsys, 10, ok and worst_beta <= 1e-9 and worst_sup <= 1e-9,
           f"{len(corpus)} triplets, beta' error {worst_beta:.1e}, sup ratio error {worst_sup:.1e}")


def test_11_ledger_arithmetic(capsys):
    alpha, beta, theta, c, d, R = 0.5, 1.0, 1.0, 0.5, 1.0, 2.0
    V = np.array([1.0, 2.0])
    w = AssumptionAWitness(1.0, alpha, beta, theta, np.array([True, True]), V, np.ones(2),
                           c=c, d=d, nu=np.array([1.0, 0.0]))
    led = build_ledger(w, frak_R=32.0)
    # hand evaluation
    Theta = theta / (beta - alpha)
    Xi = alpha * (R + Theta) + theta
    frak_a = alpha / beta
    frak_c = theta / (c * (beta - alpha))
    d2 = (beta - alpha) * d / (alpha + theta)
    # 2 * 32 * 1.5 / 0.5 = 192 = 2^7.58..., so frak_p = 7 + 1
    expect = {"Theta": 2.0, "Xi": 3.0, "frak_a": 0.5, "frak_c": 4.0, "d2": 1 / 3, "frak_p": 8}
    hand = {"Theta": Theta, "Xi": Xi, "frak_a": frak_a, "frak_c": frak_c, "d2": d2}
    ok = all(getattr(led, k) == v for k, v in expect.items())
    ok &= all(getattr(led, k) == v for k, v in hand.items())
    ok &= led.R_sup == R and led.frak_R == 32.0
    report(capsys, 11, ok, ", ".join(f"{k} = {getattr(led, k)!r}" for k in expect))
