import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_chain, random_metzler
from perrongap.assumptions import full_witness_search
from perrongap.constants import build_ledger
from perrongap.eigensolver import (ConvergenceError, compute_gamma, compute_h,
                                   compute_lambda, convergence_audit, fit_decay_rate,
                                   h_bounds_check, iteration_cap, mass_normalized_audit,
                                   oracle_eigen, oracle_generator_eigen, self_consistency,
                                   solve_triplet)
from perrongap.measure import KernelOperator, matrix_exp


def numpy_perron(A, V):
    """Independent oracle: numpy eig, normalized like the solver (max h/V = 1, gamma(h) = 1)."""
    vals, right = np.linalg.eig(A)
    i = int(np.argmax(vals.real))
    h = np.abs(right[:, i].real)
    lvals, left = np.linalg.eig(A.T)
    j = int(np.argmax(lvals.real))
    g = np.abs(left[:, j].real)
    h = h / np.max(h / V)
    return float(vals[i].real), h, g / (g @ h)


def test_fixture_exact(fixture_kernel):
    tri = solve_triplet(fixture_kernel, np.ones(2), nu=np.array([0.0, 1.0]))
    assert abs(tri.growth - 2) <= 1e-12
    assert np.allclose(tri.h, [1, 1], atol=1e-12)
    assert np.allclose(tri.gamma, [0, 1], atol=1e-12)


def test_eigenvector_psi_is_a_fixed_point(rng):
    P = KernelOperator(2.0 * random_chain(rng, 6))
    h, it = compute_h(P, np.ones(6), np.full(6, 1 / 6))
    assert np.allclose(h, 1.0, rtol=1e-15)
    assert it <= 2


def test_lambda_examples(fixture_kernel):
    M = KernelOperator(2 * np.eye(3), tau=0.5)
    one = np.ones(3)
    assert math.isclose(compute_lambda(M, one, one / 3, one), math.log(2) / 0.5, rel_tol=1e-15)
    assert math.isclose(compute_lambda(fixture_kernel, np.ones(2), [0, 1], np.ones(2)),
                        math.log(2), rel_tol=1e-15)


def test_gamma_of_stochastic_is_stationary(rng):
    P = random_chain(rng, 8, power=2)
    M = KernelOperator(P)
    one = np.ones(8)
    gamma = compute_gamma(M, one, one / 8, one)
    vals, vecs = np.linalg.eig(P.T)
    pi = np.abs(vecs[:, np.argmax(vals.real)].real)
    assert np.allclose(gamma, pi / pi.sum(), rtol=1e-10)


def test_random_kernels_match_numpy_oracle(rng):
    for _ in range(5):
        M = matrix_exp(random_metzler(rng, 30), 0.7)
        V = 1 + rng.random(30)
        tri = solve_triplet(M, np.ones(30), V=V)
        lam, h, g = numpy_perron(M.dense(), V)
        assert math.isclose(tri.growth, lam, rel_tol=1e-10)
        assert np.max(np.abs(tri.h - h) / h) < 1e-8
        assert np.max(np.abs(tri.gamma - g)) / g.max() < 1e-8


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 25))
def test_eigen_equations_hold(seed, n):
    rng = np.random.default_rng(seed)
    M = KernelOperator(rng.random((n, n)) + 1e-3, tau=0.3)
    tri = solve_triplet(M, np.ones(n))
    g = tri.growth
    assert np.max(np.abs(M.apply(tri.h) - g * tri.h) / (g * tri.h)) < 1e-9
    assert np.max(np.abs(M.lapply(tri.gamma) - g * tri.gamma)) < 1e-9 * g * tri.gamma.max()
    assert math.isclose(float(tri.gamma @ tri.h), 1.0, rel_tol=1e-12)
    assert math.isclose(float(np.max(tri.h / tri.V)), 1.0, rel_tol=1e-12)
    assert math.isclose(tri.lam, math.log(g) / 0.3, rel_tol=1e-14)


def test_convergence_error_when_capped(rng):
    # nearly periodic kernel: slow mixing, so three steps cannot converge
    A = np.array([[1e-3, 1.0], [2.0, 1e-3]])
    with pytest.raises(ConvergenceError) as err:
        solve_triplet(KernelOperator(A), np.ones(2), max_iter=3)
    assert err.value.iterations == 3


def test_iteration_cap_is_clamped():
    assert iteration_cap(None) == 100_000
    K = np.array([True, False])
    from perrongap.assumptions import AssumptionAWitness

    w = AssumptionAWitness(1.0, 0.5, 1.0, 1.0, K, np.array([2.0, 1.0]), np.ones(2),
                           c=0.5, d=1.0, nu=np.array([1.0, 0.0]))
    assert iteration_cap(build_ledger(w)) == 1_000_000


def test_audit_eigenmeasure_gives_zero(fixture_kernel):
    tri = solve_triplet(fixture_kernel, np.ones(2), nu=np.array([0.0, 1.0]))
    audit = convergence_audit(fixture_kernel, np.ones(2), tri, mu_set=[tri.gamma], k_max=10)
    assert np.all(audit.errs <= 1e-14)


def test_audit_fixture_closed_form(fixture_kernel):
    V = np.array([1.0, 2.0])
    res = full_witness_search(fixture_kernel, V, np.ones(2))
    tri = solve_triplet(fixture_kernel, np.ones(2), nu=res.witness.nu, V=V)
    audit = convergence_audit(fixture_kernel, np.ones(2), tri, ledger=res.ledger,
                              mu_set=[[1.0, 0.0]], k_max=30)
    k = np.arange(1, 31)
    # 2^{-k} delta_1 M^k = (2^{-k}, 1 - 2^{-k}); distance to delta_2 weighted by V
    assert np.allclose(audit.errs[0], 2.0 ** -k * (V[0] + V[1]), rtol=1e-12)
    assert math.isclose(audit.rates[0], math.log(2), rel_tol=1e-9)
    assert audit.passed and audit.status == "pass"
    rows = audit.table()
    assert rows[0][0] == 1 and all(r[3] for r in rows)


def test_mass_normalized_audit_fixture(fixture_kernel):
    tri = solve_triplet(fixture_kernel, np.ones(2), nu=np.array([0.0, 1.0]))
    audit = mass_normalized_audit(fixture_kernel, tri, mu_set=[[1.0, 0.0]], k_max=20)
    k = np.arange(1, 21)
    assert np.allclose(audit.errs[0], 2.0 ** (1 - k), rtol=1e-12)
    assert audit.status == "no certified gap" and audit.passed


def test_mass_normalized_reduces_to_ergodic_audit(rng):
    P = random_chain(rng, 6, power=1)
    M = KernelOperator(P)
    tri = solve_triplet(M, np.ones(6))
    mu = np.eye(6)[:2]
    audit = mass_normalized_audit(M, tri, mu_set=mu, k_max=5)
    pi = tri.gamma / tri.gamma.sum()
    direct = np.abs(mu @ np.linalg.matrix_power(P, 3) - pi).sum(axis=1)
    assert np.allclose(audit.errs[:, 2], direct, rtol=1e-10, atol=1e-15)


def test_self_consistency_fixture(fixture_kernel):
    tri = solve_triplet(fixture_kernel, np.ones(2), nu=np.array([0.0, 1.0]))
    w = self_consistency(fixture_kernel, np.array([1.0, 2.0]), tri)
    assert math.isclose(w.beta, 2.0, rel_tol=1e-12)
    assert w.report["self_consistency"]["pass"]


def test_self_consistency_random(rng):
    M = matrix_exp(random_metzler(rng, 20), 1.0)
    tri = solve_triplet(M, np.ones(20))
    w = self_consistency(M, np.ones(20), tri)
    check = w.report["self_consistency"]
    assert check["beta_rel_err"] <= 1e-9 and abs(check["d_prime"] - 1) <= 1e-9


def test_h_bounds(rng):
    M = matrix_exp(random_metzler(rng, 15), 1.0)
    V = 1 + rng.random(15) * 3
    res = full_witness_search(M, V, np.ones(15))
    tri = solve_triplet(M, np.ones(15), nu=res.witness.nu, V=V)
    assert h_bounds_check(tri, res.ledger)["pass"]


def test_oracle_examples(fixture_kernel):
    ident = oracle_eigen(KernelOperator(np.eye(3)))
    assert ident.lambda_star == 1.0 and ident.gapless
    fx = oracle_eigen(fixture_kernel)
    assert fx.lambda_star == 2.0 and fx.subdominant == 1.0 and fx.gap_ratio == 0.5
    assert np.allclose(fx.h_star, [1, 1]) and np.allclose(fx.gamma_star, [0, 1])


def test_generator_oracle_agrees_with_kernel_oracle(rng):
    L = random_metzler(rng, 10)
    a = oracle_generator_eigen(L, 0.5)
    b = oracle_eigen(matrix_exp(L, 0.5))
    assert math.isclose(a.lambda_star, b.lambda_star, rel_tol=1e-10)
    assert math.isclose(a.rate, b.rate, rel_tol=1e-9, abs_tol=1e-12)


def test_fit_decay_rate():
    t = np.arange(1, 40, dtype=float)
    assert math.isclose(fit_decay_rate(t, 3 * np.exp(-0.7 * t)), 0.7, rel_tol=1e-10)
    assert fit_decay_rate(t, np.zeros_like(t)) == math.inf
    assert fit_decay_rate(t, np.full_like(t, 1e-20), atol=1e-15) == math.inf
