import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from perrongap.assumptions import AssumptionAWitness
from perrongap.constants import build_ledger, rate_certificate, theorem_constant, tune_ledger


def make_witness(alpha, beta, theta, c, d, R, tau=1.0):
    """Two-state witness with K = {0} and sup_K V/psi = R."""
    K = np.array([True, False])
    return AssumptionAWitness(tau, alpha, beta, theta, K, np.array([R, 1.0]), np.ones(2),
                              c=c, d=d, nu=np.array([1.0, 0.0]))


@pytest.fixture
def worked():
    return build_ledger(make_witness(0.5, 1.0, 1.0, 0.5, 1.0, 2.0))


def test_worked_example_exact(worked):
    assert worked.Theta == 2.0
    assert worked.Xi == 3.0
    assert worked.frak_a == 0.5
    assert worked.frak_c == 4.0
    assert worked.d2 == 1 / 3
    assert worked.frak_R == 32.0
    assert worked.frak_p == 8
    assert math.isclose(worked.r, 1 / 9, rel_tol=1e-15)
    assert worked.lambda_lo == 0.0 and worked.lambda_hi == math.log(1.5)


def test_worked_example_minorization_sum(worked):
    # direct sum of a^i / alpha_i with alpha_i = d1 c^{i+1} beta r^i / (alpha R + theta)
    a, c, beta, r, d1 = 0.5, 0.5, 1.0, 1 / 9, 0.5
    S = sum(a**i / (d1 * c ** (i + 1) * beta * r**i / (0.5 * 2 + 1)) for i in range(8))
    assert math.isclose(S, 9**8 - 1, rel_tol=1e-12)
    frak_b = c * beta * worked.d2 / (2 * 1.0 * S)
    assert math.isclose(worked.frak_b, frak_b, rel_tol=1e-12)


def test_worked_example_rate(worked):
    b, R = worked.frak_b, worked.frak_R
    bp = b / 2
    ap = (0.5 + 2 * 4.0 / R + 1) / 2
    kappa = bp / 4.0
    assert math.isclose(worked.kappa, kappa, rel_tol=1e-12)
    assert worked.frak_aprime == ap
    omr = min(b - bp, kappa * R * (1 - ap) / (2 + kappa * R), 1 - 0.5**8)
    assert math.isclose(worked.one_minus_rho, omr, rel_tol=1e-9)
    assert math.isclose(worked.sigma, -math.log1p(-omr) / 8, rel_tol=1e-9)
    cert = rate_certificate(worked)
    assert cert["sigma"] == worked.sigma
    assert math.isclose(cert["sigma"], -math.log(cert["rho"]) / 8, rel_tol=1e-5)
    assert cert["lambda_interval"] == (0.0, math.log(1.5))


def test_worked_example_growth_constants(worked):
    # p = floor(log(2 (1 + theta/alpha)(Theta + R)) / log(1/a)) + 1 = floor(log2 24) + 1
    assert worked.p == 5
    c_seq = [1.0] + [0.5**k * (1 / 3) ** (k - 1) for k in range(1, 6)]
    assert np.allclose(worked.c_seq, c_seq, rtol=1e-14)
    C1 = 2 * 3.0**6 / (0.5 * c_seq[4] * 1.0**6)
    assert math.isclose(worked.C1, C1, rel_tol=1e-12)
    assert math.isclose(worked.q, math.log(0.5 / 9) / math.log(0.5), rel_tol=1e-14)


def test_collapsed_bracket_for_exact_eigenvector():
    # M psi = 2 psi with theta -> beta - alpha
    w = make_witness(1e-9, 2.0, 2.0 - 1e-9, 0.5, 1.0, 1.0)
    led = build_ledger(w)
    assert math.isclose(led.lambda_lo, math.log(2), rel_tol=1e-12)
    assert math.isclose(led.lambda_hi, math.log(2), rel_tol=1e-12)


def test_invalid_choices_raise(worked):
    w = make_witness(0.5, 1.0, 1.0, 0.5, 1.0, 2.0)
    with pytest.raises(ValueError):
        build_ledger(w, frak_R=10.0)  # below 2 frak_c / (1 - frak_a) = 16
    with pytest.raises(ValueError):
        build_ledger(w, frak_bprime=worked.frak_b)
    with pytest.raises(ValueError):
        build_ledger(w, frak_aprime=0.6)
    partial = AssumptionAWitness(1.0, 0.5, 1.0, 1.0, np.array([True]), np.ones(1), np.ones(1))
    with pytest.raises(ValueError):
        build_ledger(partial)


def test_tune_never_worse(worked):
    tuned = tune_ledger(make_witness(0.5, 1.0, 1.0, 0.5, 1.0, 2.0))
    assert tuned.log_sigma >= worked.log_sigma


def test_theorem_constant_finite(worked):
    lc = theorem_constant(worked, gamma_V=1.5)
    assert math.isfinite(lc) and lc > 0


def test_table_and_dict(worked):
    doc = worked.to_dict()
    assert doc["frak_p"] == 8 and isinstance(doc["c_seq"], list)
    assert "frak_p" in worked.table()


witness_params = st.tuples(
    st.floats(0.01, 0.9),    # alpha / beta
    st.floats(0.1, 10.0),    # beta
    st.floats(0.0, 5.0),     # theta excess over beta - alpha
    st.floats(0.01, 1.0),    # c
    st.floats(0.01, 1.0),    # d
    st.floats(1.0, 50.0),    # R
)


@settings(max_examples=200)
@given(witness_params)
def test_ledger_invariants(params):
    ratio, beta, excess, c, d, R = params
    alpha = ratio * beta
    theta = (beta - alpha) * (1 + excess)
    assume(beta <= alpha * R + theta)
    led = build_ledger(make_witness(alpha, beta, theta, c, d, R))
    assert 0 < led.frak_a < 1
    # rho may round to 1.0 and 1 - rho may underflow; the log field carries the gap
    assert -math.inf < led.log_one_minus_rho <= 0 and 0 <= led.one_minus_rho <= 1
    assert led.rho <= 1
    assert led.log_sigma > -math.inf
    assert led.d2 > 0 and led.q > 0
    assert led.lambda_lo <= led.lambda_hi
    assert led.frak_p >= 1 and led.p >= 1
    assert -math.inf < led.log_frak_b <= 0
    assert led.frak_R > 2 * led.frak_c / (1 - led.frak_a)
    for k in range(1, len(led.c_seq)):
        expect = k * math.log(c) + (k - 1) * math.log(beta / led.Xi)
        assert math.isclose(led.proof_constants["log_c_seq"][k], expect, rel_tol=1e-12,
                            abs_tol=1e-12)


@settings(max_examples=100)
@given(witness_params, st.floats(1.01, 20.0))
def test_frak_p_definition(params, fR):
    ratio, beta, excess, c, d, R = params
    alpha = ratio * beta
    theta = (beta - alpha) * (1 + excess)
    w = make_witness(alpha, beta, theta, c, d, R)
    base = build_ledger(w)
    frak_R = fR * 2 * base.frak_c / (1 - base.frak_a)
    led = build_ledger(w, frak_R=frak_R)
    # smallest p >= 1 with (beta/alpha)^p > 2 R (alpha + theta) / ((beta - alpha) d)
    target = 2 * frak_R * (alpha + theta) / ((beta - alpha) * d)
    p = led.frak_p
    assert p * math.log(beta / alpha) > math.log(target) * (1 - 1e-12) or p == 1
    if p > 1:
        assert (p - 1) * math.log(beta / alpha) <= math.log(target) * (1 + 1e-12)
