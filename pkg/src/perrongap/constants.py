"""
Explicit constants of the spectral-gap certificate.

Starting from a witness ``(tau, alpha, beta, theta, c, d, K, nu)`` the ledger
evaluates the drift/minorization constants of the embedded propagator, the
contraction factor ``rho`` with its rate ``sigma = -log(rho) / (p tau)``,
the eigenvalue bracket and the constants bounding ``h``.

Several of these quantities are astronomically small or large for realistic
witnesses (``frak_b`` carries a factor ``c^p``), so they are evaluated in
log-space; the plain float fields may underflow to 0 or overflow to ``inf``
while the ``log_*`` fields stay exact.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from ._validation import builtin_output

__all__ = ["ConstantsLedger", "build_ledger", "rate_certificate", "tune_ledger",
           "theorem_constant"]


def _exp(x: float) -> float:
    if x > 709.0:
        return math.inf
    return math.exp(x)


def _log_geometric_sum(log_ratio: float, terms: int) -> float:
    """``log sum_{j=1}^{terms} x^j`` with ``x = exp(log_ratio)``."""
    if log_ratio == 0:
        return math.log(terms)
    if log_ratio > 0:
        # x (x^terms - 1) / (x - 1)
        return (log_ratio + terms * log_ratio + math.log1p(-_exp(-terms * log_ratio))
                - (log_ratio + math.log1p(-math.exp(-log_ratio))))
    return log_ratio + math.log1p(-math.exp(terms * log_ratio)) - math.log1p(-math.exp(log_ratio))


def _logaddexp(a: float, b: float) -> float:
    return float(np.logaddexp(a, b))


@dataclass(frozen=True)
class ConstantsLedger:
    """Every derived constant of the certificate (see module docstring)."""

    tau: float
    alpha: float
    beta: float
    theta: float
    c: float
    d: float
    Theta: float
    R_sup: float
    Xi: float
    frak_a: float
    frak_c: float
    r: float
    q: float
    c_seq: tuple
    d1: float
    d2: float
    frak_R: float
    frak_bprime: float
    frak_aprime: float
    frak_p: int
    ell: int
    frak_b: float
    kappa: float
    frak_y: float
    rho: float
    one_minus_rho: float
    sigma: float
    p: int
    C1: float
    C2: float
    c1_lower: float
    lambda_lo: float
    lambda_hi: float
    log_frak_b: float
    log_kappa: float
    log_one_minus_rho: float
    log_sigma: float
    log_C1: float
    log_C2: float
    log_c1_lower: float
    floored_theta: bool = False
    proof_constants: dict = field(default_factory=dict)

    @builtin_output
    def to_dict(self) -> dict:
        out = asdict(self)
        out["c_seq"] = list(self.c_seq)
        return out

    def table(self) -> str:
        rows = []
        for key, value in self.to_dict().items():
            if isinstance(value, dict):
                for k2, v2 in value.items():
                    rows.append((f"{key}.{k2}", v2))
            elif isinstance(value, list):
                rows.append((key, ", ".join(f"{v:.6g}" for v in value[:6])
                             + (" ..." if len(value) > 6 else "")))
            else:
                rows.append((key, value))
        width = max(len(k) for k, _ in rows)
        lines = []
        for k, v in rows:
            text = f"{v:.12g}" if isinstance(v, float) else str(v)
            lines.append(f"{k.ljust(width)}  {text}")
        return "\n".join(lines)


def build_ledger(w, frak_R: float | None = None, frak_bprime: float | None = None,
                 frak_aprime: float | None = None) -> ConstantsLedger:
    """Evaluate the certificate constants of a complete witness.

    Defaults: ``frak_R = 4 frak_c / (1 - frak_a)``, ``frak_bprime = frak_b / 2``
    and ``frak_aprime`` the midpoint of ``(frak_a + 2 frak_c / frak_R, 1)``.
    """
    if not w.is_complete:
        raise ValueError("the ledger needs a complete witness (c, d and nu)")
    tau, alpha, beta, theta, c, d = w.tau, w.alpha, w.beta, w.theta, w.c, w.d
    if not (beta > alpha > 0 and theta > 0 and 0 < c <= 1 and 0 < d <= 1):
        raise ValueError("witness constants outside their admissible ranges")
    R = w.R_sup
    Theta = theta / (beta - alpha)
    Xi = alpha * (R + Theta) + theta
    frak_a = alpha / beta
    frak_c = theta / (c * (beta - alpha))
    r = (beta / Xi) ** 2
    log_a = math.log(frak_a)
    log_cr = math.log(c) + math.log(r)
    q = log_cr / log_a
    d1 = (1 - frak_a) * d
    d2 = (beta - alpha) * d / (alpha + theta)

    if frak_R is None:
        frak_R = 4 * frak_c / (1 - frak_a)
    if not frak_R > 2 * frak_c / (1 - frak_a):
        raise ValueError("frak_R must exceed 2 frak_c / (1 - frak_a)")
    log_arg = (math.log(2 * frak_R) + math.log(alpha + theta)
               - math.log(beta - alpha) - math.log(d))
    frak_p = math.floor(log_arg / math.log(beta / alpha)) + 1
    frak_p = max(frak_p, 1)
    ell = frak_p

    # sum_{j=0}^{ell-1} (frak_a / (c r))^j, the normalizing sum of the averaged propagator
    log_S = _log_geometric_sum(log_a - log_cr, ell) - (log_a - log_cr)
    log_frak_b = (2 * math.log(d) + math.log(beta) - math.log(2) - 2 * math.log(frak_c)
                  - math.log(alpha / theta + 1) - math.log(alpha * R + theta) - log_S)
    log_frak_b = min(log_frak_b, 0.0)
    frak_b = _exp(log_frak_b)
    if frak_bprime is None:
        log_bp = log_frak_b - math.log(2)
        log_x1 = log_frak_b - math.log(2)
    else:
        if not 0 < frak_bprime < frak_b:
            raise ValueError("frak_bprime must lie in (0, frak_b)")
        log_bp = math.log(frak_bprime)
        log_x1 = math.log(frak_b - frak_bprime)
    frak_bprime = _exp(log_bp)
    lo = frak_a + 2 * frak_c / frak_R
    if frak_aprime is None:
        frak_aprime = (lo + 1) / 2
    if not lo < frak_aprime < 1:
        raise ValueError("frak_aprime must lie in (frak_a + 2 frak_c / frak_R, 1)")
    log_kappa = log_bp - math.log(frak_c)
    kappa = _exp(log_kappa)
    kR = _exp(log_kappa + math.log(frak_R))
    log_x2 = log_kappa + math.log(frak_R) + math.log1p(-frak_aprime) - math.log(2 + kR)
    log_x3 = math.log(-math.expm1(frak_p * log_a))
    log_omr = min(log_x1, log_x2, log_x3)
    omr = _exp(log_omr)
    frak_y = 1 - _exp(min(log_x1, log_x2))
    rho = 1 - omr
    if log_omr < -700:
        log_nlr = log_omr
    else:
        log_nlr = math.log(-math.log1p(-omr))
    log_sigma = log_nlr - math.log(frak_p * tau)
    sigma = _exp(log_sigma)

    p = math.floor(math.log(2 * (1 + theta / alpha) * (Theta + R)) / math.log(1 / frak_a)) + 1
    p = max(p, 1)
    n_seq = max(p, 2) + 1
    log_cseq = [0.0] + [k * math.log(c) + (k - 1) * math.log(beta / Xi) for k in range(1, n_seq)]
    c_seq = tuple(_exp(v) for v in log_cseq)
    log_C1 = (math.log(2) + (p + 1) * math.log(Xi) - math.log(c) - log_cseq[p - 1]
              - (p + 1) * math.log(beta))
    log_Theta = math.log(Theta)
    b1 = _logaddexp(math.log(2) - frak_p * log_a,
                    log_kappa + log_C1 + _logaddexp(0.0, math.log(2) + log_Theta - frak_p * log_a))
    b2 = _logaddexp(math.log(2) + _logaddexp(0.0, log_kappa + log_Theta) - (p + frak_p) * log_a,
                    log_kappa)
    log_C2 = max(b1, b2)
    log_C2p = log_C2 + max(0.0, frak_p * (math.log(alpha + theta) - math.log(beta)))
    log_C3 = (log_C1 + log_C2p + 2 * math.log(alpha + theta) - 2 * math.log(d1)
              - 2 * math.log(beta) - log_kappa + math.log1p(R))
    log_c1 = (math.log(c) + (2 + math.log(beta / (2 * (alpha + theta))) / log_a) * log_cr
              - math.log(2))

    lambda_lo = math.log(beta) / tau
    lambda_hi = math.log(alpha + theta) / tau
    checks = {
        "frak_a in (0,1)": 0 < frak_a < 1,
        "rho < 1": math.isfinite(log_omr),
        "d2 > 0": d2 > 0,
        "q > 0": q > 0,
        "lambda_lo <= lambda_hi": lambda_lo <= lambda_hi + 1e-12 * max(1.0, abs(lambda_hi)),
    }
    bad = [k for k, ok in checks.items() if not ok]
    if bad:
        raise ValueError("ledger invariant violated: " + ", ".join(bad))
    proof = {"C2prime": _exp(log_C2p), "log_C2prime": log_C2p,
             "C3": _exp(log_C3), "log_C3": log_C3, "log_c_seq": log_cseq}
    return ConstantsLedger(
        tau=tau, alpha=alpha, beta=beta, theta=theta, c=c, d=d, Theta=Theta, R_sup=R,
        Xi=Xi, frak_a=frak_a, frak_c=frak_c, r=r, q=q, c_seq=c_seq, d1=d1, d2=d2,
        frak_R=frak_R, frak_bprime=frak_bprime, frak_aprime=frak_aprime, frak_p=frak_p,
        ell=ell, frak_b=frak_b, kappa=kappa, frak_y=frak_y, rho=rho, one_minus_rho=omr,
        sigma=sigma, p=p, C1=_exp(log_C1), C2=_exp(log_C2), c1_lower=_exp(log_c1),
        lambda_lo=lambda_lo, lambda_hi=lambda_hi, log_frak_b=log_frak_b,
        log_kappa=log_kappa, log_one_minus_rho=log_omr, log_sigma=log_sigma,
        log_C1=log_C1, log_C2=log_C2, log_c1_lower=log_c1,
        floored_theta=bool(getattr(w, "floored_theta", False)), proof_constants=proof,
    )


def rate_certificate(ledger: ConstantsLedger) -> dict:
    """The guaranteed rate and the eigenvalue bracket."""
    return {"sigma": ledger.sigma, "log_sigma": ledger.log_sigma, "rho": ledger.rho,
            "one_minus_rho": ledger.one_minus_rho,
            "lambda_interval": (ledger.lambda_lo, ledger.lambda_hi)}


def tune_ledger(w, R_factors=(1.25, 2.0, 4.0, 8.0), bprime_fractions=(0.25, 0.5, 0.75),
                aprime_fractions=(0.25, 0.5, 0.75)) -> ConstantsLedger:
    """Coarse grid search of ``(frak_R, frak_bprime, frak_aprime)`` maximizing ``sigma``.

    ``frak_R`` runs over multiples of its lower bound ``2 frak_c / (1 - frak_a)``.
    """
    base = build_ledger(w)
    lower = 2 * base.frak_c / (1 - base.frak_a)
    best = base
    for fR, fb, fa in itertools.product(R_factors, bprime_fractions, aprime_fractions):
        frak_R = fR * lower
        probe = build_ledger(w, frak_R=frak_R)
        lo = probe.frak_a + 2 * probe.frak_c / frak_R
        bp = fb * probe.frak_b
        if not bp > 0:
            continue
        try:
            led = build_ledger(w, frak_R=frak_R, frak_bprime=bp,
                               frak_aprime=lo + fa * (1 - lo))
        except ValueError:
            continue
        if led.log_sigma > best.log_sigma:
            best = led
    return best


def theorem_constant(ledger: ConstantsLedger, gamma_V: float) -> float:
    """Log of ``C'_2 (1 + Theta)(1 + (1 + kappa) gamma(V)) max(1, C_1 (alpha + theta) / d_1)``.

    ``gamma_V`` is ``gamma(V)`` for the normalization ``nu(h/psi) = 1``, ``gamma(h) = 1``.
    """
    lc = ledger.proof_constants["log_C2prime"]
    lc += math.log1p(ledger.Theta) + math.log1p((1 + ledger.kappa) * gamma_V)
    lc += max(0.0, ledger.log_C1 + math.log(ledger.alpha + ledger.theta) - math.log(ledger.d1))
    return lc
