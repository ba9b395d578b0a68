"""
Embedded conservative propagator and the two-function Harris contraction.

Conjugating the kernel by the running mass ``M^j psi`` gives a Markov
(time-inhomogeneous) flow

    P_{k,m} f = M^{m-k}(f * M^{n-m} psi) / M^{n-k} psi,

whose contraction in weighted total variation drives the spectral gap
estimates. Forward iterates of ``psi`` are cached in normalized form with a
separate log-scale, so long horizons never overflow.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ._validation import as_vector, builtin_output, check_positive
from .measure import KernelOperator

__all__ = [
    "EmbeddedPropagator",
    "propagator_apply",
    "propagator_matrix",
    "lyapunov_Vk",
    "check_lyapunov_drift",
    "check_minorization",
    "HarrisContractionSpec",
    "fit_harris_spec",
    "verify_harris_contraction",
    "embedded_harris_spec",
]


class EmbeddedPropagator:
    """The propagator family ``P^{(n tau)}_{k tau, m tau}`` for ``0 <= k <= m <= n``.

    Parameters
    ----------
    M : KernelOperator
    psi : array_like
        Positive weight.
    horizon_steps : int
        Total horizon ``n`` in skeleton steps.
    """

    def __init__(self, M: KernelOperator, psi, horizon_steps: int):
        self.M = M
        self.psi = as_vector(psi, "psi", n=M.n, positive=True)
        self.n_steps = int(horizon_steps)
        if self.n_steps < 1:
            raise ValueError("horizon_steps must be a positive integer")
        self._unit = [self.psi / self.psi.max()]
        self._logscale = [math.log(self.psi.max())]

    def mass(self, j: int) -> tuple[np.ndarray, float]:
        """Return ``(u_j, log s_j)`` with ``M^j psi = s_j * u_j`` and ``max u_j = 1``."""
        while len(self._unit) <= j:
            g = self.M.apply(self._unit[-1])
            s = g.max()
            if not s > 0:
                raise ZeroDivisionError("M^j psi vanished identically")
            self._unit.append(g / s)
            self._logscale.append(self._logscale[-1] + math.log(s))
        return self._unit[j], self._logscale[j]

    def _check(self, k, m):
        if not 0 <= k <= m <= self.n_steps:
            raise ValueError(f"need 0 <= k <= m <= n, got k={k}, m={m}, n={self.n_steps}")

    def step_matrix(self, j: int) -> np.ndarray:
        """Dense row-stochastic matrix of ``P_{j, j+1}``."""
        self._check(j, j + 1)
        u, _ = self.mass(self.n_steps - j - 1)
        A = self.M.dense() * u[None, :]
        rows = A.sum(axis=1)
        if np.any(rows <= 0):
            raise ZeroDivisionError("zero denominator: M^{n-k} psi vanishes at some state")
        return A / rows[:, None]


def propagator_apply(ep: EmbeddedPropagator, k: int, m: int, f) -> np.ndarray:
    """Evaluate ``P_{k,m} f = M^{m-k}(f M^{n-m} psi) / M^{n-k} psi``."""
    ep._check(k, m)
    f = as_vector(f, "f", n=ep.M.n)
    n = ep.n_steps
    u_nm, log_nm = ep.mass(n - m)
    u_nk, log_nk = ep.mass(n - k)
    if np.any(u_nk <= 0):
        raise ZeroDivisionError("zero denominator: M^{n-k} psi vanishes at some state")
    g = f * u_nm
    log_g = 0.0
    for _ in range(m - k):
        g = ep.M.apply(g)
        s = np.abs(g).max()
        if s > 0:
            g = g / s
            log_g += math.log(s)
    return g * math.exp(log_g + log_nm - log_nk) / u_nk


def propagator_matrix(ep: EmbeddedPropagator, k: int, m: int) -> np.ndarray:
    """Dense matrix of ``P_{k,m}`` as a product of one-step stochastic matrices."""
    ep._check(k, m)
    P = np.eye(ep.M.n)
    for j in range(k, m):
        P = P @ ep.step_matrix(j)
    return P


def lyapunov_Vk(ep: EmbeddedPropagator, nu, V, k: int) -> np.ndarray:
    """Return ``V_k = nu(M^k psi / psi) * V / M^k psi``."""
    nu = as_vector(nu, "nu", n=ep.M.n, nonnegative=True)
    V = as_vector(V, "V", n=ep.M.n, positive=True)
    if k < 0:
        raise ValueError("k must be nonnegative")
    u, _ = ep.mass(k)
    if np.any(u <= 0):
        raise ZeroDivisionError("zero denominator: M^k psi vanishes at some state")
    return float(nu @ (u / ep.psi)) * V / u


@builtin_output
def check_lyapunov_drift(ep: EmbeddedPropagator, nu, V, k: int, m: int, witness,
                         ledger=None) -> dict:
    """Check ``P_{k,m} V_{n-m} <= a V_{n-k} + c`` entrywise.

    The violation is reported relative to ``max(bound, 1)``; PASS iff it is at
    most ``1e-9``.
    """
    from .constants import build_ledger

    if witness is None:
        raise ValueError("a witness is required for the drift constants")
    if not k + 1 <= m <= ep.n_steps:
        raise ValueError("need k + 1 <= m <= n")
    ledger = ledger or build_ledger(witness)
    n = ep.n_steps
    lhs = propagator_apply(ep, k, m, lyapunov_Vk(ep, nu, V, n - m))
    bound = ledger.frak_a * lyapunov_Vk(ep, nu, V, n - k) + ledger.frak_c
    viol = (lhs - bound) / np.maximum(bound, 1.0)
    worst = float(viol.max())
    return {"pass": worst <= 1e-9, "lhs_max_violation": worst,
            "frak_a": ledger.frak_a, "frak_c": ledger.frak_c, "k": k, "m": m, "n": n}


@builtin_output
def check_minorization(ep: EmbeddedPropagator, witness, frak_R: float | None = None,
                       k: int = 0, ledger=None) -> dict:
    """Compare the empirical minorization constant of ``P_{k,k+p}`` with the bound.

    The reference measure is the normalized ``nu_{n-k-p}(f) = nu(f M^{n-k-p} psi/psi)``.
    """
    from .constants import build_ledger

    if witness is None or not witness.is_complete:
        return {"pass": False, "reason": "witness invalid"}
    ledger = ledger or build_ledger(witness, frak_R=frak_R)
    p = ledger.frak_p
    n = ep.n_steps
    if k + p > n:
        raise ValueError(f"frak_p = {p} exceeds the horizon n - k = {n - k}")
    u, _ = ep.mass(n - k - p)
    ref = witness.nu * u / ep.psi
    ref = ref / ref.sum()
    P = propagator_matrix(ep, k, k + p)
    Vnk = lyapunov_Vk(ep, witness.nu, witness.V, n - k)
    rows = Vnk <= ledger.frak_R
    cols = ref > 0
    if rows.any():
        emp = float((P[np.ix_(rows, cols)] / ref[cols]).min())
    else:
        emp = math.inf
    return {"pass": emp >= ledger.frak_b - 1e-12, "frak_p": p, "ell": p,
            "frak_b": ledger.frak_b, "empirical_b": emp, "frak_R": ledger.frak_R,
            "construction": "normalized nu_{n-k-p} = nu(. M^{n-k-p} psi / psi)",
            "sublevel_size": int(rows.sum())}


@dataclass(frozen=True, eq=False)
class HarrisContractionSpec:
    """Inputs of the two-function Harris contraction for a Markov matrix ``P``.

    Drift ``P scrV <= frak_a scrW + frak_c`` and minorization
    ``delta_x P >= frak_b nu`` on ``{scrW <= frak_R}``.
    """

    P: np.ndarray = field(repr=False)
    scrV: np.ndarray = field(repr=False)
    scrW: np.ndarray = field(repr=False)
    frak_a: float
    frak_b: float
    frak_c: float
    frak_R: float
    nu: np.ndarray = field(repr=False)

    def __post_init__(self):
        P = np.asarray(self.P, dtype=float)
        if P.ndim != 2 or P.shape[0] != P.shape[1]:
            raise ValueError("P must be square")
        n = P.shape[0]
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "scrV", as_vector(self.scrV, "scrV", n=n, nonnegative=True))
        object.__setattr__(self, "scrW", as_vector(self.scrW, "scrW", n=n, nonnegative=True))
        object.__setattr__(self, "nu", as_vector(self.nu, "nu", n=n, nonnegative=True))
        if not 0 < self.frak_a < 1:
            raise ValueError("frak_a must lie in (0, 1)")
        # frak_b = 1 (exact one-step coupling) keeps every step of the argument valid.
        if not 0 < self.frak_b <= 1:
            raise ValueError("frak_b must lie in (0, 1]")
        check_positive(self.frak_c, "frak_c")
        if not self.frak_R > 2 * self.frak_c / (1 - self.frak_a):
            raise ValueError("frak_R must exceed 2 frak_c / (1 - frak_a)")
        if abs(self.nu.sum() - 1) > 1e-12:
            raise ValueError("nu must be a probability vector")


def fit_harris_spec(P, scrV, scrW=None, frak_a: float = 0.5,
                    frak_R: float | None = None) -> HarrisContractionSpec:
    """Fit drift and minorization constants of a Markov matrix.

    ``frak_c`` is the smallest constant making the drift hold for the given
    ``frak_a``; ``frak_R`` defaults to ``4 frak_c / (1 - frak_a)``; ``nu`` and
    ``frak_b`` come from the column-wise minimum of the rows of ``P`` over the
    sublevel set ``{scrW <= frak_R}``.
    """
    P = np.asarray(P, dtype=float)
    scrV = as_vector(scrV, "scrV", n=P.shape[0], nonnegative=True)
    scrW = scrV if scrW is None else as_vector(scrW, "scrW", n=P.shape[0], nonnegative=True)
    frak_c = max(float((P @ scrV - frak_a * scrW).max()), 1e-15)
    if frak_R is None:
        frak_R = 4 * frak_c / (1 - frak_a)
    small = scrW <= frak_R
    if small.any():
        floor = P[small].min(axis=0)
        frak_b = float(floor.sum())
        if frak_b <= 0:
            raise ValueError("no minorization on the sublevel set (frak_b = 0)")
        nu = floor / frak_b
        frak_b = min(frak_b, 1.0)
    else:
        nu = np.zeros(P.shape[0])
        nu[int(np.argmin(scrW))] = 1.0
        frak_b = 1.0
    return HarrisContractionSpec(P, scrV, scrW, frak_a, frak_b, frak_c, frak_R, nu)


def _pair_norms(P, weight):
    """Matrix of ``sum_z |P[x,z] - P[y,z]| weight(z)`` over all pairs."""
    n = P.shape[0]
    out = np.empty((n, n))
    chunk = max(1, 4_000_000 // (n * n))
    for start in range(0, n, chunk):
        blk = P[start:start + chunk]
        out[start:start + chunk] = (np.abs(blk[:, None, :] - P[None, :, :]) * weight).sum(axis=2)
    return out


@builtin_output
def verify_harris_contraction(spec: HarrisContractionSpec, frak_bprime: float | None = None,
                              frak_aprime: float | None = None) -> dict:
    """Check ``||d_x P - d_y P||_{M(1+k V)} <= y ||d_x - d_y||_{M(1+k W)}`` for all pairs."""
    if np.any(np.abs(spec.P.sum(axis=1) - 1) > 1e-10) or np.any(spec.P < 0):
        raise ValueError("P must be row-stochastic")
    a, b, c, R = spec.frak_a, spec.frak_b, spec.frak_c, spec.frak_R
    lo = a + 2 * c / R
    bp = b / 2 if frak_bprime is None else float(frak_bprime)
    ap = (lo + 1) / 2 if frak_aprime is None else float(frak_aprime)
    if not 0 < bp < b:
        raise ValueError("frak_bprime must lie in (0, frak_b)")
    if not lo < ap < 1:
        raise ValueError("frak_aprime must lie in (frak_a + 2 frak_c / frak_R, 1)")
    kappa = bp / c
    frak_y = max(1 - (b - bp), (2 + kappa * R * ap) / (2 + kappa * R))
    lhs = _pair_norms(spec.P, 1 + kappa * spec.scrV)
    rhs = 2 + kappa * (spec.scrW[:, None] + spec.scrW[None, :])
    ratio = lhs / rhs
    np.fill_diagonal(ratio, 0.0)
    x, y = np.unravel_index(int(np.argmax(ratio)), ratio.shape)
    worst = float(ratio[x, y])
    drift = float((spec.P @ spec.scrV - a * spec.scrW - c).max())
    small = spec.scrW <= R
    minor = float((b * spec.nu[None, :] - spec.P[small]).max()) if small.any() else -math.inf
    return {
        "pass": worst <= frak_y + 1e-12,
        "constants": {"kappa": kappa, "frak_y": frak_y, "frak_a": a, "frak_b": b,
                      "frak_c": c, "frak_R": R, "frak_bprime": bp, "frak_aprime": ap},
        "kappa": kappa,
        "frak_y": frak_y,
        "worst_ratio": worst,
        "worst_case": {"x": int(x), "y": int(y), "ratio": worst},
        "drift_violation": drift,
        "minorization_violation": minor,
    }


def embedded_harris_spec(ep: EmbeddedPropagator, witness, k: int = 0,
                         ledger=None) -> HarrisContractionSpec:
    """Harris inputs for the block ``P_{k,k+p}`` with ``scrV = V_{n-k-p}``, ``scrW = V_{n-k}``."""
    from .constants import build_ledger

    ledger = ledger or build_ledger(witness)
    p = ledger.frak_p
    n = ep.n_steps
    if k + p > n:
        raise ValueError(f"frak_p = {p} exceeds the horizon n - k = {n - k}")
    u, _ = ep.mass(n - k - p)
    ref = witness.nu * u / ep.psi
    return HarrisContractionSpec(
        propagator_matrix(ep, k, k + p),
        lyapunov_Vk(ep, witness.nu, witness.V, n - k - p),
        lyapunov_Vk(ep, witness.nu, witness.V, n - k),
        ledger.frak_a, min(ledger.frak_b, 1.0), ledger.frak_c, ledger.frak_R,
        ref / ref.sum(),
    )
