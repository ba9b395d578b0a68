"""
Fitting and checking Assumption A on a finite kernel.

The four conditions are

* (A1) ``M V <= alpha V + theta 1_K psi``
* (A2) ``M psi >= beta psi``
* (A3) ``inf_{x in K} M(f psi)(x) / M psi(x) >= c nu(f)`` for ``f >= 0``
* (A4) ``nu(M^n psi / psi) >= d sup_K M^n psi / psi`` for all ``n``

with ``beta > alpha > 0``. On a finite space each optimal constant is an
explicit min or max; (A4) is certified on a finite horizon together with a
stabilization certificate. Applied to a power ``M^n`` of a skeleton the same
code path gives the discrete-time version of the assumption.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from ._validation import as_mask, as_vector, builtin_output, check_positive
from .measure import KernelOperator

__all__ = [
    "EPS_THETA",
    "A4Certificate",
    "AssumptionAWitness",
    "DriftCertificate",
    "WitnessStrategy",
    "WitnessSearchResult",
    "fit_A1",
    "fit_A2",
    "fit_A3",
    "fit_A4",
    "check_witness",
    "irreducible_constants",
    "drift_to_A1A2",
    "drift_witness_search",
    "full_witness_search",
]

#: Floor keeping the fitted theta strictly positive.
EPS_THETA = 1e-15
# alpha is floored at this fraction of sup MV/V so that it stays positive.
_ALPHA_FLOOR = 1e-15
_A4_RTOL = 1e-10
_A4_RUN = 5
_ITERATE_RTOL = 1e-13


@dataclass(frozen=True)
class A4Certificate:
    """Finite-horizon evidence for (A4)."""

    status: str
    converged: bool
    limit_estimate: float
    n_max: int
    n_used: int
    trend: str
    d: float

    @builtin_output
    def to_dict(self) -> dict:
        return {"status": self.status, "converged": self.converged,
                "limit_estimate": self.limit_estimate, "n_max": self.n_max,
                "n_used": self.n_used, "trend": self.trend, "d": self.d,
                "residual_assumption": "ratio bound verified for n <= n_max only"}


@dataclass(frozen=True, eq=False)
class AssumptionAWitness:
    """Constants ``(tau, alpha, beta, theta, c, d, K, nu)`` certifying Assumption A.

    A witness produced from drift constants alone is *partial*: ``c``, ``d``
    and ``nu`` are ``None``.
    """

    tau: float
    alpha: float
    beta: float
    theta: float
    K: np.ndarray
    V: np.ndarray
    psi: np.ndarray
    c: float | None = None
    d: float | None = None
    nu: np.ndarray | None = None
    a4: A4Certificate | None = None
    report: dict = field(default_factory=dict)
    floored_theta: bool = False
    floored_alpha: bool = False

    def __post_init__(self):
        check_positive(self.tau, "tau")
        if not self.beta > self.alpha > 0:
            raise ValueError(f"need beta > alpha > 0, got alpha={self.alpha}, beta={self.beta}")
        check_positive(self.theta, "theta")
        if not np.any(self.K):
            raise ValueError("K must be nonempty")
        if self.c is not None and not 0 < self.c <= 1:
            raise ValueError(f"c must lie in (0, 1], got {self.c}")
        if self.d is not None and not 0 < self.d <= 1:
            raise ValueError(f"d must lie in (0, 1], got {self.d}")
        if self.nu is not None:
            if abs(self.nu[self.K].sum() - 1) > 1e-12 or np.any(self.nu[~self.K] > 0):
                raise ValueError("nu must be a probability vector supported on K")

    @property
    def is_complete(self) -> bool:
        return self.c is not None and self.d is not None and self.nu is not None

    @property
    def R_sup(self) -> float:
        """``sup_K V / psi``."""
        return float((self.V / self.psi)[self.K].max())

    @builtin_output
    def to_dict(self) -> dict:
        return {
            "tau": self.tau, "alpha": self.alpha, "beta": self.beta, "theta": self.theta,
            "c": self.c, "d": self.d, "R_sup": self.R_sup,
            "K": [int(i) for i in np.flatnonzero(self.K)],
            "nu": None if self.nu is None else [float(v) for v in self.nu],
            "a4": None if self.a4 is None else self.a4.to_dict(),
            "report": self.report,
            "floored_theta": self.floored_theta, "floored_alpha": self.floored_alpha,
        }


def _MV(M, V, MV):
    return M.apply(V) if MV is None else MV


def fit_A1(M: KernelOperator, V, psi, K, MV=None) -> tuple[float, float]:
    """Fit ``(alpha, theta)`` in ``M V <= alpha V + theta 1_K psi``.

    ``alpha`` is the largest growth ratio ``MV/V`` outside ``K``, floored at
    ``1e-15 * max MV/V`` so that it stays positive (this covers ``K`` equal to
    the whole space). ``theta`` is the smallest value closing the inequality
    on ``K``, floored at ``EPS_THETA``.
    """
    V = as_vector(V, "V", n=M.n, positive=True)
    psi = as_vector(psi, "psi", n=M.n, positive=True)
    K = as_mask(K, M.n)
    if not K.any():
        raise ValueError("K must be nonempty")
    MV = _MV(M, V, MV)
    growth = MV / V
    floor = _ALPHA_FLOOR * growth.max() if growth.max() > 0 else 1e-300
    alpha = max(float(growth[~K].max()) if (~K).any() else 0.0, floor)
    theta = max(EPS_THETA, float(((MV - alpha * V) / psi)[K].max()))
    return alpha, theta


def fit_A2(M: KernelOperator, psi, Mpsi=None) -> float:
    """Return ``beta = min M psi / psi``; raises if it vanishes."""
    psi = as_vector(psi, "psi", n=M.n, positive=True)
    Mpsi = M.apply(psi) if Mpsi is None else Mpsi
    beta = float((Mpsi / psi).min())
    if not beta > 0:
        raise ValueError("beta = 0: the kernel kills psi at some state")
    return beta


def fit_A3(M: KernelOperator, psi, K, nu, Mpsi=None, block=None) -> float:
    """Optimal minorization constant through ``nu``, capped at one.

    ``c = min_{x in K, nu(y) > 0} M[x, y] psi(y) / (nu(y) M psi(x))``.
    """
    psi = as_vector(psi, "psi", n=M.n, positive=True)
    K = as_mask(K, M.n)
    nu = as_vector(nu, "nu", n=M.n, nonnegative=True)
    supp = np.flatnonzero(nu > 0)
    if supp.size == 0 or not K[supp].all():
        raise ValueError("nu must be supported on K")
    Mpsi = M.apply(psi) if Mpsi is None else Mpsi
    cols = M.columns(supp) if block is None else block
    ratio = cols[K] * psi[supp] / (nu[supp][None, :] * Mpsi[K][:, None])
    return float(min(ratio.min(), 1.0))


def _psi_iterates(M: KernelOperator, psi, n_max: int) -> tuple[list, bool]:
    """Normalized ``g_n = (M^n psi / psi) / max``, ``n = 1..``; stops once stable."""
    out = []
    u = psi / psi.max()
    prev = None
    run = 0
    for _ in range(n_max):
        u = M.apply(u)
        s = u.max()
        if not s > 0:
            raise ValueError("M^n psi vanished identically")
        u = u / s
        g = u / psi
        g = g / g.max()
        out.append(g)
        if prev is not None:
            nz = (g > 0) | (prev > 0)
            change = np.abs(g - prev)[nz] / np.maximum(g, prev)[nz]
            run = run + 1 if change.max(initial=0.0) < _ITERATE_RTOL else 0
            if run >= _A4_RUN:
                return out, True
        prev = g
    return out, False


def fit_A4(M: KernelOperator, psi, K, nu, n_max: int = 500,
           iterates=None) -> tuple[float, A4Certificate]:
    """Fit ``d`` from ``ratio_n = nu(M^n psi/psi) / max_K (M^n psi/psi)``, ``n <= n_max``.

    Convergence means a relative change below ``1e-10`` for 5 consecutive
    ``n``; a strictly decreasing tail without convergence is a failure
    (``d -> 0``), anything else is inconclusive.
    """
    psi = as_vector(psi, "psi", n=M.n, positive=True)
    K = as_mask(K, M.n)
    nu = as_vector(nu, "nu", n=M.n, nonnegative=True)
    if n_max < 1:
        raise ValueError("n_max must be at least 1")
    if iterates is None:
        iterates = _psi_iterates(M, psi, n_max)
    gs, stable = iterates
    ratios = np.array([float(nu @ g) / g[K].max() for g in gs])
    diffs = np.abs(np.diff(ratios))
    small = diffs < _A4_RTOL * np.maximum(ratios[1:], 1e-300)
    converged = bool(stable) or (small.size >= _A4_RUN and bool(small[-_A4_RUN:].all()))
    tail = np.diff(ratios[-(_A4_RUN + 1):])
    if tail.size and np.all(np.abs(tail) <= _A4_RTOL * ratios[-1]):
        trend = "flat"
    elif tail.size and np.all(tail < 0):
        trend = "decreasing"
    elif tail.size and np.all(tail > 0):
        trend = "increasing"
    else:
        trend = "mixed"
    d = float(min(ratios.min(), 1.0))
    if converged:
        status = "pass" if d > 0 else "fail"
    else:
        status = "fail" if trend == "decreasing" else "inconclusive"
    cert = A4Certificate(status, converged, float(ratios[-1]), int(n_max), len(gs), trend, d)
    return d, cert


def check_witness(M: KernelOperator, w: AssumptionAWitness, horizon: int | None = None) -> dict:
    """Re-evaluate (A1)-(A4) directly; slacks are relative, PASS iff >= -1e-12."""
    V, psi, K = w.V, w.psi, w.K
    MV = M.apply(V)
    Mpsi = M.apply(psi)
    a1 = float(((w.alpha * V + w.theta * K * psi - MV) / V).min())
    a2 = float(((Mpsi - w.beta * psi) / psi).min())
    out = {"A1": {"slack": a1, "pass": a1 >= -1e-12},
           "A2": {"slack": a2, "pass": a2 >= -1e-12}}
    if w.is_complete:
        supp = np.flatnonzero(w.nu > 0)
        cols = M.columns(supp)
        ratio = cols[K] * psi[supp] / (w.nu[supp][None, :] * Mpsi[K][:, None])
        a3 = float(ratio.min() - w.c) / w.c
        horizon = horizon or (w.a4.n_used if w.a4 else 50)
        gs, _ = _psi_iterates(M, psi, horizon)
        a4 = min((float(w.nu @ g) - w.d * g[K].max()) / g[K].max() for g in gs)
        out["A3"] = {"slack": a3, "pass": a3 >= -1e-12}
        out["A4"] = {"slack": float(a4), "pass": a4 >= -1e-12, "horizon": len(gs)}
    out["pass"] = all(v["pass"] for v in out.values() if isinstance(v, dict))
    return out


def irreducible_constants(M: KernelOperator, psi, K) -> tuple[float, float]:
    """Closed-form constants for a finite irreducible ``K`` with uniform ``nu``.

    Returns ``(c0, 1/#K)`` with ``c0 = min_{x,y in K} psi(y) M[x,y] / M psi(x)``.
    """
    psi = as_vector(psi, "psi", n=M.n, positive=True)
    K = as_mask(K, M.n)
    idx = np.flatnonzero(K)
    Mpsi = M.apply(psi)
    block = M.columns(idx)[idx]
    c0 = float((block * psi[idx][None, :] / Mpsi[idx][:, None]).min())
    return c0, 1.0 / idx.size


# ---------------------------------------------------------------------------
# generator-level drift


@dataclass(frozen=True, eq=False)
class DriftCertificate:
    """Generator drift ``LV <= aV + zeta psi``, ``L psi >= b psi``, ``L phi <= xi phi``.

    ``varphi`` is comparable to ``psi``: ``psi / C_equiv <= varphi <= C_equiv psi``.
    """

    a: float
    b: float
    xi: float
    zeta: float
    C_equiv: float = 1.0
    R: float = 1.0
    tau: float = 1.0
    varphi: np.ndarray | None = None

    def __post_init__(self):
        if not self.a < self.b:
            raise ValueError(f"need a < b, got a={self.a}, b={self.b}")
        if self.zeta < 0:
            raise ValueError("zeta must be nonnegative")
        if self.C_equiv < 1:
            raise ValueError("C_equiv must be at least 1")
        check_positive(self.R, "R")
        check_positive(self.tau, "tau")

    @property
    def theta(self) -> float:
        raw = self.C_equiv**2 * self.zeta * math.exp(self.xi * self.tau) / (self.b - self.a)
        return max(raw, EPS_THETA)

    @property
    def R0(self) -> float:
        """Threshold ``theta / (e^{b tau} - e^{a tau})`` above which ``alpha < beta``."""
        return self.theta / (math.exp(self.b * self.tau) - math.exp(self.a * self.tau))

    @builtin_output
    def to_dict(self) -> dict:
        return {"a": self.a, "b": self.b, "xi": self.xi, "zeta": self.zeta,
                "C_equiv": self.C_equiv, "R": self.R, "tau": self.tau, "R0": self.R0}


def drift_to_A1A2(cert: DriftCertificate, V, psi) -> AssumptionAWitness:
    """Partial witness with ``K = {V <= R psi}`` from generator drift constants."""
    V = as_vector(V, "V", positive=True)
    psi = as_vector(psi, "psi", n=V.size, positive=True)
    theta = cert.theta
    alpha = math.exp(cert.a * cert.tau) + theta / cert.R
    beta = math.exp(cert.b * cert.tau)
    if cert.R <= cert.R0 or alpha >= beta:
        raise ValueError(f"R = {cert.R} does not exceed R0 = {cert.R0} (alpha >= beta)")
    K = V <= cert.R * psi
    if not K.any():
        raise ValueError("K = {V <= R psi} is empty")
    return AssumptionAWitness(cert.tau, alpha, beta, theta, K, V, psi,
                              floored_theta=theta == EPS_THETA)


def drift_witness_search(cert: DriftCertificate, V, psi,
                         factors=(1.01, 1.1, 1.5, 2.0, 4.0, 10.0, 100.0)) -> AssumptionAWitness:
    """Raise ``R`` above ``R0`` until :func:`drift_to_A1A2` succeeds."""
    candidates = [cert.R] + [f * cert.R0 for f in factors]
    last = None
    for R in candidates:
        if R <= 0:
            continue
        try:
            return drift_to_A1A2(replace(cert, R=R), V, psi)
        except ValueError as exc:
            last = exc
    raise ValueError(f"no R on the search grid gives a witness: {last}")


# ---------------------------------------------------------------------------
# witness search


@dataclass(frozen=True)
class WitnessStrategy:
    """Search settings for :func:`full_witness_search`.

    ``nu`` holds explicit reference measures tried in addition to the
    canonical families ``nu_families`` (any of ``"uniform"``, ``"psi"``,
    ``"doeblin"``).
    """

    max_candidates: int = 64
    nu_families: tuple = ("uniform", "psi", "doeblin")
    nu: tuple = ()
    a4_horizon: int = 500
    ledger_choices: dict = field(default_factory=dict)


@dataclass(frozen=True, eq=False)
class WitnessSearchResult:
    witness: AssumptionAWitness | None
    diagnosis: str
    candidates: int
    ledger: object = None

    @property
    def found(self) -> bool:
        return self.witness is not None


def _thresholds(ratio: np.ndarray, max_candidates: int) -> np.ndarray:
    levels = np.unique(ratio)
    if levels.size <= max_candidates:
        return levels
    grid = np.geomspace(levels[0], levels[-1], max_candidates)
    pick = np.unique(np.searchsorted(levels, grid * (1 - 1e-12)).clip(0, levels.size - 1))
    return np.unique(np.append(levels[pick], levels[-1]))


def _family_nu(name, K, psi, M, Mpsi, block):
    nu = np.zeros(K.size)
    if name == "uniform":
        nu[K] = 1.0
    elif name == "psi":
        nu[K] = psi[K]
    elif name == "doeblin":
        idx = np.flatnonzero(K)
        nu[idx] = (block * psi[idx][None, :] / Mpsi[idx][:, None]).min(axis=0)
    else:
        raise ValueError(f"unknown nu family {name!r}")
    total = nu.sum()
    return nu / total if total > 0 else None


def full_witness_search(M: KernelOperator, V, psi,
                        strategy: WitnessStrategy | None = None) -> WitnessSearchResult:
    """Search ``K = {V <= R psi}`` and reference measures for a witness.

    ``R`` runs over a geometric grid snapped to the distinct values of
    ``V / psi``. Among all valid witnesses the one with the largest certified
    rate ``sigma`` is returned (ties go to the smaller ``R``). Otherwise the
    diagnosis names the first failing condition of the candidate that got
    furthest.
    """
    from .constants import build_ledger

    strategy = strategy or WitnessStrategy()
    V = as_vector(V, "V", n=M.n, positive=True)
    psi = as_vector(psi, "psi", n=M.n, positive=True)
    MV = M.apply(V)
    Mpsi = M.apply(psi)
    beta = float((Mpsi / psi).min())
    if not beta > 0:
        return WitnessSearchResult(None, "A2 fails: beta = 0 (the kernel kills psi)", 0)
    explicit = [as_vector(nu, "nu", n=M.n, nonnegative=True) for nu in strategy.nu]
    explicit = [nu / nu.sum() for nu in explicit]
    explicit_cols = [M.columns(np.flatnonzero(nu > 0)) for nu in explicit]
    families = strategy.nu_families
    iterates = None
    ratio = V / psi
    best, best_key, best_ledger = None, None, None
    fail_stage, fail_msg = -1, "no candidate sets"
    count = 0
    for R in _thresholds(ratio, strategy.max_candidates):
        K = ratio <= R * (1 + 1e-12)
        count += 1
        alpha, theta = fit_A1(M, V, psi, K, MV=MV)
        if alpha >= beta:
            if fail_stage < 0:
                fail_stage, fail_msg = 0, (f"A1/A2 fails: alpha = {alpha:.6g} >= beta = "
                                           f"{beta:.6g} for every K")
            continue
        idx = np.flatnonzero(K)
        block = None
        if families:
            block = M.columns(idx)[idx]
        nus = []
        for name in families:
            nu = _family_nu(name, K, psi, M, Mpsi, block)
            if nu is not None:
                full = np.zeros((M.n, int((nu > 0).sum())))
                full[idx] = block[:, (nu > 0)[idx]]
                nus.append((nu, full))
        nus.extend((nu, cols) for nu, cols in zip(explicit, explicit_cols)
                   if not np.any(nu[~K] > 0))
        if not nus and fail_stage < 1:
            fail_stage, fail_msg = 1, "A3 fails: c = 0 (no reference measure supported on K)"
        for nu, full in nus:
            c = fit_A3(M, psi, K, nu, Mpsi=Mpsi, block=full)
            if not c > 0:
                if fail_stage < 1:
                    fail_stage, fail_msg = 1, "A3 fails: c = 0"
                continue
            if iterates is None:
                iterates = _psi_iterates(M, psi, strategy.a4_horizon)
            d, cert = fit_A4(M, psi, K, nu, strategy.a4_horizon, iterates=iterates)
            if cert.status != "pass":
                if fail_stage < 2:
                    fail_stage = 2
                    fail_msg = (f"A4 {cert.status}: ratio trend {cert.trend}, "
                                f"limit estimate {cert.limit_estimate:.3g}")
                continue
            w = AssumptionAWitness(M.tau, alpha, beta, theta, K, V, psi, c=c, d=d, nu=nu,
                                   a4=cert, floored_theta=theta == EPS_THETA,
                                   floored_alpha=not (~K).any() or alpha == _ALPHA_FLOOR * (MV / V).max())
            try:
                led = build_ledger(w, **strategy.ledger_choices)
            except (ValueError, OverflowError):
                continue
            key = led.log_sigma
            if best is None or key > best_key:
                best, best_key, best_ledger = w, key, led
    if best is None:
        return WitnessSearchResult(None, fail_msg, count)
    report = check_witness(M, best)
    best = replace(best, report=report)
    return WitnessSearchResult(best, "witness found", count, best_ledger)
