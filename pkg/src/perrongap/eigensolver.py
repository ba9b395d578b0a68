"""
Perron eigen-triplet ``(lambda, h, gamma)`` by normalized power iterations.

The right eigenfunction is the limit of ``M^k psi / nu(M^k psi / psi)`` and the
left eigenmeasure comes from the normalized left iterates started at
``nu / psi``. Both iterations renormalize every step and never form a power
of the kernel. Audits compare the evolution of initial measures with the
profile ``mu(h) gamma`` and with the certified rate of a ledger, and a dense
eigendecomposition gives an independent oracle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from ._validation import as_vector, builtin_output
from .measure import KernelOperator

__all__ = [
    "ConvergenceError", "EigenTriplet", "OracleResult", "AuditResult",
    "compute_h", "compute_lambda", "compute_gamma", "solve_triplet", "iteration_cap",
    "fit_decay_rate", "convergence_audit", "mass_normalized_audit", "self_consistency",
    "h_bounds_check", "oracle_eigen", "oracle_generator_eigen", "default_mu_set",
]

_EXTRA_AFTER_TOL = 50
_MAX_CAP = 1_000_000
_ROUND_OFF = 8 * np.finfo(float).eps


class ConvergenceError(RuntimeError):
    """An iteration hit its cap; ``increment`` is the last observed increment."""

    def __init__(self, message, increment=None, iterations=None):
        super().__init__(message)
        self.increment = increment
        self.iterations = iterations


def iteration_cap(ledger=None, tol: float = 1e-13) -> int:
    """``max(10 p ceil(log(1/tol) / -log(rho)), 10000)`` with a ledger, else 100000.

    The value is clamped at one million: for tiny certified rates the formula
    is astronomically large.
    """
    if ledger is None:
        return 100_000
    log_nlr = ledger.log_sigma + math.log(ledger.frak_p * ledger.tau)
    steps = math.log(1 / tol) * math.exp(-log_nlr) if log_nlr > -700 else math.inf
    cap = 10 * ledger.frak_p * math.ceil(steps) if math.isfinite(steps) else math.inf
    return int(min(max(cap, 10_000), _MAX_CAP))


class _Stopper:
    """Increment rule: stop once ``inc <= tol`` and the geometric tail is below ``tol``."""

    def __init__(self, tol):
        self.tol = tol
        self.prev = None
        self.extra = 0

    def __call__(self, inc: float, scale: float = 0.0) -> bool:
        prev, self.prev = self.prev, inc
        # increments at the round-off level of the current iterate carry no rate information
        if inc <= max(self.tol * 1e-3, _ROUND_OFF * scale):
            return True
        if inc > self.tol:
            return False
        self.extra += 1
        if prev is not None and prev > 0:
            q = inc / prev
            if q < 1 and inc * q / (1 - q) <= self.tol:
                return True
        return self.extra >= _EXTRA_AFTER_TOL


def _weights(psi, V):
    # psi / V^2 computed as (psi / V) / V to avoid overflow
    return (psi / V) / V


def compute_h(M: KernelOperator, psi, nu, tol: float = 1e-13, V=None,
              max_iter: int | None = None, history: list | None = None):
    """Right eigenfunction by ``h_{k+1} = M h_k / nu(M h_k / psi)``.

    Stops when both the ``B(V^2/psi)`` increment and the relative
    increment ``max |h_{k+1} - h_k| / h_{k+1}`` are below ``tol``. Returns
    ``(h, iterations)`` with ``nu(h / psi) = 1``. Increments are appended to
    ``history`` when given.
    """
    psi = as_vector(psi, "psi", n=M.n, positive=True)
    nu = as_vector(nu, "nu", n=M.n, nonnegative=True)
    V = psi if V is None else as_vector(V, "V", n=M.n, positive=True)
    weight = _weights(psi, V)
    max_iter = max_iter or 100_000
    eta = nu / psi
    h = psi / float(eta @ psi)
    stop = _Stopper(tol)
    inc = math.inf
    for it in range(1, max_iter + 1):
        g = M.apply(h)
        mass = float(eta @ g)
        if not mass > 0:
            raise ValueError("nu(M h / psi) vanished: nu does not see the mass of M h")
        g = g / mass
        # the relative increment keeps h accurate where V^2 / psi is large
        inc = max(float(np.max(np.abs(g - h) * weight)), float(np.max(np.abs(g - h) / g)))
        h = g
        if history is not None:
            history.append(inc)
        if stop(inc, float(np.max(h * weight))):
            return h, it
    raise ConvergenceError(f"h iteration did not converge in {max_iter} steps "
                           f"(last increment {inc:.3e})", inc, max_iter)


def compute_lambda(M: KernelOperator, psi, nu, h) -> float:
    """``lambda = log(nu(M h / psi)) / tau`` for ``h`` with ``nu(h / psi) = 1``."""
    psi = as_vector(psi, "psi", n=M.n, positive=True)
    mass = float(np.asarray(nu, dtype=float) @ (M.apply(h) / psi))
    if not mass > 0:
        raise ValueError("nonpositive mass nu(M h / psi)")
    return math.log(mass) / M.tau


def compute_gamma(M: KernelOperator, psi, nu, h, tol: float = 1e-13, V=None,
                  kappa: float = 1.0, max_iter: int | None = None,
                  history: list | None = None) -> np.ndarray:
    """Left eigenmeasure from the normalized left iterates of ``eta = nu / psi``.

    With ``w_k = eta M^k`` the probability ``pi_k = w_k psi / w_k(psi)`` is
    iterated until its ``M(1 + kappa V/psi)`` increment is below ``tol``;
    the result is rescaled so that ``gamma(h) = 1``.
    """
    psi = as_vector(psi, "psi", n=M.n, positive=True)
    nu = as_vector(nu, "nu", n=M.n, nonnegative=True)
    h = as_vector(h, "h", n=M.n, positive=True)
    V = psi if V is None else as_vector(V, "V", n=M.n, positive=True)
    weight = 1 + kappa * (V / psi)
    max_iter = max_iter or 100_000
    w = nu / psi
    pi = w * psi / float(w @ psi)
    stop = _Stopper(tol)
    inc = math.inf
    for _ in range(max_iter):
        w = M.lapply(w)
        total = float(w @ psi)
        if not total > 0:
            raise ValueError("the left iterate lost all mass")
        w = w / total
        new = w * psi
        inc = float(np.abs(new - pi) @ weight)
        pi = new
        if history is not None:
            history.append(inc)
        if stop(inc, float(pi @ weight)):
            return w / float(w @ h)
    raise ConvergenceError(f"gamma iteration did not converge in {max_iter} steps "
                           f"(last increment {inc:.3e})", inc, max_iter)


@dataclass(frozen=True, eq=False)
class EigenTriplet:
    """Eigen-triplet with ``gamma(h) = 1`` and ``max h / V = 1``.

    ``h_internal`` and ``gamma_internal`` keep the iteration normalization
    ``nu(h / psi) = 1``; ``scale`` is the factor ``max(h_internal / V)``.
    """

    lam: float
    h: np.ndarray
    gamma: np.ndarray
    tau: float
    V: np.ndarray
    psi: np.ndarray
    nu: np.ndarray
    h_internal: np.ndarray
    gamma_internal: np.ndarray
    scale: float
    iterations: dict = field(default_factory=dict)
    residuals: dict = field(default_factory=dict)

    @property
    def growth(self) -> float:
        """Per-step factor ``exp(lambda tau)``."""
        return math.exp(self.lam * self.tau)

    @builtin_output
    def to_dict(self) -> dict:
        return {
            "lambda": self.lam, "tau": self.tau, "growth": self.growth,
            "h": [float(v) for v in self.h], "gamma": [float(v) for v in self.gamma],
            "h_internal": [float(v) for v in self.h_internal],
            "gamma_internal": [float(v) for v in self.gamma_internal],
            "scale": self.scale, "iterations": dict(self.iterations),
            "residuals": dict(self.residuals),
        }


def _residuals(M, lam, h, gamma, V):
    g = math.exp(lam * M.tau)
    rh = float(np.max(np.abs(M.apply(h) - g * h) / V))
    rg = float(np.abs(M.lapply(gamma) - g * gamma) @ V)
    return {"right": rh, "left": rg}


def solve_triplet(M: KernelOperator, psi, nu=None, V=None, tol: float = 1e-13,
                  ledger=None, max_iter: int | None = None) -> EigenTriplet:
    """Compute ``(lambda, h, gamma)``; ``nu`` defaults to uniform and ``V`` to ``psi``.

    With a ledger the iteration cap and the weight ``kappa`` of the
    ``gamma`` stopping norm come from it.
    """
    psi = as_vector(psi, "psi", n=M.n, positive=True)
    V = psi if V is None else as_vector(V, "V", n=M.n, positive=True)
    nu = np.full(M.n, 1.0 / M.n) if nu is None else as_vector(nu, "nu", n=M.n, nonnegative=True)
    cap = max_iter or iteration_cap(ledger, tol)
    kappa = ledger.kappa if ledger is not None and ledger.kappa > 0 else 1.0
    h, it_h = compute_h(M, psi, nu, tol, V=V, max_iter=cap)
    lam = compute_lambda(M, psi, nu, h)
    gamma = compute_gamma(M, psi, nu, h, tol, V=V, kappa=kappa, max_iter=cap)
    scale = float(np.max(h / V))
    hp = h / scale
    gp = gamma * scale
    return EigenTriplet(lam, hp, gp, M.tau, V, psi, nu, h, gamma, scale,
                        {"h": it_h}, _residuals(M, lam, hp, gp, V))


# ---------------------------------------------------------------------------
# audits


def fit_decay_rate(times, errs, atol: float = 0.0) -> float:
    """Least-squares decay rate of ``log err`` over its informative window.

    The window keeps the entries above ``1e-11`` times the largest error (and
    above ``atol``, the round-off floor) and the fit uses the second half of
    it (the asymptotic regime). Errors that never exceed the floor give ``inf``.
    """
    times = np.asarray(times, dtype=float)
    errs = np.asarray(errs, dtype=float)
    top = errs.max(initial=0.0)
    if not top > atol:
        return math.inf
    keep = np.flatnonzero(errs > max(1e-11 * top, atol))
    last = keep[-1]
    if last == 0:
        # decayed below the window after one step
        return math.inf
    window = np.arange(0, last + 1)
    window = window[window.size // 2:]
    if window.size < 2:
        window = np.arange(max(last - 1, 0), last + 1)
    t, e = times[window], errs[window]
    if np.any(e <= 0):
        return math.inf
    slope = np.polyfit(t, np.log(e), 1)[0]
    return float(-slope)


def default_mu_set(n: int, seed: int = 0) -> np.ndarray:
    """All Diracs when ``n <= 100``; else 50 random Diracs plus the uniform measure."""
    if n <= 100:
        return np.eye(n)
    rng = np.random.default_rng(seed)
    idx = np.sort(rng.choice(n, size=50, replace=False))
    mus = np.zeros((51, n))
    mus[np.arange(50), idx] = 1.0
    mus[50] = 1.0 / n
    return mus


@dataclass(frozen=True, eq=False)
class AuditResult:
    """Per-measure error curves, fitted rates and the PASS verdict."""

    kind: str
    steps: np.ndarray
    errs: np.ndarray
    bounds: np.ndarray
    rates: np.ndarray
    sigma: float | None
    passed: bool
    status: str
    details: dict = field(default_factory=dict)

    @property
    def min_rate(self) -> float:
        return float(self.rates.min())

    def table(self) -> list[tuple]:
        """Rows ``(k, err, bound, pass)`` for the worst measure at each step."""
        with np.errstate(divide="ignore", invalid="ignore"):
            score = np.where(np.isfinite(self.bounds), self.errs / self.bounds, self.errs)
        worst = np.argmax(np.nan_to_num(score, nan=-np.inf), axis=0)
        rows = []
        for j, k in enumerate(self.steps):
            i = worst[j]
            err, bound = float(self.errs[i, j]), float(self.bounds[i, j])
            rows.append((int(k), err, bound, bool(not err > bound)))
        return rows

    @builtin_output
    def to_dict(self) -> dict:
        return {"kind": self.kind, "sigma": self.sigma, "passed": self.passed,
                "status": self.status, "min_rate": self.min_rate,
                "rates": [float(r) for r in self.rates], "details": self.details}


def _as_mu_set(mu_set, n, seed):
    if mu_set is None:
        return default_mu_set(n, seed)
    mus = np.atleast_2d(np.asarray(mu_set, dtype=float))
    if mus.shape[1] != n or np.any(mus < 0) or np.isnan(mus).any():
        raise ValueError("mu_set must hold nonnegative measures of the state-space size")
    return mus


def convergence_audit(M: KernelOperator, psi, triplet: EigenTriplet, ledger=None,
                      mu_set=None, k_max: int = 60, seed: int = 0) -> AuditResult:
    """Audit ``err_k = ||exp(-lambda k tau) mu M^k - mu(h) gamma||_{M(V)}``.

    The bound at step ``k`` is the certificate

    ``C'_2 rho^floor(k/p) (mu(V)/mu(psi) + Theta) exp(-lambda k tau) mu M^k psi
    (1 + (1 + kappa) gamma(V) ||h||_{B(psi + kappa V)}) / kappa``

    with the constants of ``ledger`` (built for the same ``psi``). PASS iff
    every fitted rate is at least ``sigma - 1e-6`` and the bound holds for
    ``k >= p``. Without a ledger the verdict only asks for a positive rate
    and the status reads "no certified gap".
    """
    psi = as_vector(psi, "psi", n=M.n, positive=True)
    V, h, gamma = triplet.V, triplet.h, triplet.gamma
    mus = _as_mu_set(mu_set, M.n, seed)
    g = triplet.growth
    target = (mus @ h)[:, None] * gamma[None, :]
    steps = np.arange(1, k_max + 1)
    errs = np.empty((mus.shape[0], k_max))
    mass = np.empty_like(errs)
    rows = mus.copy()
    for j in range(k_max):
        rows = M.lapply(rows) / g
        errs[:, j] = np.abs(rows - target) @ V
        mass[:, j] = rows @ psi
    floor = 1e-12 * np.maximum(mus @ V, (mus @ h) * float(gamma @ V))
    rates = np.array([fit_decay_rate(steps * M.tau, e, a) for e, a in zip(errs, floor)])
    bounds = np.full_like(errs, np.inf)
    details = {"k_max": k_max, "n_measures": int(mus.shape[0])}
    if ledger is None:
        passed = bool(np.all(rates > 0))
        return AuditResult("convergence", steps, errs, bounds, rates, None, passed,
                           "no certified gap", details)
    kappa = ledger.kappa
    log_rho = math.log1p(-ledger.one_minus_rho) if ledger.log_one_minus_rho > -700 \
        else -ledger.one_minus_rho
    h_norm = float(np.max(h / (psi + kappa * V)))
    gamma_term = math.log1p((1 + kappa) * float(gamma @ V) * h_norm)
    ratio = (mus @ V) / (mus @ psi)
    with np.errstate(divide="ignore"):
        log_b = (ledger.proof_constants["log_C2prime"] - ledger.log_kappa + gamma_term
                 + np.log(ratio + ledger.Theta)[:, None]
                 + (steps // ledger.frak_p)[None, :] * log_rho + np.log(mass))
    bounds = np.exp(np.minimum(log_b, 700.0))
    check = steps >= ledger.p
    bound_ok = bool(np.all((errs <= bounds * (1 + 1e-12))[:, check]))
    rate_ok = bool(np.all(rates >= ledger.sigma - 1e-6))
    details.update({"bound_ok": bound_ok, "rate_ok": rate_ok, "p": ledger.p})
    passed = bound_ok and rate_ok
    return AuditResult("convergence", steps, errs, bounds, rates, ledger.sigma, passed,
                       "pass" if passed else "fail", details)


def mass_normalized_audit(M: KernelOperator, triplet: EigenTriplet, mu_set=None,
                          k_max: int = 60, ledger=None, seed: int = 0) -> AuditResult:
    """Total-variation distance of ``mu M^k / mu M^k 1`` to ``pi = gamma / gamma(1)``.

    PASS iff every fitted rate is at least ``sigma - 1e-6`` (positive when no
    ledger is given).
    """
    V = triplet.V
    if not V.min() > 0:
        raise ValueError("V must be bounded below by a positive constant")
    pi = triplet.gamma / triplet.gamma.sum()
    mus = _as_mu_set(mu_set, M.n, seed)
    steps = np.arange(1, k_max + 1)
    errs = np.empty((mus.shape[0], k_max))
    rows = mus / mus.sum(axis=1, keepdims=True)
    for j in range(k_max):
        rows = M.lapply(rows)
        total = rows.sum(axis=1, keepdims=True)
        if np.any(total <= 0):
            raise ValueError("an evolved measure lost all mass")
        rows = rows / total
        errs[:, j] = np.abs(rows - pi[None, :]).sum(axis=1)
    rates = np.array([fit_decay_rate(steps * M.tau, e, 1e-12) for e in errs])
    bounds = np.full_like(errs, np.inf)
    sigma = None if ledger is None else ledger.sigma
    floor = 0.0 if sigma is None else sigma - 1e-6
    passed = bool(np.all(rates > floor)) if sigma is None else bool(np.all(rates >= floor))
    status = ("pass" if passed else "fail") if sigma is not None else "no certified gap"
    return AuditResult("mass_normalized", steps, errs, bounds, rates, sigma, passed, status,
                       {"k_max": k_max, "pi": [float(v) for v in pi]})


def self_consistency(M: KernelOperator, V, triplet: EigenTriplet, horizon: int = 50,
                     tol: float = 1e-9):
    """Re-run the witness search with ``psi := h``.

    Besides the canonical families (skipped for implicit kernels) the search
    tries the transported reference
    measure ``nu' = nu(. h/psi) / nu(h/psi)`` built from the iteration measure
    ``nu`` of the triplet. Checks that the new ``beta'`` equals ``exp(lambda tau)`` and that
    ``sup_K M^n h / h = exp(lambda n tau)`` for ``n <= horizon``, both within
    ``tol`` relative. Returns the witness (its ``report`` carries the checks);
    raises ``RuntimeError`` when the triplet is numerically broken.
    """
    from .assumptions import WitnessStrategy, full_witness_search

    V = as_vector(V, "V", n=M.n, positive=True)
    h = triplet.h
    nu_t = triplet.nu * triplet.h_internal / triplet.psi
    # on implicit kernels the canonical families need a column block per threshold;
    # the transported measure alone is the natural candidate there
    families = () if getattr(M, "is_implicit", False) else WitnessStrategy.nu_families
    res = full_witness_search(M, V, h, WitnessStrategy(nu_families=families,
                                                       nu=(nu_t / nu_t.sum(),),
                                                       a4_horizon=horizon))
    if not res.found:
        raise RuntimeError(f"no witness for (V, h): {res.diagnosis}")
    w = res.witness
    g = triplet.growth
    beta_err = abs(w.beta - g) / g
    u = h.copy()
    sup_err = 0.0
    for n in range(1, horizon + 1):
        u = M.apply(u) / g
        sup_err = max(sup_err, abs(float((u / h)[w.K].max()) - 1.0))
    check = {"beta_prime": w.beta, "growth": g, "beta_rel_err": beta_err,
             "d_prime": w.d, "sup_ratio_rel_err": sup_err, "horizon": horizon,
             "pass": bool(beta_err <= tol and sup_err <= tol and abs(w.d - 1) <= tol)}
    report = dict(w.report)
    report["self_consistency"] = check
    object.__setattr__(w, "report", report)
    if not check["pass"]:
        raise RuntimeError(f"self-consistency failed: {check}")
    return w


@builtin_output
def h_bounds_check(triplet: EigenTriplet, ledger, rtol: float = 1e-9) -> dict:
    """Check ``c1 d2 (psi/V)^q psi <= h <= V`` in log-space (``psi`` of the ledger's witness)."""
    psi, V, h = triplet.psi, triplet.V, triplet.h
    log_lower = (ledger.log_c1_lower + math.log(ledger.d2)
                 + ledger.q * np.log(psi / V) + np.log(psi))
    lower_slack = float(np.min(np.log(h) - log_lower))
    upper_slack = float(np.min((V - h) / V))
    return {"lower_log_slack": lower_slack, "upper_rel_slack": upper_slack,
            "pass": bool(lower_slack >= -rtol and upper_slack >= -rtol)}


# ---------------------------------------------------------------------------
# dense oracle


@dataclass(frozen=True, eq=False)
class OracleResult:
    """Dense ground truth: ``lambda_star`` is the per-step Perron root."""

    lambda_star: float
    rate: float
    h_star: np.ndarray | None
    gamma_star: np.ndarray | None
    subdominant: float
    gap_ratio: float
    gapless: bool
    simple: bool
    message: str


def _perron_vector(vec):
    v = np.real_if_close(vec, tol=1e6)
    if np.iscomplexobj(v):
        return None
    v = np.asarray(v, dtype=float)
    v = v * np.sign(v[np.argmax(np.abs(v))])
    scale = np.abs(v).max()
    v = v / scale
    v[np.abs(v) < 1e-13] = 0.0
    return v if np.all(v >= 0) else None


def _oracle_from(values, left, right, per_step, tau):
    mapped = per_step(values)
    order = np.argsort(-np.abs(mapped))
    vals = mapped[order]
    top = vals[0]
    msgs = []
    real = abs(top.imag) <= 1e-10 * max(abs(top), 1e-300)
    if not real:
        msgs.append("complex dominant eigenvalue")
    second = float(np.abs(vals[1])) if vals.size > 1 else 0.0
    lam = float(top.real)
    simple = vals.size == 1 or second < abs(lam) * (1 - 1e-10)
    if not simple:
        msgs.append("dominant eigenvalue not simple")
    h = _perron_vector(right[:, order[0]])
    g = _perron_vector(left[:, order[0]])
    if h is None or g is None:
        msgs.append("no nonnegative Perron pair")
    gap_ratio = second / abs(lam) if lam != 0 else math.nan
    gapless = not simple or not real
    rate = math.log(lam) / tau if lam > 0 else math.nan
    return OracleResult(lam, rate, h, g, second, gap_ratio, gapless, simple,
                        "; ".join(msgs) or "simple positive Perron pair")


def oracle_eigen(M: KernelOperator) -> OracleResult:
    """Full dense eigendecomposition of the kernel (``n <= 3000``)."""
    if M.n > 3000:
        raise ValueError("the dense oracle is limited to n <= 3000")
    A = M.dense()
    values, left, right = scipy.linalg.eig(A, left=True, right=True)
    return _oracle_from(values, left, right, lambda v: v, M.tau)


def oracle_generator_eigen(L, tau: float) -> OracleResult:
    """Oracle from the eigendecomposition of a generator; eigenvalues mapped to ``exp(tau s)``."""
    A = L.dense() if hasattr(L, "dense") else np.asarray(L, dtype=float)
    values, left, right = scipy.linalg.eig(A, left=True, right=True)
    return _oracle_from(values, left, right, lambda v: np.exp(tau * v), tau)
