"""
Application front-ends: an absorbed birth-death chain and the
growth-fragmentation equation.

Each builder returns a generator matrix on a finite truncation together with
the canonical weights ``(V, psi)`` and the closed-form drift constants, ready
for the witness search, the ledger and the eigensolver.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.optimize

from .assumptions import (AssumptionAWitness, DriftCertificate, check_witness, drift_witness_search, fit_A3, fit_A4,
                          full_witness_search)
from .eigensolver import fit_decay_rate, mass_normalized_audit, solve_triplet
from .measure import GeneratorMatrix, KernelOperator, matrix_exp

__all__ = [
    "ConditionHError", "BirthDeathModel", "bd_build", "bd_qsd",
    "GrowthFragModel", "gf_build", "gf_drift_constants", "gf_small_set_constants",
    "gf_witness", "gf_evolve_audit", "duhamel_picard", "generator_evolve",
]


class ConditionHError(ValueError):
    """The birth-death parameters violate ``Delta > 0``."""


# ---------------------------------------------------------------------------
# birth-death chain absorbed at 0


@dataclass(frozen=True)
class BirthDeathModel:
    """Rates ``b, d`` for ``n >= 2``, ``b1, d1`` at ``n = 1``; truncation level ``N``."""

    b: float
    d: float
    b1: float
    d1: float
    N: int = 200

    def __post_init__(self):
        for name in ("b", "d", "b1", "d1"):
            if not getattr(self, name) > 0:
                raise ValueError(f"rate {name} must be positive")
        if int(self.N) < 3:
            raise ValueError("truncation level N must be at least 3")

    @property
    def Delta(self) -> float:
        b, d = self.b, self.d
        return (math.sqrt(b) - math.sqrt(d)) ** 2 + self.b1 * (math.sqrt(d / b) - 1) - self.d1

    @property
    def satisfies_H(self) -> bool:
        """``Delta > 0`` beyond the rounding error of its evaluation."""
        b, d = self.b, self.d
        scale = (math.sqrt(b) + math.sqrt(d)) ** 2 + self.b1 * (math.sqrt(d / b) + 1) + self.d1
        return self.Delta > 64 * np.finfo(float).eps * scale

    @property
    def eta(self) -> float:
        """Midpoint of the admissible range ``(max(0, sqrt(d/b) - Delta/b1), sqrt(d/b))``.

        This is ``sqrt(d/b) - Delta / (2 b1)`` whenever that value is positive.
        """
        u = math.sqrt(self.d / self.b)
        lo = max(u - self.Delta / self.b1, 0.0)
        return (lo + u) / 2

    def scaled(self, s: float) -> "BirthDeathModel":
        """All four rates multiplied by ``s`` (a deterministic time change)."""
        return replace(self, b=s * self.b, d=s * self.d, b1=s * self.b1, d1=s * self.d1)


def _bd_lambda(model: BirthDeathModel, u: float, first: bool = False) -> float:
    if first:
        return model.b1 * (u - 1) - model.d1
    return model.b * (u - 1) + model.d * (1 / u - 1)


def bd_build(model: BirthDeathModel, allow_invalid: bool = False):
    """Sub-Markov generator on ``{1..N}`` with ``V = sqrt(d/b)^n`` and ``psi = eta^n``.

    Absorption at 0 is dropped from the matrix and births at ``N`` are
    suppressed. Returns ``(L, V, psi, DriftCertificate)``; the certificate is
    ``None`` when ``Delta <= 0`` and ``allow_invalid`` is set.
    """
    Delta = model.Delta
    if not model.satisfies_H:
        msg = f"(H) fails: Delta = {Delta:.6g} <= 0"
        if not allow_invalid:
            raise ConditionHError(msg)
        warnings.warn(msg + "; model built for exploration only", stacklevel=2)
    N = int(model.N)
    n = np.arange(1, N + 1)
    births = np.full(N, model.b)
    deaths = np.full(N, model.d)
    births[0], deaths[0] = model.b1, model.d1
    births[-1] = 0.0
    L = np.zeros((N, N))
    L[np.arange(N - 1), np.arange(1, N)] = births[:-1]
    L[np.arange(1, N), np.arange(N - 1)] = deaths[1:]
    L[np.arange(N), np.arange(N)] = -(births + deaths)
    u = math.sqrt(model.d / model.b)
    with np.errstate(over="ignore"):
        V = u ** n.astype(float)
    if not np.all(np.isfinite(V)):
        raise ValueError(f"V = {u:.3g}^n overflows at N = {N}; lower N")
    if not model.satisfies_H:
        return GeneratorMatrix(L, labels=list(n)), V, V.copy(), None
    eta = model.eta
    psi = eta ** n.astype(float)
    a = -(math.sqrt(model.d) - math.sqrt(model.b)) ** 2
    zeta = Delta * V[0] / psi[0]
    lam_eta, lam_eta1 = _bd_lambda(model, eta), _bd_lambda(model, eta, first=True)
    cert = DriftCertificate(a=a, b=min(lam_eta, lam_eta1), xi=max(lam_eta, lam_eta1),
                            zeta=zeta, C_equiv=1.0, varphi=psi)
    return GeneratorMatrix(L, labels=list(n)), V, psi, cert


def _tv_padded(p, q):
    m = max(p.size, q.size)
    return 0.5 * float(np.abs(np.pad(p, (0, m - p.size)) - np.pad(q, (0, m - q.size))).sum())


def _bd_solve(model, tau, tol):
    L, V, psi, cert = bd_build(model)
    M = matrix_exp(L, tau)
    res = full_witness_search(M, V, psi)
    nu = res.witness.nu if res.found else None
    tri = solve_triplet(M, psi, nu=nu, V=V, tol=tol)
    return M, V, psi, cert, res, tri


def bd_qsd(model: BirthDeathModel, tau: float = 1.0, tail_tol: float = 1e-6,
           N_cap: int = 800, k_max: int = 60, mu_set=None, tol: float = 1e-13) -> dict:
    """Quasi-stationary distribution of the truncated chain.

    ``N`` is doubled (up to ``N_cap``) until the QSD moves by less than
    ``tail_tol`` in total variation between ``N`` and ``2N``. Returns the
    QSD ``pi = gamma / gamma(1)``, the survival decay rate ``lambda0 = -lambda``,
    ``h``, the witness search result, its ledger and the mass-normalized
    audit of the conditional laws.
    """
    if not model.satisfies_H:
        raise ConditionHError(f"(H) fails: Delta = {model.Delta:.6g} <= 0")
    N = int(model.N)
    current = _bd_solve(model, tau, tol)
    while True:
        if 2 * N > N_cap:
            tail_tv, lam_change, converged = math.nan, math.nan, False
            break
        finer = _bd_solve(replace(model, N=2 * N), tau, tol)
        p = current[5].gamma / current[5].gamma.sum()
        q = finer[5].gamma / finer[5].gamma.sum()
        tail_tv = _tv_padded(p, q)
        lam_change = abs(current[5].lam - finer[5].lam)
        if tail_tv <= tail_tol:
            converged = True
            break
        N, current = 2 * N, finer
    M, V, psi, cert, res, tri = current
    pi = tri.gamma / tri.gamma.sum()
    audit = mass_normalized_audit(M, tri, mu_set=mu_set, k_max=k_max, ledger=res.ledger)
    return {"N": N, "pi": pi, "lambda0": -tri.lam, "h": tri.h, "triplet": tri,
            "tail_tv": tail_tv, "lambda_change": lam_change, "truncation_converged": converged,
            "witness": res.witness, "diagnosis": res.diagnosis, "ledger": res.ledger,
            "drift": cert, "kernel": M, "V": V, "psi": psi, "conv_table": audit}


# ---------------------------------------------------------------------------
# growth-fragmentation


def _division_rate(spec):
    kind = spec.get("kind", "power")
    if kind == "power":
        beta0, expo = float(spec.get("beta0", 1.0)), float(spec.get("exponent", 1.0))
        if not beta0 > 0 or expo < 0:
            raise ValueError("power-law division rate needs beta0 > 0 and exponent >= 0")
        return (lambda x: beta0 * np.power(np.asarray(x, dtype=float), expo),
                math.inf if expo > 0 else beta0)
    if kind == "table":
        xs = np.asarray(spec["x"], dtype=float)
        bs = np.asarray(spec["B"], dtype=float)
        if np.any(np.diff(xs) <= 0) or np.any(np.diff(bs) < 0) or np.any(bs < 0):
            raise ValueError("tabulated division rate must be nonnegative and increasing")
        return (lambda x: np.interp(np.asarray(x, dtype=float), xs, bs), float(bs[-1]))
    raise ValueError(f"unknown division-rate kind {kind!r}")


@dataclass(frozen=True, eq=False)
class GrowthFragModel:
    """Division rate, fragmentation kernel, weight exponent and grid.

    ``B_spec`` is ``{"kind": "power", "beta0", "exponent"}`` or
    ``{"kind": "table", "x", "B"}``. The kernel is a list of atoms
    ``(z, w)`` plus an optional uniform part ``(z0, eps, c0)`` of total mass
    ``c0`` on ``[z0 - eps, z0]``.
    """

    B_spec: dict = field(default_factory=lambda: {"kind": "power", "beta0": 1.0, "exponent": 1.0})
    atoms: tuple = ((0.5, 2.0),)
    uniform: tuple | None = None
    k_weight: float = 2.0
    x_max: float = 30.0
    n_cells: int = 3000
    scheme_dt: float | None = None
    x0_fraction: float = 0.1
    quad_points: int = 16

    def __post_init__(self):
        if not self.k_weight > 1:
            raise ValueError("k_weight must exceed 1")
        if not (self.x_max > 0 and int(self.n_cells) >= 10):
            raise ValueError("grid needs x_max > 0 and at least 10 cells")
        for z, w in self.atoms:
            if not (0 < z < 1 and w > 0):
                raise ValueError("atoms need z in (0, 1) and positive weight")
        if self.uniform is not None:
            z0, eps, c0 = self.uniform
            if not (0 < eps <= z0 < 1 and c0 > 0):
                raise ValueError("uniform part needs 0 < eps <= z0 < 1 and c0 > 0")
        if not self.atoms and self.uniform is None:
            raise ValueError("the fragmentation kernel is empty")
        if abs(self.moment(1.0) - 1) > 1e-12:
            raise ValueError(f"mass conservation fails: first moment = {self.moment(1.0)!r}")
        if not self.moment(0.0) > 1:
            raise ValueError("the mean number of fragments must exceed 1")
        Bg = self.B(self.grid)
        if np.any(np.diff(Bg) < 0):
            raise ValueError("B must be nondecreasing on the grid")
        if self.scheme_dt is not None and self.scheme_dt > self.dx:
            raise ValueError("scheme_dt violates the CFL condition dt <= dx")

    @property
    def grid(self) -> np.ndarray:
        return np.linspace(0.0, self.x_max, int(self.n_cells))

    @property
    def dx(self) -> float:
        return self.x_max / (int(self.n_cells) - 1)

    def B(self, x):
        return _division_rate(self.B_spec)[0](x)

    @property
    def B_limit(self) -> float:
        return _division_rate(self.B_spec)[1]

    def moment(self, r: float) -> float:
        """``int z^r wp(dz)``."""
        total = sum(w * z**r for z, w in self.atoms)
        if self.uniform is not None:
            z0, eps, c0 = self.uniform
            total += c0 / eps * (z0 ** (r + 1) - (z0 - eps) ** (r + 1)) / (r + 1)
        return float(total)

    def fragment_atoms(self) -> list[tuple[float, float]]:
        """Atoms used by the scheme: the point masses plus midpoint sub-atoms of the uniform part."""
        out = [(float(z), float(w)) for z, w in self.atoms]
        if self.uniform is not None:
            z0, eps, c0 = self.uniform
            m = self.quad_points
            mids = z0 - eps + (np.arange(m) + 0.5) * eps / m
            out.extend((float(z), c0 / m) for z in mids)
        return out

    def lower_bound_record(self) -> tuple[float, float, float]:
        """``(z0, eps, c0)`` of the lower bound on the kernel."""
        if self.uniform is not None:
            return tuple(float(v) for v in self.uniform)
        z, w = max(self.atoms, key=lambda a: a[1])
        return float(z), 0.0, float(w)

    def with_cells(self, n_cells: int) -> "GrowthFragModel":
        return replace(self, n_cells=int(n_cells))


def _interp_into(L, rows, pos, weight):
    """Add ``weight * f(pos)`` by linear interpolation on a unit-spaced grid."""
    n = L.shape[1]
    j = np.clip(np.floor(pos).astype(int), 0, n - 1)
    frac = pos - j
    j1 = np.minimum(j + 1, n - 1)
    np.add.at(L, (rows, j), weight * (1 - frac))
    np.add.at(L, (rows, j1), weight * frac)


def _gf_generator(model: GrowthFragModel, x: np.ndarray) -> np.ndarray:
    n = x.size
    dx = x[1] - x[0]
    L = np.zeros((n, n))
    idx = np.arange(n - 1)
    # upwind transport toward larger sizes; the last node is a wall
    L[idx, idx + 1] += 1 / dx
    L[idx, idx] -= 1 / dx
    Bx = model.B(x)
    rows = np.arange(n)
    for z, w in model.fragment_atoms():
        _interp_into(L, rows, z * x / dx, w * Bx)
    L[rows, rows] -= Bx
    return L


def gf_drift_constants(model: GrowthFragModel) -> dict:
    """Closed-form drift constants: ``a``, ``x1``, ``zeta``, ``b = 0``, ``xi``.

    ``x1`` is the threshold beyond which
    ``((wp_k - 1) + (wp_0 - 1) x^-k) B(x) + k / x <= a``, located by a scan
    and refined by root finding.
    """
    k = model.k_weight
    p0, pk, phalf = model.moment(0.0), model.moment(k), model.moment(0.5)
    lim = model.B_limit
    l = -math.inf if math.isinf(lim) else (pk - 1) * lim
    a = max(l / 2, -1.0)

    def g(xv):
        return ((pk - 1) + (p0 - 1) * xv ** (-k)) * float(model.B(xv)) + k / xv - a

    xs = np.geomspace(1e-6, max(1e6, 100 * model.x_max), 20001)
    vals = np.array([g(v) for v in xs])
    above = np.flatnonzero(vals > 0)
    if above.size == 0:
        x1 = float(xs[0])
    elif above[-1] == xs.size - 1:
        raise ValueError("drift threshold x1 not found: the V-drift never closes")
    else:
        i = above[-1]
        x1 = float(scipy.optimize.brentq(g, xs[i], xs[i + 1], xtol=1e-15, rtol=1e-15))
    zeta = 2 * (k * x1 ** (k - 1) + (p0 - 1) * float(model.B(x1)) - a)
    xi = 2 * (1 + (p0 - 1) * float(model.B(((p0 - 1) / (phalf - 1)) ** 2)))
    return {"a": a, "l": l, "x1": x1, "zeta": zeta, "b": 0.0, "xi": xi, "C_equiv": 2.0}


def gf_small_set_constants(model: GrowthFragModel, n_level: int = 0, kernel=None) -> dict:
    """Small-set constants ``t0, t1, tau, y_n``, the measure ``nu`` and the lower bound.

    ``x0`` is the smallest grid point with ``B >= x0_fraction * B(x_max / 2)``.
    When ``kernel`` (the skeleton at the returned ``tau``) is given, the
    minorization ``M[x, y] >= lower_bound * nu(y)`` is checked for grid
    points ``x <= y_n``.
    """
    z0, eps, c0 = model.lower_bound_record()
    x = model.grid
    Bg = model.B(x)
    x0 = float(x[np.flatnonzero(Bg >= model.x0_fraction * float(model.B(model.x_max / 2)))[0]])
    B_low = float(model.B(x0))
    t0 = (1 + z0 + (1 + eps) * x0) / (1 - z0) + 0.5
    t1 = (1 - z0) / (2 * z0)
    tau = t0 + t1
    y0 = 1 + x0
    y_n = ((1 + z0) / (2 * z0)) ** n_level + x0
    lo = z0 * (y0 + tau)
    hi = lo + 1
    if hi > model.x_max:
        raise ValueError(f"support of nu [{lo:.4g}, {hi:.4g}] exceeds the grid")
    supp = (x >= lo - 1e-12) & (x <= hi + 1e-12)
    nu = supp / supp.sum()
    with np.errstate(under="ignore"):
        log_lb = (-tau * float(model.B(y_n + tau)) + (n_level + 1) * math.log(c0 * B_low)
                  - math.log(1 - z0) + n_level * math.log(t1) - math.lgamma(n_level + 1)) \
            if B_low > 0 else -math.inf
    out = {"z0": z0, "eps": eps, "c0": c0, "x0": x0, "B_low": B_low, "t0": t0, "t1": t1,
           "tau": tau, "y_n": y_n, "nu_support": (lo, hi), "nu": nu,
           "log_lower_bound": log_lb, "lower_bound": math.exp(log_lb) if log_lb > -745 else 0.0,
           "degenerate": not B_low > 0}
    if kernel is not None:
        cols = np.flatnonzero(supp)
        rows = x <= y_n + 1e-12
        block = kernel.columns(cols)[rows]
        with np.errstate(divide="ignore"):
            slack = np.log(block) - (log_lb + np.log(nu[cols]))[None, :]
        out["minorization_check"] = {"min_log_slack": float(slack.min()),
                                     "pass": bool(slack.min() >= 0)}
    return out


def gf_build(model: GrowthFragModel):
    """Discrete dual generator on the grid with ``V = 1 + x^k``, ``psi = (1 + x)/2``.

    Returns ``(L, V, psi, varphi, DriftCertificate)``; ``varphi = 1 - sqrt(x) + x``
    and the certificate's ``tau`` is the small-set time.
    """
    x = model.grid
    L = _gf_generator(model, x)
    V = 1 + x ** model.k_weight
    psi = (1 + x) / 2
    varphi = 1 - np.sqrt(x) + x
    dc = gf_drift_constants(model)
    tau = gf_small_set_constants(model)["tau"]
    cert = DriftCertificate(a=dc["a"], b=dc["b"], xi=dc["xi"], zeta=dc["zeta"],
                            C_equiv=dc["C_equiv"], R=1.0, tau=tau, varphi=varphi)
    return GeneratorMatrix(L, labels=[float(v) for v in x]), V, psi, varphi, cert


def gf_witness(model: GrowthFragModel, built=None, kernel=None, a4_horizon: int = 200) -> dict:
    """Witness from the drift constants plus the small-set measure.

    ``(alpha, beta, theta, K)`` come from the drift certificate, ``c`` and ``d``
    are fitted on the skeleton kernel with the small-set ``nu``. Returns the
    witness (or ``None``), the kernel and the intermediate records.
    """
    L, V, psi, varphi, cert = built or gf_build(model)
    M = kernel or matrix_exp(L, cert.tau)
    partial = drift_witness_search(cert, V, psi)
    ss = gf_small_set_constants(model)
    nu = ss["nu"]
    K = partial.K
    out = {"kernel": M, "drift": cert, "partial": partial, "small_set": ss, "V": V, "psi": psi}
    if np.any(nu[~K] > 0):
        out.update(witness=None, diagnosis="A3 fails: nu not supported on K")
        return out
    c = fit_A3(M, psi, K, nu)
    if not c > 0:
        out.update(witness=None, diagnosis="A3 fails: c = 0")
        return out
    d, a4 = fit_A4(M, psi, K, nu, a4_horizon)
    if a4.status != "pass":
        out.update(witness=None, diagnosis=f"A4 {a4.status}")
        return out
    w = AssumptionAWitness(partial.tau, partial.alpha, partial.beta, partial.theta, K, V, psi,
                           c=min(c, 1.0), d=d, nu=nu, a4=a4, floored_theta=partial.floored_theta)
    report = check_witness(M, w)
    w = replace(w, report=report)
    out.update(witness=w if report["pass"] else None,
               diagnosis="witness found" if report["pass"] else f"witness check failed: {report}")
    return out


def gf_evolve_audit(model: GrowthFragModel, kernel: KernelOperator, triplet, u0,
                    k_max: int = 20, mono_tol: float = 1e-8) -> dict:
    """Evolve ``u0`` with the skeleton and audit the convergence and the monotonicity.

    Records ``||exp(-lambda k tau) u0 M^k - u0(h) gamma||_{M(V)}`` and its fitted
    rate, the growth rate of the total mass, and the monotonicity of
    ``M_{k tau} psi`` in ``k`` and in ``x`` (violations relative to the
    largest value). The along-fragment check ``M psi(z x) <= M psi(x)`` at the
    kernel atoms is reported only.
    """
    u0 = np.atleast_2d(np.asarray(u0, dtype=float))
    V, h, gamma, psi = triplet.V, triplet.h, triplet.gamma, triplet.psi
    # the kernel may be a finer time step than the triplet's skeleton
    g = math.exp(triplet.lam * kernel.tau)
    target = (u0 @ h)[:, None] * gamma[None, :]
    errs = np.empty((u0.shape[0], k_max))
    mass = np.empty((u0.shape[0], k_max))
    rows = u0.copy()
    for j in range(k_max):
        rows = kernel.lapply(rows)
        mass[:, j] = rows.sum(axis=1)
        errs[:, j] = np.abs(rows / g ** (j + 1) - target) @ V
    steps = np.arange(1, k_max + 1)
    floor = 1e-12 * np.maximum(u0 @ V, (u0 @ h) * float(gamma @ V))
    rates = np.array([fit_decay_rate(steps * kernel.tau, e, a) for e, a in zip(errs, floor)])
    mass_rate = np.array([np.polyfit(steps[k_max // 2:] * kernel.tau,
                                     np.log(m[k_max // 2:]), 1)[0] for m in mass])
    # monotonicity of the skeleton iterates of psi
    u = psi.copy()
    t_viol = x_viol = 0.0
    x = model.grid
    atom_viol = 0.0
    for _ in range(k_max):
        nxt = kernel.apply(u)
        scale = float(np.abs(nxt).max())
        t_viol = max(t_viol, float(np.max(u - nxt)) / scale)
        x_viol = max(x_viol, float(np.max(-np.diff(nxt))) / scale)
        for z, _w in model.fragment_atoms():
            atom_viol = max(atom_viol, float(np.max(np.interp(z * x, x, nxt) - nxt)) / scale)
        u = nxt
    mono = {"t_violation": max(t_viol, 0.0), "x_violation": max(x_viol, 0.0),
            "atom_violation_reported": max(atom_viol, 0.0),
            "pass": bool(t_viol <= mono_tol and x_viol <= mono_tol)}
    return {"steps": steps, "errs": errs, "rates": rates, "mass_growth_rate": mass_rate,
            "monotonicity": mono, "passed": bool(np.all(rates > 0) and mono["pass"])}


def generator_evolve(L, f, t: float) -> np.ndarray:
    """``exp(t L) f`` through the uniformized action (used by the Duhamel cross-check)."""
    M = matrix_exp(L, t)
    return M.apply(f)


def duhamel_picard(model: GrowthFragModel, f, T: float, A: float, dx: float,
                   iterations: int = 60, rtol: float = 1e-13) -> tuple[np.ndarray, np.ndarray]:
    """``M_T f`` on ``[0, A]`` by Picard iteration of the Duhamel formula.

    The grid ``x_i = i dx`` covers ``[0, A + T]`` and the time step equals
    ``dx`` so characteristics ``x + s`` stay on grid nodes; time integrals use
    trapezoid weights and fragments ``z x`` are read by linear interpolation.
    Returns ``(x, values)`` on ``[0, A]``.
    """
    nt = int(round(T / dx))
    nx = int(round(A / dx))
    total = nx + nt + 1
    x = np.arange(total) * dx
    fx = np.asarray(f(x), dtype=float)
    Bx = model.B(x)
    # cumulative integral of B along the grid (trapezoid)
    cumB = np.concatenate([[0.0], np.cumsum((Bx[1:] + Bx[:-1]) * dx / 2)])
    atoms = model.fragment_atoms()
    # F[n] holds M_{n dx} f on nodes 0 .. total - 1 - n
    base = [fx[n:] * np.exp(-(cumB[n:] - cumB[:total - n])) if n else fx.copy()
            for n in range(nt + 1)]
    F = [b.copy() for b in base]
    for _ in range(iterations):
        new = [base[0].copy()]
        change = 0.0
        for n in range(1, nt + 1):
            size = total - n
            i = np.arange(size)
            acc = np.zeros(size)
            for m in range(n + 1):
                wt = dx * (0.5 if m in (0, n) else 1.0)
                pos = i + m
                surv = np.exp(-(cumB[pos] - cumB[i]))
                prev = F[n - m]
                frag = np.zeros(size)
                for z, w in atoms:
                    frag += w * np.interp(z * x[pos], x[:prev.size], prev)
                acc += wt * surv * Bx[pos] * frag
            vals = base[n] + acc
            change = max(change, float(np.max(np.abs(vals - F[n]) / np.maximum(np.abs(vals), 1e-300))))
            new.append(vals)
        F = new
        if change <= rtol:
            break
    return x[:nx + 1], F[nt][:nx + 1]
