"""
Finite-state weighted function and measure spaces.

Functions are vectors indexed by the states, measures are vectors acting on
functions by summation. The weighted sup norm ``||f||_B(phi) = max |f|/phi``
and the weighted total variation norm ``||mu||_M(phi) = mu_+(phi) + mu_-(phi)``
are dual to each other. Kernels act on functions from the right and on
measures from the left, and semigroup skeletons ``M_tau = exp(tau L)`` are
built from Metzler generators by uniformization so that every entry stays
nonnegative.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from ._validation import as_square, as_vector, check_positive

__all__ = [
    "DENSE_LIMIT",
    "StateSpace",
    "WeightPair",
    "SignedMeasure",
    "KernelOperator",
    "UniformizedKernel",
    "GeneratorMatrix",
    "hahn_jordan",
    "weighted_sup_norm",
    "weighted_tv_norm",
    "matrix_exp",
    "semigroup_power",
    "read_kernel_csv",
    "write_kernel_csv",
    "read_kernel_json",
    "write_kernel_json",
    "load_kernel",
]

#: Above this many states kernels are kept sparse or applied implicitly.
DENSE_LIMIT = 2000

# Poisson weights are summed until the remaining tail is below this fraction.
_SERIES_TOL = 1e-17
# Largest uniformization rate times step handled in one substep.
_MAX_SUBSTEP_RATE = 30.0
# Entries of a Pade exponential more negative than this (relative) are errors.
_CLAMP_TOL = 1e-14


@dataclass(frozen=True)
class StateSpace:
    """Ordered, unique state labels."""

    labels: tuple

    def __post_init__(self):
        labels = tuple(str(x) for x in self.labels)
        if len(labels) == 0:
            raise ValueError("state space must not be empty")
        if len(set(labels)) != len(labels):
            raise ValueError("state labels must be unique")
        object.__setattr__(self, "labels", labels)

    @property
    def size(self) -> int:
        return len(self.labels)

    @classmethod
    def range(cls, n: int, start: int = 0) -> "StateSpace":
        return cls(tuple(str(i) for i in range(start, start + n)))


@dataclass(frozen=True, eq=False)
class WeightPair:
    """The weights ``(V, psi)`` with ``0 < psi <= V``."""

    V: np.ndarray
    psi: np.ndarray

    def __post_init__(self):
        V = as_vector(self.V, "V", positive=True)
        psi = as_vector(self.psi, "psi", n=V.size, positive=True)
        if np.any(psi > V):
            raise ValueError("psi must satisfy psi <= V entrywise")
        V.setflags(write=False)
        psi.setflags(write=False)
        object.__setattr__(self, "V", V)
        object.__setattr__(self, "psi", psi)

    @property
    def ratio(self) -> np.ndarray:
        return self.V / self.psi


@dataclass(frozen=True, eq=False)
class SignedMeasure:
    """A signed measure in Hahn-Jordan normal form ``plus - minus``."""

    plus: np.ndarray
    minus: np.ndarray

    def __post_init__(self):
        plus = as_vector(self.plus, "plus", nonnegative=True)
        minus = as_vector(self.minus, "minus", n=plus.size, nonnegative=True)
        if np.any(np.minimum(plus, minus) != 0):
            raise ValueError("plus and minus parts must be mutually singular")
        object.__setattr__(self, "plus", plus)
        object.__setattr__(self, "minus", minus)

    @property
    def raw(self) -> np.ndarray:
        return self.plus - self.minus

    def integrate(self, f) -> float:
        """Return ``mu(f)``."""
        return float(self.raw @ np.asarray(f, dtype=float))


def hahn_jordan(raw) -> SignedMeasure:
    """Split a signed vector into its positive and negative parts."""
    raw = as_vector(raw, "raw")
    return SignedMeasure(np.maximum(raw, 0.0), np.maximum(-raw, 0.0))


def weighted_sup_norm(f, phi) -> float:
    """Return ``max_i |f[i]| / phi[i]``."""
    f = as_vector(f, "f")
    phi = as_vector(phi, "phi", n=f.size, positive=True)
    return float(np.max(np.abs(f) / phi))


def weighted_tv_norm(mu, phi) -> float:
    """Return ``mu_+(phi) + mu_-(phi)``.

    ``mu`` may be a :class:`SignedMeasure` or a raw signed vector.
    """
    if not isinstance(mu, SignedMeasure):
        mu = hahn_jordan(mu)
    phi = as_vector(phi, "phi", n=mu.plus.size, positive=True)
    return float((mu.plus + mu.minus) @ phi)


# ---------------------------------------------------------------------------
# kernels and generators


def _as_operator_matrix(entries):
    if sp.issparse(entries):
        A = sp.csr_matrix(entries, dtype=float)
        if A.shape[0] != A.shape[1] or A.shape[0] == 0:
            raise ValueError(f"kernel must be a nonempty square matrix, got {A.shape}")
        if not np.all(np.isfinite(A.data)):
            raise ValueError("kernel must have finite entries")
        return A
    return as_square(entries, "kernel")


class KernelOperator:
    """Nonnegative kernel ``K[x, y] = (delta_x M_tau)({y})`` on a finite space.

    Parameters
    ----------
    entries : array_like or sparse matrix
        Square nonnegative matrix. Matrices with more than ``DENSE_LIMIT``
        states and few nonzeros are stored in CSR format.
    tau : float
        Time step represented by the kernel (zero only for the identity
        produced by ``semigroup_power(M, 0)``).
    labels : sequence, optional
        State labels, defaulting to ``0..n-1``.
    """

    is_implicit = False

    def __init__(self, entries, tau: float = 1.0, labels=None):
        A = _as_operator_matrix(entries)
        data = A.data if sp.issparse(A) else A
        if np.any(data < 0):
            raise ValueError("kernel entries must be nonnegative")
        n = A.shape[0]
        if not sp.issparse(A) and n > DENSE_LIMIT:
            if np.count_nonzero(A) < 0.25 * n * n:
                A = sp.csr_matrix(A)
        if not sp.issparse(A):
            A = np.array(A)
            A.setflags(write=False)
        self._A = A
        tau = float(tau)
        if not (tau >= 0 and np.isfinite(tau)):
            raise ValueError(f"tau must be nonnegative and finite, got {tau}")
        self.tau = tau
        self.space = StateSpace(labels) if labels is not None else StateSpace.range(n)
        if self.space.size != n:
            raise ValueError("number of labels does not match kernel size")

    @property
    def n(self) -> int:
        return self.space.size

    @property
    def entries(self):
        """The stored matrix (dense ``ndarray`` or CSR)."""
        return self._A

    def dense(self) -> np.ndarray:
        return self._A.toarray() if sp.issparse(self._A) else np.array(self._A)

    def apply(self, f) -> np.ndarray:
        """Right action ``(Kf)(x) = sum_y K[x, y] f(y)``; ``f`` may hold columns."""
        return np.asarray(self._A @ np.asarray(f, dtype=float))

    def lapply(self, mu) -> np.ndarray:
        """Left action ``(mu K)(y) = sum_x mu(x) K[x, y]``; ``mu`` may hold rows."""
        mu = np.asarray(mu, dtype=float)
        return np.asarray((self._A.T @ mu.T).T)

    def columns(self, idx) -> np.ndarray:
        """Dense block ``K[:, idx]``."""
        idx = np.asarray(idx, dtype=int)
        if sp.issparse(self._A):
            return self._A[:, idx].toarray()
        return np.array(self._A[:, idx])

    def __repr__(self):
        return f"{type(self).__name__}(n={self.n}, tau={self.tau})"


def _poisson_weights(lam: float, tail_tol: float) -> np.ndarray:
    """Poisson(lam) weights truncated once the tail is below ``tail_tol``."""
    w = [math.exp(-lam)]
    k = 0
    while True:
        k += 1
        w.append(w[-1] * lam / k)
        if k + 1 > lam and w[-1] * (k + 1) / (k + 1 - lam) <= tail_tol:
            break
    return np.array(w)


class _Uniformizer:
    """Shifted uniformization ``exp(tL) = exp(ct) sum_k Pois(k; qt) P^k``.

    The shift ``c`` makes ``L - cI`` have nonpositive row sums, so the
    stochastic-like matrix ``P = I + (L - cI)/q`` has row sums at most one and
    the Poisson tail bounds the truncation error.
    """

    def __init__(self, L):
        L = sp.csr_matrix(L, dtype=float) if sp.issparse(L) else np.asarray(L, float)
        n = L.shape[0]
        rowsum = np.asarray(L.sum(axis=1)).ravel()
        self.shift = max(float(rowsum.max()), 0.0)
        diag = (L.diagonal() if sp.issparse(L) else np.diag(L)) - self.shift
        self.rate = max(float(-diag.min()), 0.0)
        if self.rate > 0:
            if sp.issparse(L):
                eye = sp.identity(n, format="csr")
                self.P = (eye + (L - self.shift * eye) / self.rate).tocsr()
            else:
                self.P = np.eye(n) + (L - self.shift * np.eye(n)) / self.rate
        else:
            self.P = None

    def action(self, t: float, v: np.ndarray) -> np.ndarray:
        v = np.array(v, dtype=float)
        if self.P is None or t == 0:
            return v * math.exp(self.shift * t)
        m = max(1, math.ceil(self.rate * t / _MAX_SUBSTEP_RATE))
        delta = t / m
        lam = self.rate * delta
        w = _poisson_weights(lam, _SERIES_TOL * math.exp(-lam))
        grow = math.exp(self.shift * delta)
        for _ in range(m):
            acc = w[0] * v
            term = v
            for wk in w[1:]:
                term = self.P @ term
                acc += wk * term
            v = np.asarray(acc) * grow
        if not np.all(np.isfinite(v)):
            raise OverflowError("exponential action overflowed")
        return v

    def dense(self, t: float) -> np.ndarray:
        n = self.P.shape[0] if self.P is not None else None
        if self.P is None:
            raise RuntimeError("dense() needs a nontrivial generator")
        # a sparse P keeps the Horner products at O(nnz n)
        P = self.P
        s = max(0, math.ceil(math.log2(self.rate * t))) if self.rate * t > 1 else 0
        delta = t / 2**s
        lam = self.rate * delta
        w = _poisson_weights(lam, _SERIES_TOL * math.exp(-lam) * 1e-2)
        X = w[-1] * np.eye(n)
        for wk in w[-2::-1]:
            X = np.asarray(X @ P)
            X[np.diag_indices(n)] += wk
        X *= math.exp(self.shift * delta)
        for _ in range(s):
            X = X @ X
        if not np.all(np.isfinite(X)):
            raise OverflowError("matrix exponential overflowed at working precision")
        return X


class UniformizedKernel(KernelOperator):
    """Implicit kernel ``exp(tau L)`` applied to vectors by uniformization.

    Used for large discretized generators where the dense exponential would
    be too costly; the generator is kept in CSR format.
    """

    is_implicit = True

    def __init__(self, generator, tau: float, labels=None):
        L = generator.entries if isinstance(generator, GeneratorMatrix) else generator
        L = sp.csr_matrix(L, dtype=float)
        self._L = L
        self._right = _Uniformizer(L)
        self._left = _Uniformizer(L.T.tocsr())
        self.tau = check_positive(tau, "tau")
        n = L.shape[0]
        self.space = StateSpace(labels) if labels is not None else StateSpace.range(n)
        self._A = None

    @property
    def generator(self):
        return self._L

    @property
    def entries(self):
        return self.dense()

    def dense(self) -> np.ndarray:
        if self._A is None:
            self._A = self._right.dense(self.tau) if self._right.P is not None else (
                np.eye(self.n) * math.exp(self._right.shift * self.tau))
        return self._A

    def apply(self, f) -> np.ndarray:
        return self._right.action(self.tau, f)

    def lapply(self, mu) -> np.ndarray:
        mu = np.asarray(mu, dtype=float)
        return self._left.action(self.tau, mu.T).T

    def columns(self, idx) -> np.ndarray:
        idx = np.asarray(idx, dtype=int)
        E = np.zeros((self.n, idx.size))
        E[idx, np.arange(idx.size)] = 1.0
        return self.apply(E)


class GeneratorMatrix:
    """Metzler matrix ``L`` (nonnegative off-diagonal entries)."""

    def __init__(self, entries, labels=None):
        L = _as_operator_matrix(entries)
        n = L.shape[0]
        if sp.issparse(L):
            off = L - sp.diags(L.diagonal())
            if off.nnz and off.data.min() < 0:
                raise ValueError("generator must be Metzler (nonnegative off-diagonal)")
        else:
            off = L - np.diag(np.diag(L))
            if np.any(off < 0):
                raise ValueError("generator must be Metzler (nonnegative off-diagonal)")
            if n > DENSE_LIMIT:
                L = sp.csr_matrix(L)
        self._L = L
        self.space = StateSpace(labels) if labels is not None else StateSpace.range(n)
        if self.space.size != n:
            raise ValueError("number of labels does not match generator size")

    @property
    def n(self) -> int:
        return self.space.size

    @property
    def entries(self):
        return self._L

    def dense(self) -> np.ndarray:
        return self._L.toarray() if sp.issparse(self._L) else np.array(self._L)

    def apply(self, f) -> np.ndarray:
        return np.asarray(self._L @ np.asarray(f, dtype=float))

    def lapply(self, mu) -> np.ndarray:
        return np.asarray((self._L.T @ np.asarray(mu, dtype=float).T).T)

    def row_sums(self) -> np.ndarray:
        return np.asarray(self._L.sum(axis=1)).ravel()


def matrix_exp(L, t: float, method: str = "uniformization",
               materialize: bool | None = None) -> KernelOperator:
    """Return the kernel ``exp(tL)`` of a Metzler generator.

    Parameters
    ----------
    L : GeneratorMatrix or array_like
    t : float
        Positive time.
    method : {"uniformization", "pade"}
        ``"uniformization"`` sums a Poisson-weighted series of a nonnegative
        matrix, so every entry is nonnegative by construction. ``"pade"`` uses
        ``scipy.linalg.expm`` and clamps negative round-off above ``-1e-14``
        (relative) to zero.
    materialize : bool, optional
        Force (or forbid) a dense result. By default generators with more
        than ``DENSE_LIMIT`` states give an implicit :class:`UniformizedKernel`.
    """
    gen = L if isinstance(L, GeneratorMatrix) else GeneratorMatrix(L)
    t = check_positive(t, "t")
    labels = gen.space.labels
    if materialize is None:
        materialize = gen.n <= DENSE_LIMIT
    if not materialize:
        return UniformizedKernel(gen, t, labels=labels)
    if method == "uniformization":
        U = _Uniformizer(gen.entries)
        if U.P is None:
            X = np.eye(gen.n) * math.exp(U.shift * t)
            if not np.all(np.isfinite(X)):
                raise OverflowError("matrix exponential overflowed at working precision")
        else:
            X = U.dense(t)
    elif method == "pade":
        X = scipy.linalg.expm(t * gen.dense())
        if not np.all(np.isfinite(X)):
            raise OverflowError("matrix exponential overflowed at working precision")
        scale = max(float(np.abs(X).max()), 1.0)
        if X.min() < -_CLAMP_TOL * scale:
            raise ValueError("Pade exponential lost positivity beyond the clamp threshold")
        X = np.maximum(X, 0.0)
    else:
        raise ValueError(f"unknown method {method!r}")
    return KernelOperator(X, tau=t, labels=labels)


def semigroup_power(M: KernelOperator, k: int) -> KernelOperator:
    """Return ``M^k`` as a kernel with time step ``k * M.tau``."""
    k = int(k)
    if k < 0:
        raise ValueError("k must be nonnegative")
    X = np.linalg.matrix_power(M.dense(), k)
    if not np.all(np.isfinite(X)):
        raise OverflowError("matrix power overflowed; use the normalized iterations")
    return KernelOperator(X, tau=k * M.tau, labels=M.space.labels)


# ---------------------------------------------------------------------------
# import / export


def write_kernel_csv(path, M) -> None:
    """Write a kernel (or generator) as CSV: ``n,tau`` header then the rows."""
    A = M.dense()
    tau = getattr(M, "tau", 0.0)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["n", "tau"])
        w.writerow([A.shape[0], repr(float(tau))])
        for row in A:
            w.writerow([repr(float(v)) for v in row])


def _read_csv_matrix(path):
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if len(rows) < 2 or [c.strip() for c in rows[0]] != ["n", "tau"]:
        raise ValueError(f"{path}: expected header 'n,tau'")
    n = int(rows[1][0])
    tau = float(rows[1][1])
    body = np.array([[float(v) for v in r] for r in rows[2:]])
    if body.shape != (n, n):
        raise ValueError(f"{path}: expected {n}x{n} matrix, got {body.shape}")
    return body, tau


def read_kernel_csv(path) -> KernelOperator:
    body, tau = _read_csv_matrix(path)
    return KernelOperator(body, tau=tau)


def write_kernel_json(path, M, extra: dict | None = None) -> None:
    """Write ``{"labels", "tau", "rows"}`` (plus optional extra keys)."""
    doc = {"labels": list(M.space.labels), "tau": float(getattr(M, "tau", 0.0)),
           "rows": M.dense().tolist()}
    if isinstance(M, GeneratorMatrix):
        doc["generator"] = doc.pop("rows")
    if extra:
        doc.update(extra)
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True))


def read_kernel_json(path_or_doc) -> KernelOperator:
    """Read a kernel document; a ``"generator"`` key is exponentiated at ``tau``."""
    doc = path_or_doc if isinstance(path_or_doc, dict) else json.loads(Path(path_or_doc).read_text())
    labels = doc.get("labels")
    tau = float(doc.get("tau", 1.0))
    if "rows" in doc:
        return KernelOperator(np.array(doc["rows"], dtype=float), tau=tau, labels=labels)
    if "generator" in doc:
        return matrix_exp(GeneratorMatrix(np.array(doc["generator"], dtype=float),
                                          labels=labels), tau)
    raise ValueError("kernel document needs a 'rows' or 'generator' entry")


def load_kernel(path) -> KernelOperator:
    path = Path(path)
    if path.suffix.lower() == ".csv":
        return read_kernel_csv(path)
    return read_kernel_json(path)
