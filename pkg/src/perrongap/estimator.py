"""scikit-learn style wrapper around the eigen-triplet solver.

``fit`` takes the kernel matrix itself; ``transform`` and ``predict`` act on
rows of initial measures.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .assumptions import WitnessStrategy, full_witness_search
from .constants import build_ledger
from .eigensolver import solve_triplet
from .measure import KernelOperator


class PerronEigenEstimator(BaseEstimator):
    """Perron eigen-triplet of a nonnegative kernel with an optional gap certificate.

    Parameters
    ----------
    tau : float
        Time step of the kernel.
    psi, V : array-like or None
        Weight functions; ``psi`` defaults to ones and ``V`` to ``psi``.
    tol : float
        Solver tolerance.
    certify : bool
        Search for a witness and build its ledger. The triplet is computed
        either way; ``sigma_`` is ``None`` when no witness is found.
    a4_horizon : int
        Horizon of the mass-ratio check.

    Attributes
    ----------
    lambda_ : float
        Eigenvalue per unit time.
    h_, gamma_ : ndarray
        Right eigenfunction and left eigenmeasure, normalized by
        ``max(h / V) = 1`` and ``gamma(h) = 1``.
    witness_, ledger_ : object or None
    sigma_ : float or None
        Certified convergence rate.
    """

    def __init__(self, tau=1.0, psi=None, V=None, tol=1e-13, certify=True, a4_horizon=500):
        self.tau = tau
        self.psi = psi
        self.V = V
        self.tol = tol
        self.certify = certify
        self.a4_horizon = a4_horizon

    def fit(self, X, y=None):
        """Solve for the triplet of the square kernel ``X``."""
        X = check_array(X, dtype=float, ensure_min_samples=1, ensure_min_features=1)
        if X.shape[0] != X.shape[1]:
            raise ValueError(f"the kernel must be square, got shape {X.shape}")
        M = KernelOperator(X, tau=float(self.tau))
        psi = np.ones(M.n) if self.psi is None else np.asarray(self.psi, dtype=float)
        V = psi if self.V is None else np.asarray(self.V, dtype=float)
        self.witness_, self.ledger_, nu = None, None, None
        if self.certify:
            res = full_witness_search(M, V, psi, WitnessStrategy(a4_horizon=self.a4_horizon))
            if res.found:
                self.witness_ = res.witness
                self.ledger_ = build_ledger(res.witness)
                nu = res.witness.nu
        self.triplet_ = solve_triplet(M, psi, nu=nu, V=V, tol=self.tol, ledger=self.ledger_)
        self.lambda_ = self.triplet_.lam
        self.h_ = self.triplet_.h
        self.gamma_ = self.triplet_.gamma
        self.sigma_ = None if self.ledger_ is None else self.ledger_.sigma
        self.n_features_in_ = M.n
        return self

    def _measures(self, X):
        check_is_fitted(self, "triplet_")
        X = check_array(X, dtype=float)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} states, got {X.shape[1]}")
        return X

    def transform(self, X):
        """Perron coordinate ``mu(h)`` of each row measure, shape ``(n_samples, 1)``."""
        X = self._measures(X)
        return (X @ self.h_)[:, None]

    def predict(self, X, t=None):
        """Asymptotic profile ``mu(h) gamma``; with ``t`` it is scaled by ``exp(lambda t)``."""
        X = self._measures(X)
        out = (X @ self.h_)[:, None] * self.gamma_[None, :]
        if t is not None:
            out = out * np.exp(self.lambda_ * float(t))
        return out
