"""Perron eigen-triplets and explicit spectral-gap certificates for positive semigroups."""

from .assumptions import (AssumptionAWitness, DriftCertificate, WitnessStrategy,
                          check_witness, full_witness_search)
from .constants import ConstantsLedger, build_ledger, rate_certificate, tune_ledger
from .eigensolver import (EigenTriplet, convergence_audit, mass_normalized_audit,
                          oracle_eigen, self_consistency, solve_triplet)
from .estimator import PerronEigenEstimator
from .measure import GeneratorMatrix, KernelOperator, matrix_exp
from .models import (BirthDeathModel, GrowthFragModel, bd_qsd, gf_build, gf_witness)

__version__ = "0.1.0"

__all__ = [
    "AssumptionAWitness", "DriftCertificate", "WitnessStrategy", "check_witness",
    "full_witness_search", "ConstantsLedger", "build_ledger", "rate_certificate",
    "tune_ledger", "EigenTriplet", "convergence_audit", "mass_normalized_audit",
    "oracle_eigen", "self_consistency", "solve_triplet", "PerronEigenEstimator",
    "GeneratorMatrix", "KernelOperator", "matrix_exp", "BirthDeathModel", "GrowthFragModel",
    "bd_qsd", "gf_build", "gf_witness",
]
