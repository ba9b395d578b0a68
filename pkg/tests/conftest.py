import numpy as np
import pytest

from perrongap.measure import KernelOperator, matrix_exp

# M = [[a, b], [0, c]] with a = b = 1, c = 2: the reducible two-state example
FIXTURE = np.array([[1.0, 1.0], [0.0, 2.0]])


def random_metzler(rng, n, spread=1.0):
    """Irreducible Metzler generator: positive off-diagonal part, arbitrary row sums."""
    L = rng.random((n, n))
    np.fill_diagonal(L, 0.0)
    np.fill_diagonal(L, -L.sum(axis=1) + spread * rng.normal(size=n))
    return L


def random_chain(rng, n, power=4):
    A = rng.random((n, n)) ** power
    return A / A.sum(axis=1, keepdims=True)


@pytest.fixture
def fixture_kernel():
    return KernelOperator(FIXTURE, tau=1.0)


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)


@pytest.fixture(scope="session")
def metzler_kernels():
    rng = np.random.default_rng(7)
    return [matrix_exp(random_metzler(rng, 50), 1.0) for _ in range(100)]


@pytest.fixture(scope="session")
def bd_result():
    from perrongap.models import BirthDeathModel, bd_qsd

    return bd_qsd(BirthDeathModel(b=1.0, d=4.0, b1=1.0, d1=1.0, N=200))


@pytest.fixture(scope="session")
def gf_setup():
    """Growth-fragmentation with B(x) = x and mitosis on [0, 30], 3000 cells."""
    import time

    from perrongap.eigensolver import solve_triplet
    from perrongap.models import GrowthFragModel, gf_build, gf_witness

    t0 = time.perf_counter()
    model = GrowthFragModel()
    built = gf_build(model)
    gw = gf_witness(model, built, a4_horizon=200)
    w = gw["witness"]
    tri = solve_triplet(gw["kernel"], gw["psi"], nu=None if w is None else w.nu, V=gw["V"])
    return {"model": model, "built": built, "gw": gw, "triplet": tri,
            "seconds": time.perf_counter() - t0}
