import numpy as np
import pytest

from esplab.reservoir import (
    EchoStateNetwork,
    LinearReservoir,
    PolynomialReadout,
    RegularSAS,
    Squashing,
    TrigonometricSAS,
    TrigTerm,
)
from esplab.seqspace import WeightingSequence


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def geometric_half():
    return WeightingSequence.geometric(0.5)


@pytest.fixture
def scalar_linear():
    """x_t = 0.5 x_{t-1} + z_t"""
    return LinearReservoir([[0.5]], [[1.0]])


@pytest.fixture
def bistable_esn():
    """Scalar algebraic-sigmoid network with a = 2, bistable at zero input"""
    return EchoStateNetwork([[2.0]], [[1.0]], sigma=Squashing.algebraic_sigmoid())


@pytest.fixture
def memoryless_tanh():
    """H(z) = tanh(z_0)"""
    return EchoStateNetwork([[0.0]], [[1.0]])


@pytest.fixture
def contracting_esn():
    A = np.array([[0.2, -0.1, 0.05],
                  [0.1,  0.25, 0.0],
                  [0.0,  0.1, -0.2]])
    c = np.array([[1.0], [0.5], [-0.3]])
    return EchoStateNetwork(A, c, zeta=[0.1, 0.0, -0.1])


@pytest.fixture
def delay_system():
    """Nilpotent shift register whose readout returns the previous input"""
    readout = PolynomialReadout([[1, 0]], [[1.0]])
    return LinearReservoir([[0.0, 1.0], [0.0, 0.0]], [[0.0], [1.0]], readout=readout)


@pytest.fixture
def trig_sas():
    p = [TrigTerm([[0.3, 0.0], [0.1, 0.2]], [1.0], [[0.0, 0.1], [0.0, 0.0]], [2.0])]
    q = [TrigTerm([1.0, 0.0], [0.5], [0.0, 0.5], [1.0])]
    return TrigonometricSAS(p, q)


@pytest.fixture
def regular_sas():
    p = [([0], [[0.2, 0.0], [0.0, 0.1]]), ([1], [[0.1, 0.1], [0.0, 0.2]])]
    q = [([1], [1.0, 0.0]), ([2], [0.0, 0.5])]
    return RegularSAS(p, q, input_bound=1.0)


def _scaled(rng, shape, target):
    M = rng.standard_normal(shape)
    return M * (target / np.linalg.norm(M, 2))


@pytest.fixture
def random_contracting_system():
    """Factory for linear, tanh and algebraic-sigmoid reservoirs with |||A||| < lam.

    With the geometric weighting lam ** k every system it returns is
    certified by the contraction condition.
    """
    def make(rng, lam, input_dim=1):
        family = rng.choice(["linear", "tanh", "algebraic"])
        N = int(rng.integers(1, 5))
        A = _scaled(rng, (N, N), rng.uniform(0.05, 0.9) * lam)
        c = rng.uniform(-1, 1, (N, input_dim))
        if family == "linear":
            return LinearReservoir(A, c)
        sigma = Squashing.tanh() if family == "tanh" else Squashing.algebraic_sigmoid()
        return EchoStateNetwork(A, c, zeta=rng.uniform(-0.2, 0.2, N), sigma=sigma)
    return make
