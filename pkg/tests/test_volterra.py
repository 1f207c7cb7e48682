import numpy as np
import pytest

from esplab.errors import (
    CertificateRequired,
    DepthExceeded,
    InvalidBasePoint,
    InvalidInput,
    NotNilpotent,
    OutsideDomain,
    Unsupported,
)
from esplab.evaluate import ForwardWashout, directional_derivative, eval_filter
from esplab.reservoir import EchoStateNetwork, LinearReservoir, PolynomialReadout
from esplab.seqspace import WeightingSequence, Window
from esplab.volterra import (
    KernelProvenance,
    VolterraKernelSet,
    bound_check_experiment,
    eval_series,
    eval_series_path,
    extract_exact,
    extract_fd,
    nilpotency_index,
    truncation_bound,
)


@pytest.fixture
def quadratic_shift_register():
    """Three-stage nilpotent reservoir read out by a quadratic polynomial"""
    A = [[0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [0.0, 0.0, 0.0]]
    c = [[0.5], [1.0], [-0.3]]
    readout = PolynomialReadout([[2, 0, 0], [1, 1, 0], [0, 0, 1], [0, 0, 0]], [[1.0], [1.0], [-0.5], [0.2]])
    return LinearReservoir(A, c, readout=readout)


def filter_output(sys, z):
    result = eval_filter(sys, z, WeightingSequence.geometric(0.5), ForwardWashout())
    return result.outputs.at(0) if result.outputs is not None else result.states.at(0)


# ============ EXACT KERNELS ============

def test_identity_filter_kernels():
    K = extract_exact([[0.0]], [[1.0]], PolynomialReadout([[1]], [[1.0]]))
    assert K.order == 1 and K.memory == 0
    assert K.kernel(1)[0, 0] == 1.0
    assert K.provenance == KernelProvenance.EXACT_NILPOTENT


def test_pure_delay_kernels(delay_system):
    K = extract_exact(delay_system.A, delay_system.c, delay_system.readout)
    assert K.memory == 1 and K.nilpotency_index == 2
    np.testing.assert_array_equal(K.kernel(1)[:, 0], [0.0, 1.0])


def test_square_readout_kernel():
    K = extract_exact([[0.0]], [[1.0]], PolynomialReadout([[2]], [[1.0]]))
    assert K.order == 2
    assert K.kernel(2)[0, 0, 0] == pytest.approx(1.0)
    np.testing.assert_array_equal(K.kernel(1), np.zeros((1, 1)))


def test_non_nilpotent_matrix():
    with pytest.raises(NotNilpotent):
        extract_exact([[0.5]], [[1.0]], PolynomialReadout([[1]], [[1.0]]))


def test_nilpotency_index():
    assert nilpotency_index(np.zeros((2, 2))) == 1
    assert nilpotency_index([[0.0, 1.0], [0.0, 0.0]]) == 2
    assert nilpotency_index([[0.5]]) is None


def test_exact_kernels_are_symmetric(quadratic_shift_register):
    sys = quadratic_shift_register
    g2 = extract_exact(sys.A, sys.c, sys.readout).kernel(2)[..., 0]
    np.testing.assert_array_equal(g2, g2.T)


def test_series_reproduces_nilpotent_filter(quadratic_shift_register, rng):
    sys = quadratic_shift_register
    K = extract_exact(sys.A, sys.c, sys.readout)
    for _ in range(100):
        z = Window(rng.uniform(-1, 1, 10))
        np.testing.assert_allclose(eval_series(K, z), filter_output(sys, z), atol=1e-10)


def random_nilpotent_system(rng):
    """Strictly upper triangular reservoir of size <= 4 with a random polynomial readout of degree <= 3"""
    N = int(rng.integers(1, 5))
    A = np.triu(rng.uniform(-1, 1, (N, N)), k=1)
    c = rng.uniform(-1, 1, (N, 1))
    exponents = []
    for _ in range(int(rng.integers(1, 6))):
        row = np.zeros(N, dtype=int)
        for i in rng.integers(0, N, int(rng.integers(0, 4))):
            row[i] += 1
        exponents.append(row)
    coefficients = rng.uniform(-1, 1, (len(exponents), 1))
    return LinearReservoir(A, c, readout=PolynomialReadout(exponents, coefficients))


@pytest.mark.parametrize("seed", range(10))
def test_series_reproduces_random_nilpotent_filters(seed):
    rng = np.random.default_rng(seed)
    sys = random_nilpotent_system(rng)
    K = extract_exact(sys.A, sys.c, sys.readout)
    assert K.order <= 3 and K.memory < sys.state_dim
    for _ in range(100):
        z = Window(rng.uniform(-1, 1, 8))
        np.testing.assert_allclose(eval_series(K, z), filter_output(sys, z), rtol=1e-12, atol=1e-10)


@pytest.mark.parametrize("seed", range(10))
def test_fd_matches_exact_kernels_of_random_nilpotent_filters(seed):
    rng = np.random.default_rng(seed)
    sys = random_nilpotent_system(rng)
    exact = extract_exact(sys.A, sys.c, sys.readout)
    fd = extract_fd(sys, Window.zeros(exact.memory + 1), exact.order, exact.memory)
    for j in range(1, exact.order + 1):
        np.testing.assert_allclose(fd.kernel(j), exact.kernel(j), atol=1e-6)
    np.testing.assert_allclose(fd.base_value, exact.base_value, atol=1e-12)
    for _ in range(100):
        z = Window(rng.uniform(-1, 1, exact.memory + 1))
        np.testing.assert_allclose(eval_series(fd, z), eval_series(exact, z), atol=1e-5)


# ============ FINITE-DIFFERENCE KERNELS ============

def test_fd_kernels_of_linear_filter(scalar_linear):
    K = extract_fd(scalar_linear, Window.zeros(5), 3, 4)
    np.testing.assert_allclose(K.kernel(1)[:, 0], 0.5 ** np.arange(5), atol=1e-7)
    assert np.abs(K.kernel(2)).max() <= 1e-7
    assert np.abs(K.kernel(3)).max() <= 1e-7
    assert K.provenance == KernelProvenance.FINITE_DIFFERENCE


def test_fd_kernels_of_tanh(memoryless_tanh):
    K = extract_fd(memoryless_tanh, Window.zeros(3), 3, 2)
    g1, g2, g3 = (K.kernel(j)[..., 0] for j in (1, 2, 3))
    assert g1[0] == pytest.approx(1.0, abs=1e-7)
    assert np.abs(g2).max() <= 1e-7
    assert g3[0, 0, 0] == pytest.approx(-1 / 3, abs=1e-4)
    # memoryless: only the all-zero lag tuple carries weight
    assert np.abs(g1[1:]).max() <= 1e-12
    g3_off = g3.copy()
    g3_off[0, 0, 0] = 0.0
    assert np.abs(g3_off).max() <= 1e-12


def test_fd_matches_exact_kernels(quadratic_shift_register):
    sys = quadratic_shift_register
    exact = extract_exact(sys.A, sys.c, sys.readout)
    fd = extract_fd(sys, Window.zeros(exact.memory + 1), exact.order, exact.memory)
    for j in (1, 2):
        np.testing.assert_allclose(fd.kernel(j), exact.kernel(j), atol=1e-6)
    np.testing.assert_allclose(fd.base_value, exact.base_value)


def test_fd_symmetry_spread_small(contracting_esn):
    K = extract_fd(contracting_esn, Window.constant(0.2, 3), 2, 2)
    assert K.symmetry_spread <= 1e-8
    g2 = K.kernel(2)
    np.testing.assert_allclose(g2, np.transpose(g2, (1, 0, 2)), atol=1e-15)


def test_first_order_kernel_matches_impulse_response(contracting_esn):
    K = extract_fd(contracting_esn, Window.constant(0.2, 5), 1, 4)
    z = Window.constant(0.2, 60)
    result = eval_filter(contracting_esn, z, WeightingSequence.geometric(0.5))
    for m in range(5):
        impulse = np.zeros((60, 1))
        impulse[59 - m, 0] = 1.0
        v = directional_derivative(contracting_esn, result, z, Window(impulse))
        np.testing.assert_allclose(K.kernel(1)[m], v.at(0), atol=1e-7)


def test_fd_order_limit(memoryless_tanh):
    with pytest.raises(Unsupported):
        extract_fd(memoryless_tanh, Window.zeros(3), 4, 2)


def test_fd_needs_constant_base(memoryless_tanh):
    with pytest.raises(InvalidBasePoint):
        extract_fd(memoryless_tanh, Window([0.0, 0.1, 0.0]), 2, 2)


def test_fd_needs_contraction():
    with pytest.raises(CertificateRequired):
        extract_fd(EchoStateNetwork([[1.5]], [[1.0]]), Window.zeros(2), 1, 1)


def test_fd_base_state_depth(contracting_esn):
    z0 = Window.constant(0.2, 1)
    shallow = extract_fd(contracting_esn, z0, 1, 0, depth=1)
    deep = extract_fd(contracting_esn, z0, 1, 0, depth=100)
    default = extract_fd(contracting_esn, z0, 1, 0)
    np.testing.assert_allclose(deep.base_value, default.base_value, atol=1e-12)
    assert np.abs(shallow.base_value - default.base_value).max() > 1e-6


# ============ SERIES EVALUATION ============

def test_series_at_base_point(contracting_esn):
    K = extract_fd(contracting_esn, Window.constant(0.2, 3), 2, 2)
    np.testing.assert_array_equal(eval_series(K, Window.constant(0.2, 10)), K.base_value)


def test_pure_delay_series(delay_system):
    K = extract_exact(delay_system.A, delay_system.c, delay_system.readout)
    assert eval_series(K, Window([7.0, 0.0]))[0] == pytest.approx(7.0)


def test_series_needs_memory_depth(delay_system):
    K = extract_exact(delay_system.A, delay_system.c, delay_system.readout)
    with pytest.raises(DepthExceeded):
        eval_series(K, Window([1.0]))


def test_series_path_is_delayed_copy(delay_system):
    K = extract_exact(delay_system.A, delay_system.c, delay_system.readout)
    path = eval_series_path(K, Window([1.0, 2.0, 3.0, 4.0]))
    np.testing.assert_allclose(path[:, 0], [1.0, 2.0, 3.0])


def test_kernel_set_survives_json(quadratic_shift_register, rng):
    sys = quadratic_shift_register
    K = extract_exact(sys.A, sys.c, sys.readout)
    rebuilt = VolterraKernelSet.from_dict(K.to_dict())
    z = Window(rng.uniform(-1, 1, 6))
    assert eval_series(rebuilt, z) == pytest.approx(eval_series(K, z), abs=0)


# ============ TRUNCATION BOUND ============

def test_bound_formula():
    bound = truncation_bound(1.0, 1.0, WeightingSequence.geometric(0.5), Window([0.5]), 1)
    assert bound.ratio == pytest.approx(0.5)
    assert bound.at(0) == pytest.approx(0.5)
    assert bound.weighted == pytest.approx(0.5)


def test_bound_per_time_grows_with_lag():
    bound = truncation_bound(1.0, 1.0, WeightingSequence.geometric(0.5), Window([0.0, 0.0, 0.5]), 1)
    assert bound.at(-2) == pytest.approx(4 * bound.at(0))


@pytest.mark.parametrize("p", [1, 2, 5])
def test_bound_vanishes_at_base_point(p):
    assert truncation_bound(1.0, 2.0, WeightingSequence.harmonic(1.0), Window.zeros(4), p).weighted == 0.0


def test_bound_drops_by_ratio_per_order():
    w = WeightingSequence.geometric(0.5)
    z = Window([0.1, -0.2, 0.3])
    for p in range(1, 5):
        lower, higher = truncation_bound(2.0, 1.5, w, z, p), truncation_bound(2.0, 1.5, w, z, p + 1)
        assert higher.weighted == pytest.approx(lower.weighted * lower.ratio, rel=1e-12)
        assert higher.weighted < lower.weighted


def test_bound_increases_with_input_size():
    w = WeightingSequence.geometric(0.5)
    sizes = [truncation_bound(1.0, 1.0, w, Window([s]), 2).weighted for s in (0.1, 0.3, 0.6, 0.9)]
    assert all(a < b for a, b in zip(sizes, sizes[1:]))


def test_bound_outside_ball():
    with pytest.raises(OutsideDomain):
        truncation_bound(1.0, 1.0, WeightingSequence.geometric(0.5), Window([1.0]), 1)


# ============ BOUND CHECK ============

def test_bound_check_exact_kernels(quadratic_shift_register):
    sys = quadratic_shift_register
    K = extract_exact(sys.A, sys.c, sys.readout)
    report = bound_check_experiment(sys, K, WeightingSequence.geometric(0.5), 10, (1.0, 5.0))
    assert report.violations == 0
    assert report.errors.max() <= 1e-12
    assert report.bounds.min() > 0


def test_bound_check_tanh(memoryless_tanh):
    K = extract_fd(memoryless_tanh, Window.zeros(2), 3, 1)
    report = bound_check_experiment(memoryless_tanh, K, WeightingSequence.geometric(0.5), 20, (1.0, None))
    assert report.violations == 0
    assert report.slack == 1e-6
    header, rows = report.rows()
    assert len(rows) == 9 * 20 and header[0] == "rho"


def test_bound_check_linear_first_order(scalar_linear):
    K = extract_fd(scalar_linear, Window.zeros(4), 1, 3)
    report = bound_check_experiment(scalar_linear, K, WeightingSequence.geometric(0.5), 10, (1.0, 2.0))
    assert report.violations == 0
    assert report.errors.max() <= 1e-9
    assert report.bounds.min() > 0


def test_bound_check_deeper_lags_show_memory_truncation(scalar_linear):
    K = extract_fd(scalar_linear, Window.zeros(4), 1, 3)
    w = WeightingSequence.geometric(0.5)
    report = bound_check_experiment(scalar_linear, K, w, 10, (1.0, 2.0), lags=8)
    assert report.lags == 8
    assert report.to_dict()["lags"] == 8
    # inputs older than the kernel memory still reach the output through 0.5^k
    assert report.errors.max() > 1e-9


def test_bound_check_deeper_lags_keep_nilpotent_series_exact(quadratic_shift_register):
    sys = quadratic_shift_register
    K = extract_exact(sys.A, sys.c, sys.readout)
    w = WeightingSequence.geometric(0.5)
    report = bound_check_experiment(sys, K, w, 10, (1.0, 5.0), lags=K.memory + 6)
    assert report.violations == 0
    assert report.errors.max() <= 1e-12


def test_bound_check_lags_must_cover_memory(scalar_linear):
    K = extract_fd(scalar_linear, Window.zeros(4), 1, 3)
    with pytest.raises(InvalidInput):
        bound_check_experiment(scalar_linear, K, WeightingSequence.geometric(0.5), 5, (1.0, 2.0), lags=3)
