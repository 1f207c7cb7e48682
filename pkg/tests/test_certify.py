import json
import math

import numpy as np
import pytest

from esplab.certify import (
    INFINITE_RATIO_NOTE,
    LIKELY_NOTE,
    NOT_MET_NOTE,
    Certificate,
    Condition,
    Verdict,
    certify_bounded_inputs,
    certify_contraction,
    certify_contraction_p,
    certify_esn_product,
    certify_linear_series,
    certify_local_persistence,
    certify_sas_series,
    compact_target_esp,
    derivative_decay_diagnostic,
    differential_forgetting_bound,
    solution_residual,
)
from esplab.errors import CertificateRequired, DepthExceeded, NotASolution, Unsupported
from esplab.reservoir import EchoStateNetwork, LinearReadout, LinearReservoir, RegularSAS, SamplingSpec, Squashing
from esplab.seqspace import WeightingSequence, Window

SMALL_SAMPLING = SamplingSpec(points=256, seed=1)
X_PLUS = math.sqrt(3) / 2


# ============ CONTRACTION ============

def test_esn_contraction_certified(geometric_half):
    cert = certify_contraction(EchoStateNetwork([[0.4]], [[1.0]]), geometric_half)
    assert cert.verdict == Verdict.CERTIFIED
    assert cert.lhs_value == pytest.approx(0.8)
    assert cert.filter_lipschitz == pytest.approx(5.0)
    assert cert.forgetting_scale == pytest.approx(5.0)
    assert cert.analytic


def test_esn_contraction_not_met(geometric_half):
    cert = certify_contraction(EchoStateNetwork([[0.6]], [[1.0]]), geometric_half)
    assert cert.verdict == Verdict.NOT_CERTIFIED
    assert cert.lhs_value == pytest.approx(1.2)
    assert cert.filter_lipschitz is None
    assert NOT_MET_NOTE in cert.notes


def test_scaled_squashing_uses_its_lipschitz_constant(geometric_half):
    sigma = Squashing("custom", lambda x: 3 * np.tanh(x), lambda x: 3 * (1 - np.tanh(x) ** 2),
                      lipschitz=3.0, bounded=False)
    cert = certify_contraction(EchoStateNetwork([[0.4]], [[1.0]], sigma=sigma), geometric_half)
    assert cert.verdict == Verdict.NOT_CERTIFIED
    assert cert.lhs_value == pytest.approx(2.4)
    with pytest.raises(Unsupported):
        compact_target_esp(EchoStateNetwork([[0.4]], [[1.0]], sigma=sigma))


@pytest.mark.parametrize("w", [
    WeightingSequence.geometric(0.1),
    WeightingSequence.harmonic(5.0),
    WeightingSequence.custom([1.0, 0.3, 0.1]),
])
def test_zero_matrix_certified_for_finite_ratios(w):
    cert = certify_contraction(LinearReservoir(np.zeros((2, 2)), np.ones((2, 1))), w)
    assert cert.certified
    assert cert.lhs_value == 0.0


def test_infinite_inverse_decay_ratio():
    cert = certify_contraction(LinearReservoir([[0.1]], [[1.0]]), WeightingSequence.gaussian_exp())
    assert cert.verdict == Verdict.NOT_CERTIFIED
    assert INFINITE_RATIO_NOTE in cert.notes
    assert math.isinf(cert.lhs_value)


def test_output_lipschitz_uses_readout():
    sys = EchoStateNetwork([[0.4]], [[1.0]], readout=LinearReadout([[3.0]]))
    cert = certify_contraction(sys, WeightingSequence.geometric(0.5))
    assert cert.output_lipschitz == pytest.approx(15.0)


def test_custom_weighting_mentions_tail_rule():
    cert = certify_contraction(LinearReservoir([[0.2]], [[1.0]]), WeightingSequence.custom([1.0, 0.5, 0.3]))
    assert any("tail rule" in note for note in cert.notes)


def test_bistable_network_carries_criterion_note(bistable_esn, geometric_half):
    cert = certify_contraction(bistable_esn, geometric_half)
    assert cert.verdict == Verdict.NOT_CERTIFIED
    assert any("bistable" in note for note in cert.notes)


def test_sampled_constants_are_inconclusive():
    sys = RegularSAS([([0], [[0.2]]), ([1], [[0.1]])], [([1], [1.0])], input_bound=1.0)
    cert = certify_contraction(sys, WeightingSequence.geometric(0.5), SMALL_SAMPLING)
    assert cert.verdict == Verdict.INCONCLUSIVE
    assert LIKELY_NOTE in cert.notes
    assert not cert.analytic


@pytest.mark.parametrize("lam, p, lhs", [(0.25, 2, 1.2), (0.25, 1, 2.4)])
def test_p_weighted_contraction(lam, p, lhs):
    cert = certify_contraction_p(LinearReservoir([[0.6]], [[1.0]]), WeightingSequence.geometric(lam), p)
    assert cert.condition == Condition.CONTRACTION_TIMES_LWP
    assert cert.lhs_value == pytest.approx(lhs)
    assert cert.verdict == Verdict.NOT_CERTIFIED


def test_p_weighted_contraction_zero_matrix():
    cert = certify_contraction_p(LinearReservoir([[0.0]], [[1.0]]), WeightingSequence.geometric(0.25), 3)
    assert cert.certified


def test_esn_product_condition(geometric_half):
    cert = certify_esn_product(EchoStateNetwork([[0.3, 0.0], [0.0, 0.2]], np.ones((2, 1))), geometric_half)
    assert cert.condition == Condition.ESN_PRODUCT
    assert cert.lhs_value == pytest.approx(0.6)
    assert cert.details["norm_A"] == pytest.approx(0.3)
    with pytest.raises(Unsupported):
        certify_esn_product(LinearReservoir([[0.3]], [[1.0]]), geometric_half)


# ============ SERIES CONDITIONS ============

@pytest.mark.parametrize("a", [0.0, 0.5, 3.0])
def test_nilpotent_series_is_exact(a, geometric_half):
    cert = certify_linear_series([[0.0, a], [0.0, 0.0]], geometric_half)
    assert cert.certified
    assert cert.details["exact_sum"]
    assert cert.lhs_value == pytest.approx(1 + a / 0.5, rel=1e-12)


def test_zero_matrix_series():
    cert = certify_linear_series(np.zeros((3, 3)), WeightingSequence.harmonic(2.0))
    assert cert.certified
    assert cert.lhs_value == 1.0
    assert cert.details["nilpotency_index"] == 1


def test_harmonic_counterexample():
    # the product condition fails while the series converges to (1 + a (d - 1)) / (1 - a)^2
    w = WeightingSequence.harmonic(1.5)
    series = certify_linear_series([[0.5]], w)
    product = certify_contraction(LinearReservoir([[0.5]], [[1.0]]), w)
    assert series.certified
    assert series.lhs_value == pytest.approx(5.0, abs=1e-9)
    assert series.details["product_value"] == pytest.approx(1.25, abs=1e-9)
    assert product.verdict == Verdict.NOT_CERTIFIED
    assert product.lhs_value == pytest.approx(1.25, abs=1e-9)


def test_divergent_series_is_inconclusive():
    cert = certify_linear_series([[0.9]], WeightingSequence.geometric(0.5), terms=40)
    assert cert.verdict == Verdict.INCONCLUSIVE


def test_series_functional_lipschitz():
    cert = certify_linear_series([[0.0, 1.0], [0.0, 0.0]], WeightingSequence.geometric(0.5), c=[[2.0], [0.0]])
    assert cert.details["functional_lipschitz"] == pytest.approx(2.0 * 3.0)


@pytest.mark.parametrize("seed", range(20))
def test_product_condition_implies_linear_series(seed):
    rng = np.random.default_rng(seed)
    lam = rng.uniform(0.3, 0.95)
    N = int(rng.integers(1, 5))
    A = rng.standard_normal((N, N))
    A *= rng.uniform(0.2, 0.9) * lam / np.linalg.norm(A, 2)
    w = WeightingSequence.geometric(lam)
    assert certify_contraction(LinearReservoir(A, np.ones((N, 1))), w).certified
    cert = certify_linear_series(A, w, terms=60)
    assert cert.certified
    # each term is at most (|||A||| / lam) ** j
    assert cert.lhs_value <= 1.0 / (1.0 - np.linalg.norm(A, 2) / lam) * (1 + 1e-9)


def test_sas_series_is_sampled():
    sys = RegularSAS([([0], [[0.3]]), ([1], [[0.2]])], [([0], [1.0])], input_bound=1.0)
    cert = certify_sas_series(sys, WeightingSequence.geometric(0.8), sampling=SMALL_SAMPLING)
    assert cert.condition == Condition.SAS_PRODUCT
    assert cert.verdict == Verdict.INCONCLUSIVE
    assert math.isfinite(cert.lhs_value)
    assert cert.details["M_p"] <= 0.5 + 1e-12


def test_sas_series_needs_sas_family(geometric_half):
    with pytest.raises(Unsupported):
        certify_sas_series(LinearReservoir([[0.1]], [[1.0]]), geometric_half)


# ============ LOCAL PERSISTENCE ============

def test_persistence_fails_at_unstable_zero_solution(bistable_esn):
    zeros = Window.zeros(20)
    cert = certify_local_persistence(bistable_esn, WeightingSequence.geometric(0.9), zeros, zeros)
    assert cert.verdict == Verdict.NOT_CERTIFIED
    assert cert.details["local_L_Fx"] == pytest.approx(2.0)


def test_persistence_holds_at_outer_solution(bistable_esn):
    x0 = Window.constant(X_PLUS, 20)
    cert = certify_local_persistence(bistable_esn, WeightingSequence.geometric(0.3), x0, Window.zeros(20))
    assert cert.certified
    assert cert.lhs_value == pytest.approx(5 / 6)
    assert cert.filter_lipschitz == pytest.approx((1 / 8) / (1 - 5 / 6))


def test_persistence_reduces_to_global_condition_for_linear():
    sys = LinearReservoir([[0.5]], [[1.0]])
    w = WeightingSequence.geometric(0.8)
    cert = certify_local_persistence(sys, w, Window.constant(2.0, 10), Window.constant(1.0, 10))
    assert cert.lhs_value == pytest.approx(certify_contraction(sys, w).lhs_value)


def test_persistence_rejects_non_solutions(bistable_esn):
    with pytest.raises(NotASolution) as info:
        certify_local_persistence(bistable_esn, WeightingSequence.geometric(0.5),
                                  Window.constant(0.5, 5), Window.zeros(5))
    assert info.value.residual > 0.1


def test_solution_residual_checks_initial_state(scalar_linear):
    x = Window([1.0, 1.5])
    z = Window([1.0, 1.0])
    assert solution_residual(scalar_linear, x, z) == 0.0
    assert solution_residual(scalar_linear, x, z, initial_state=[0.0]) == pytest.approx(0.0)
    assert solution_residual(scalar_linear, x, z, initial_state=[1.0]) == pytest.approx(0.5)


# ============ COMPACT TARGET AND BOUNDED INPUTS ============

def test_compact_target_certified():
    cert = compact_target_esp(EchoStateNetwork([[0.5, 0.0], [0.0, 0.1]], np.ones((2, 1))))
    assert cert.certified
    assert cert.details["image_diameter"] == pytest.approx(2 * math.sqrt(2))


def test_compact_target_fmp_note(geometric_half):
    cert = compact_target_esp(EchoStateNetwork([[0.4]], [[1.0]]), geometric_half)
    assert cert.details["fmp_product"] == pytest.approx(0.8)
    assert any("FMP holds" in note for note in cert.notes)


def test_compact_target_not_met():
    assert compact_target_esp(EchoStateNetwork([[1.5]], [[1.0]])).verdict == Verdict.NOT_CERTIFIED


def test_compact_target_needs_compact_image(scalar_linear):
    with pytest.raises(Unsupported):
        compact_target_esp(scalar_linear)


def test_bounded_inputs_linear(scalar_linear):
    cert = certify_bounded_inputs(scalar_linear, 1.0)
    assert cert.condition == Condition.BOUNDED_INPUTS
    assert cert.certified
    assert cert.details["state_radius"] == pytest.approx(2.0)


def test_bounded_inputs_esn():
    cert = certify_bounded_inputs(EchoStateNetwork(0.3 * np.eye(3), np.ones((3, 1))), 5.0)
    assert cert.certified
    assert cert.details["state_radius"] == pytest.approx(math.sqrt(3))


def test_bounded_inputs_not_met():
    cert = certify_bounded_inputs(LinearReservoir([[1.2]], [[1.0]]), 1.0)
    assert cert.verdict == Verdict.NOT_CERTIFIED


# ============ DERIVED BOUNDS ============

def test_differential_forgetting_bound(geometric_half):
    bound = differential_forgetting_bound(EchoStateNetwork([[0.4]], [[1.0]]), geometric_half, 4)
    np.testing.assert_allclose(bound, 5.0 * 0.5 ** np.arange(5))


def test_differential_forgetting_bound_scale_four():
    # L_Fz / (1 - L_Fx L_w) = 2 / (1 - 0.25 * 2)
    bound = differential_forgetting_bound(LinearReservoir([[0.25]], [[2.0]]), WeightingSequence.geometric(0.5), 2)
    np.testing.assert_allclose(bound, [4.0, 2.0, 1.0])


def test_differential_forgetting_bound_zero_input_gain(geometric_half):
    bound = differential_forgetting_bound(LinearReservoir([[0.3]], [[0.0]]), geometric_half, 6)
    assert np.all(bound == 0)


def test_differential_forgetting_bound_needs_certificate(geometric_half):
    with pytest.raises(CertificateRequired):
        differential_forgetting_bound(EchoStateNetwork([[0.9]], [[1.0]]), geometric_half, 3)


def test_derivative_decay_around_outer_solution(bistable_esn):
    x = Window.constant(X_PLUS, 30)
    values = derivative_decay_diagnostic(bistable_esn, WeightingSequence.geometric(0.3), x, Window.zeros(30), 12)
    np.testing.assert_allclose(values, (5 / 6) ** np.arange(1, 13), rtol=1e-10)


def test_derivative_decay_zero_matrix():
    sys = LinearReservoir(np.zeros((2, 2)), np.ones((2, 1)))
    z = Window(np.linspace(-1, 1, 10))
    x = Window(np.tile(z.values, (1, 2)))
    values = derivative_decay_diagnostic(sys, WeightingSequence.geometric(0.5), x, z, 5)
    assert np.all(values == 0)


def test_derivative_decay_depth(bistable_esn):
    x = Window.constant(X_PLUS, 5)
    with pytest.raises(DepthExceeded):
        derivative_decay_diagnostic(bistable_esn, WeightingSequence.geometric(0.3), x, Window.zeros(5), 5)


# ============ SERIALIZATION ============

def test_certificate_json_round_trip(geometric_half):
    cert = certify_contraction(EchoStateNetwork([[0.4]], [[1.0]]), geometric_half)
    rebuilt = Certificate.from_dict(json.loads(cert.to_json()))
    assert rebuilt.verdict == cert.verdict
    assert rebuilt.lhs_value == cert.lhs_value
    assert rebuilt.filter_lipschitz == cert.filter_lipschitz
    assert rebuilt.constants == cert.constants
    assert rebuilt.weighting == cert.weighting
    assert rebuilt.notes == cert.notes


def test_infinite_lhs_serializes():
    cert = certify_contraction(LinearReservoir([[0.1]], [[1.0]]), WeightingSequence.gaussian_exp())
    assert math.isinf(Certificate.from_dict(json.loads(cert.to_json())).lhs_value)


def test_certificates_are_deterministic(contracting_esn, trig_sas, geometric_half):
    runs = [
        lambda: certify_contraction(contracting_esn, geometric_half),
        lambda: certify_linear_series([[0.3, 0.1], [0.0, 0.2]], geometric_half),
        lambda: certify_contraction(trig_sas, WeightingSequence.geometric(0.9), sampling=SMALL_SAMPLING),
        lambda: compact_target_esp(contracting_esn, geometric_half),
    ]
    for run in runs:
        assert run().to_json() == run().to_json()
