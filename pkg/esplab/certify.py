"""
Echo state and fading memory certificates
Sufficient conditions for (system, weighting sequence) pairs together with
the filter Lipschitz constants and forgetting bounds they imply.

Every condition here is sufficient only: a NotCertified verdict never
claims that the echo state or fading memory property fails.
"""

import json
import logging
import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from esplab.errors import CertificateRequired, DepthExceeded, InvalidInput, NotASolution, Unsupported
from esplab.reservoir import (
    EchoStateNetwork,
    LinearReservoir,
    Provenance,
    RegularSAS,
    SamplingSpec,
    SystemConstants,
    TrigonometricSAS,
    replace_box,
    spectral_norm,
)
from esplab.seqspace import WeightKind, WeightingSequence, Window, decay_ratios, decay_ratios_p

logger = logging.getLogger(__name__)

NOT_MET_NOTE = "condition not met; ESP/FMP may still hold"
LIKELY_NOTE = "likely, unverified: constants are sampled lower bounds of a supremum"
NORM_NOTE = "matrix norms are spectral norms (largest singular value)"
INFINITE_RATIO_NOTE = "inverse decay ratio infinite"

SOLUTION_TOL = 1e-9
NILPOTENT_TOL = 1e-12


class Condition(str, Enum):
    CONTRACTION_TIMES_LW = "contraction_times_lw"
    CONTRACTION_TIMES_LWP = "contraction_times_lwp"
    LINEAR_SERIES = "linear_series"
    ESN_PRODUCT = "esn_product"
    SAS_PRODUCT = "sas_product"
    LOCAL_PERSISTENCE = "local_persistence"
    COMPACT_TARGET_ESP = "compact_target_esp"
    BOUNDED_INPUTS = "bounded_inputs"


class Verdict(str, Enum):
    CERTIFIED = "certified"
    NOT_CERTIFIED = "not_certified"
    INCONCLUSIVE = "inconclusive"


@dataclass(frozen=True)
class Certificate:
    condition: Condition
    lhs_value: float
    verdict: Verdict
    filter_lipschitz: float | None = None
    forgetting_scale: float | None = None
    output_lipschitz: float | None = None
    notes: tuple = ()
    details: dict = field(default_factory=dict)
    constants: SystemConstants | None = None
    weighting: WeightingSequence | None = None

    @property
    def certified(self):
        return self.verdict == Verdict.CERTIFIED

    @property
    def analytic(self):
        return self.constants is None or self.constants.provenance == Provenance.ANALYTIC

    def to_dict(self):
        return {
            "condition": self.condition.value,
            "lhs_value": self.lhs_value,
            "verdict": self.verdict.value,
            "filter_lipschitz": self.filter_lipschitz,
            "forgetting_scale": self.forgetting_scale,
            "output_lipschitz": self.output_lipschitz,
            "notes": list(self.notes),
            "details": dict(self.details),
            "constants": None if self.constants is None else self.constants.to_dict(),
            "weighting": None if self.weighting is None else self.weighting.to_dict(),
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, data):
        return cls(
            condition=Condition(data["condition"]),
            lhs_value=float(data["lhs_value"]),
            verdict=Verdict(data["verdict"]),
            filter_lipschitz=data.get("filter_lipschitz"),
            forgetting_scale=data.get("forgetting_scale"),
            output_lipschitz=data.get("output_lipschitz"),
            notes=tuple(data.get("notes", ())),
            details=dict(data.get("details", {})),
            constants=None if data.get("constants") is None else SystemConstants.from_dict(data["constants"]),
            weighting=None if data.get("weighting") is None else WeightingSequence.from_dict(data["weighting"]),
        )


def _ratio_horizon(w, horizon):
    # cover the whole custom table so the tail rule is part of the sampled ratios
    if w.kind == WeightKind.CUSTOM:
        return max(horizon, len(w.table) + 1)
    return horizon


def _weighting_notes(w, ratios):
    notes = []
    if ratios.lower_bound:
        notes.append("decay ratios of the custom weighting depend on its geometric tail rule "
                     "(continuation with the last tabulated ratio)")
    return notes


def _jaeger_note(sys):
    if isinstance(sys, EchoStateNetwork) and sys.state_dim == 1 and not np.any(sys.zeta):
        a = float(sys.A[0, 0])
        if abs(a) * float(sys.sigma.prime(0.0)) > 1:
            return (f"|a| = {a!r} > 1: the scalar network is bistable at zero input and has no ESP "
                    "on inputs containing the zero sequence (Jaeger's criterion)")
    return None


def _contraction_certificate(condition, sys, constants, w, inverse_decay, notes, details):
    notes = [NORM_NOTE] + list(constants.notes) + notes
    details = {"L_Fx": constants.l_fx, "L_Fz": constants.l_fz, "L_w": inverse_decay, **details}
    jaeger = _jaeger_note(sys)
    if jaeger:
        notes.append(jaeger)

    if math.isinf(inverse_decay):
        notes += [INFINITE_RATIO_NOTE, NOT_MET_NOTE]
        return Certificate(condition, math.inf, Verdict.NOT_CERTIFIED, notes=tuple(notes),
                           details=details, constants=constants, weighting=w)

    lhs = constants.l_fx * inverse_decay
    if lhs >= 1:
        notes.append(NOT_MET_NOTE)
        logger.info("%s: lhs %.6g >= 1, not certified", condition.value, lhs)
        return Certificate(condition, lhs, Verdict.NOT_CERTIFIED, notes=tuple(notes),
                           details=details, constants=constants, weighting=w)

    if constants.sampled:
        notes.append(LIKELY_NOTE)
        logger.warning("%s: lhs %.6g < 1 from sampled constants, inconclusive", condition.value, lhs)
        return Certificate(condition, lhs, Verdict.INCONCLUSIVE, notes=tuple(notes),
                           details=details, constants=constants, weighting=w)

    filter_lipschitz = constants.l_fz / (1 - lhs)
    output_lipschitz = None
    if sys.readout is not None and math.isfinite(sys.readout.lipschitz):
        output_lipschitz = sys.readout.lipschitz * filter_lipschitz
    logger.info("%s: lhs %.6g certified, filter Lipschitz %.6g", condition.value, lhs, filter_lipschitz)
    return Certificate(condition, lhs, Verdict.CERTIFIED,
                       filter_lipschitz=filter_lipschitz,
                       forgetting_scale=filter_lipschitz,
                       output_lipschitz=output_lipschitz,
                       notes=tuple(notes), details=details, constants=constants, weighting=w)


def certify_contraction(sys, w, sampling=None, horizon=64):
    """L_Fx * L_w < 1 gives the ESP and FMP with filter Lipschitz constant L_Fz / (1 - L_Fx * L_w)"""
    constants = sys.constants(sampling)
    ratios = decay_ratios(w, _ratio_horizon(w, horizon))
    return _contraction_certificate(Condition.CONTRACTION_TIMES_LW, sys, constants, w,
                                    ratios.inverse_decay, _weighting_notes(w, ratios), {})


def certify_contraction_p(sys, w, p, sampling=None, horizon=64):
    """Same condition in the p-weighted space: L_Fx * L_{w,p} < 1"""
    if p < 1:
        raise InvalidInput(f"p must be at least 1, got {p}")
    constants = sys.constants(sampling)
    ratios = decay_ratios_p(w, p, _ratio_horizon(w, horizon))
    return _contraction_certificate(Condition.CONTRACTION_TIMES_LWP, sys, constants, w,
                                    ratios.inverse_decay, _weighting_notes(w, ratios), {"p": float(p)})


def certify_esn_product(sys, w, horizon=64):
    """|||A||| * L_sigma * L_w < 1 for echo state networks"""
    if not isinstance(sys, EchoStateNetwork):
        raise Unsupported(f"the ESN product condition needs an echo state network, got {sys.family}")
    constants = sys.constants()
    ratios = decay_ratios(w, _ratio_horizon(w, horizon))
    details = {"norm_A": spectral_norm(sys.A), "L_sigma": sys.sigma.lipschitz}
    return _contraction_certificate(Condition.ESN_PRODUCT, sys, constants, w,
                                    ratios.inverse_decay, _weighting_notes(w, ratios), details)


# ============ SERIES CONDITIONS ============

def _series(log_terms, log_w, sustain):
    """Sum of exp(log_terms[j] - log_w[j]) with exact-zero stop and geometric tail detection.

    Returns (value, exact, tail_ratio, terms_used); value is None when no
    convergent tail is detected.
    """
    total = 0.0
    for j, log_a in enumerate(log_terms):
        if log_a == -math.inf:
            return total, True, 0.0, j
        total += math.exp(log_a - log_w[j])
        if not math.isfinite(total):
            return None, False, None, j

    scaled = np.asarray(log_terms) - log_w[: len(log_terms)]
    log_ratios = np.diff(scaled)
    if len(log_ratios) < sustain:
        return None, False, None, len(log_terms)
    recent = log_ratios[-sustain:]
    if np.all(recent < 0):
        tail_ratio = math.exp(recent.max())
        tail = math.exp(scaled[-1]) * tail_ratio / (1 - tail_ratio)
        return total + tail, False, tail_ratio, len(log_terms)
    return None, False, None, len(log_terms)


def _series_certificate(condition, value, exact, tail_ratio, used, notes, details, sampled, w, constants=None):
    details = {**details, "terms": used, "exact_sum": exact, "tail_ratio": tail_ratio}
    if value is None:
        notes = notes + ["no convergent geometric tail detected within the computed terms"]
        logger.info("%s: inconclusive after %d terms", condition.value, used)
        return Certificate(condition, math.inf, Verdict.INCONCLUSIVE, notes=tuple(notes),
                           details=details, constants=constants, weighting=w)
    if sampled:
        notes = notes + [LIKELY_NOTE]
        return Certificate(condition, value, Verdict.INCONCLUSIVE, notes=tuple(notes),
                           details=details, constants=constants, weighting=w)
    logger.info("%s: series bounded by %.6g", condition.value, value)
    return Certificate(condition, value, Verdict.CERTIFIED, notes=tuple(notes),
                       details=details, constants=constants, weighting=w)


def certify_linear_series(A, w, terms=200, sustain=5, c=None):
    """Sum_j |||A^j||| / w_j < infinity for linear reservoirs.

    Nilpotent A gives an exact finite sum. Otherwise the partial sum up to
    ``terms`` is closed with a geometric tail once the last ``sustain``
    consecutive ratios |||A^{j+1}||| w_j / (|||A^j||| w_{j+1}) stay below 1.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if A.shape[0] != A.shape[1]:
        raise InvalidInput(f"A must be square, got shape {A.shape}")
    if terms < 1:
        raise InvalidInput(f"terms must be at least 1, got {terms}")
    N = A.shape[0]

    log_norms = []
    power = np.eye(N)
    nilpotency = None
    with np.errstate(over="ignore", invalid="ignore"):
        for j in range(terms + 1):
            size = spectral_norm(power) if np.all(np.isfinite(power)) else math.inf
            if j <= N and size < NILPOTENT_TOL:
                nilpotency = j
                log_norms.append(-math.inf)
                break
            log_norms.append(math.log(size) if size > 0 else -math.inf)
            if size == 0:
                break
            power = power @ A

    log_w = w.log_values(len(log_norms) + 1)
    value, exact, tail_ratio, used = _series(log_norms, log_w, sustain)
    exact = exact or nilpotency is not None

    ratios = decay_ratios(w, _ratio_horizon(w, 64))
    product = spectral_norm(A) * ratios.inverse_decay if math.isfinite(ratios.inverse_decay) else math.inf
    notes = [NORM_NOTE, "this series condition is strictly weaker than |||A||| L_w < 1"]
    notes += _weighting_notes(w, ratios)
    details = {"nilpotency_index": nilpotency, "product_value": product}
    if value is not None and c is not None:
        details["functional_lipschitz"] = spectral_norm(c) * value
    return _series_certificate(Condition.LINEAR_SERIES, value, exact, tail_ratio, used, notes,
                               details, False, w)


def certify_sas_series(sys, w, terms=200, sustain=5, sampling=None):
    """Sum_j M_p^j / w_j < infinity for state-affine systems"""
    if not isinstance(sys, (TrigonometricSAS, RegularSAS)):
        raise Unsupported(f"the state-affine series condition needs a SAS family, got {sys.family}")
    if terms < 1:
        raise InvalidInput(f"terms must be at least 1, got {terms}")
    constants = sys.constants(sampling)
    m_p = constants.m_p
    if m_p == 0:
        log_terms = [0.0, -math.inf]
    else:
        log_terms = [j * math.log(m_p) for j in range(terms + 1)]
    log_w = w.log_values(len(log_terms) + 1)
    value, exact, tail_ratio, used = _series(log_terms, log_w, sustain)
    notes = [NORM_NOTE, "M_p L_w < 1 implies this condition but not conversely"] + list(constants.notes)
    return _series_certificate(Condition.SAS_PRODUCT, value, exact, tail_ratio, used, notes,
                               {"M_p": m_p}, constants.sampled, w, constants)


# ============ LOCAL AND COMPACT CONDITIONS ============

def solution_residual(sys, x, z, initial_state=None):
    """max_t ||x_t - F(x_{t-1}, z_t)|| over the window"""
    if x.depth != z.depth:
        raise InvalidInput(f"state and input windows differ in depth: {x.depth} vs {z.depth}")
    X, Z = x.values, z.values
    residual = 0.0
    if x.depth > 1:
        residual = float(np.linalg.norm(X[1:] - sys.apply_rows(X[:-1], Z[1:]), axis=1).max())
    if initial_state is not None:
        residual = max(residual, float(np.linalg.norm(X[0] - sys.apply(initial_state, Z[0]))))
    return residual


def _check_solution(sys, x, z, initial_state, tol):
    residual = solution_residual(sys, x, z, initial_state)
    if residual > tol:
        raise NotASolution(f"trajectory residual {residual:.3e} exceeds tolerance {tol:.1e}", residual=residual)
    return residual


def certify_local_persistence(sys, w, x0, z0, initial_state=None, tol=SOLUTION_TOL, horizon=64):
    """Persistence condition L_Fx(x0, z0) * L_w < 1 around a known solution.

    L_Fx(x0, z0) is the largest Jacobian norm along the window, which is
    exact for constant solutions.
    """
    residual = _check_solution(sys, x0, z0, initial_state, tol)
    pairs = [(x0.values[i - 1], z0.values[i]) for i in range(1, x0.depth)]
    if initial_state is not None:
        pairs.insert(0, (np.atleast_1d(np.asarray(initial_state, dtype=float)), z0.values[0]))
    if not pairs:
        raise InvalidInput("local persistence needs at least one transition along the solution")

    local_fx = max(spectral_norm(sys.jacobian_x(x, z)) for x, z in pairs)
    local_fz = max(spectral_norm(sys.jacobian_z(x, z)) for x, z in pairs)
    ratios = decay_ratios(w, _ratio_horizon(w, horizon))
    details = {"local_L_Fx": local_fx, "local_L_Fz": local_fz, "L_w": ratios.inverse_decay,
               "residual": residual, "transitions": len(pairs)}
    notes = [NORM_NOTE, "Jacobian supremum restricted to the window"] + _weighting_notes(w, ratios)

    if math.isinf(ratios.inverse_decay):
        notes += [INFINITE_RATIO_NOTE, NOT_MET_NOTE]
        return Certificate(Condition.LOCAL_PERSISTENCE, math.inf, Verdict.NOT_CERTIFIED,
                           notes=tuple(notes), details=details, weighting=w)

    lhs = local_fx * ratios.inverse_decay
    if lhs >= 1:
        notes.append(NOT_MET_NOTE)
        return Certificate(Condition.LOCAL_PERSISTENCE, lhs, Verdict.NOT_CERTIFIED,
                           notes=tuple(notes), details=details, weighting=w)
    bound = local_fz / (1 - lhs)
    logger.info("local persistence certified: lhs %.6g, local derivative bound %.6g", lhs, bound)
    return Certificate(Condition.LOCAL_PERSISTENCE, lhs, Verdict.CERTIFIED, filter_lipschitz=bound,
                       notes=tuple(notes), details=details, weighting=w)


def compact_target_esp(sys, w=None, sampling=None, horizon=64):
    """ESP for every input when F maps into a compact set and contracts in the state"""
    if not sys.compact_image:
        raise Unsupported(f"{sys.family} reservoir has no compact image")
    constants = sys.constants(sampling)
    lhs = constants.l_fx
    notes = [NORM_NOTE] + list(constants.notes)
    details = {"L_Fx": lhs, "image_diameter": sys.image_diameter}

    if lhs >= 1:
        notes.append(NOT_MET_NOTE)
        return Certificate(Condition.COMPACT_TARGET_ESP, lhs, Verdict.NOT_CERTIFIED,
                           notes=tuple(notes), details=details, constants=constants, weighting=w)

    notes.append("ESP holds for every input sequence, independent of any weighting")
    if w is not None:
        ratios = decay_ratios(w, _ratio_horizon(w, horizon))
        product = lhs * ratios.inverse_decay if math.isfinite(ratios.inverse_decay) else math.inf
        details["L_w"] = ratios.inverse_decay
        details["fmp_product"] = product
        if product < 1:
            notes.append("FMP holds for this weighting (L_Fx L_w < 1)")
        else:
            notes.append("FMP not established for this weighting (L_Fx L_w >= 1)")
    if constants.sampled:
        notes.append(LIKELY_NOTE)
        return Certificate(Condition.COMPACT_TARGET_ESP, lhs, Verdict.INCONCLUSIVE,
                           notes=tuple(notes), details=details, constants=constants, weighting=w)
    return Certificate(Condition.COMPACT_TARGET_ESP, lhs, Verdict.CERTIFIED,
                       notes=tuple(notes), details=details, constants=constants, weighting=w)


def invariant_state_radius(sys, constants, input_bound):
    """Radius L of a state ball mapped into itself under inputs bounded by input_bound"""
    if isinstance(sys, LinearReservoir):
        norm_a = constants.l_fx
        return constants.l_fz * input_bound / (1 - norm_a) if norm_a < 1 else math.inf
    if isinstance(sys, (TrigonometricSAS, RegularSAS)):
        return constants.m_q / (1 - constants.m_p) if constants.m_p < 1 else math.inf
    if isinstance(sys, EchoStateNetwork) and sys.compact_image:
        return math.sqrt(sys.state_dim)
    raise Unsupported(f"no invariant state ball is known for the {sys.family} family")


def certify_bounded_inputs(sys, input_bound, sampling=None):
    """ESP and FMP for every weighting when inputs stay in B(0, M) and F contracts on B(0, L) x B(0, M)"""
    if not input_bound > 0:
        raise InvalidInput(f"input bound must be positive, got {input_bound}")
    sampling = replace_box(sampling or SamplingSpec(), input_bound)
    constants = sys.constants(sampling)
    radius = invariant_state_radius(sys, constants, input_bound)
    lhs = constants.l_fx
    notes = [NORM_NOTE] + list(constants.notes)
    details = {"L_Fx": lhs, "state_radius": radius, "input_bound": float(input_bound)}

    if lhs >= 1 or math.isinf(radius):
        notes.append(NOT_MET_NOTE)
        return Certificate(Condition.BOUNDED_INPUTS, lhs, Verdict.NOT_CERTIFIED,
                           notes=tuple(notes), details=details, constants=constants)
    notes.append("ESP and FMP hold with respect to every weighting sequence on inputs bounded by M")
    if constants.sampled:
        notes.append(LIKELY_NOTE)
        return Certificate(Condition.BOUNDED_INPUTS, lhs, Verdict.INCONCLUSIVE,
                           notes=tuple(notes), details=details, constants=constants)
    return Certificate(Condition.BOUNDED_INPUTS, lhs, Verdict.CERTIFIED, filter_lipschitz=None,
                       notes=tuple(notes), details=details, constants=constants)


# ============ DERIVED BOUNDS ============

def differential_forgetting_bound(sys, w, horizon, certificate=None, sampling=None):
    """w^F_t = L_Fz / (1 - L_Fx L_w) * w_t for t = 0..horizon"""
    certificate = certificate or certify_contraction(sys, w, sampling)
    if not certificate.certified or certificate.forgetting_scale is None:
        raise CertificateRequired(f"differential forgetting bound needs a certified contraction, "
                                  f"got {certificate.verdict.value}")
    return certificate.forgetting_scale * w.values(horizon + 1)


def derivative_decay_diagnostic(sys, w, x, z, k_max, initial_state=None, tol=SOLUTION_TOL):
    """d_k = |||D_xF(x_{-1}, z_0) ... D_xF(x_{-k}, z_{-k+1})||| / w_k for k = 1..k_max.

    d_k -> 0 is necessary for differentiability of the filter at z.
    """
    if k_max >= x.depth:
        raise DepthExceeded(f"k_max {k_max} needs a window deeper than {x.depth}")
    if k_max < 1:
        raise InvalidInput(f"k_max must be at least 1, got {k_max}")
    _check_solution(sys, x, z, initial_state, tol)

    T = x.depth
    log_w = w.log_values(k_max + 1)
    product = np.eye(sys.state_dim)
    values = np.empty(k_max)
    with np.errstate(over="ignore"):
        for k in range(1, k_max + 1):
            product = product @ sys.jacobian_x(x.values[T - 1 - k], z.values[T - k])
            values[k - 1] = spectral_norm(product) * math.exp(-log_w[k])
    return values
