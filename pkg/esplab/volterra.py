"""
Discrete-time Volterra series of reservoir filters
Kernel extraction (exact for nilpotent linear reservoirs with polynomial
readouts, finite differences otherwise), finite series evaluation and the
truncation error bound on balls of a weighted sequence space.

Inputs are scalar. The order-j kernel is a dense array of shape
(M + 1,) * j + (d,) where array index i on each lag axis stands for lag -i
and the last axis runs over the d output components.
"""

import itertools
import logging
import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from esplab.errors import (
    CertificateRequired,
    DepthExceeded,
    InvalidBasePoint,
    InvalidInput,
    NotNilpotent,
    OutsideDomain,
    Unsupported,
)
from esplab.evaluate import DEFAULT_DEPTH, Picard, eval_filter
from esplab.reservoir import LinearReservoir, PolynomialReadout, spectral_norm
from esplab.seqspace import NormSpec, WeightingSequence, Window, norm

logger = logging.getLogger(__name__)

NILPOTENT_TOL = 1e-12
MAX_FD_ORDER = 3
EXACT_SLACK = 1e-12
FD_SLACK = 1e-6
DEFAULT_RHOS = tuple(round(0.1 * k, 1) for k in range(1, 10))


class KernelProvenance(str, Enum):
    EXACT_NILPOTENT = "exact_nilpotent"
    FINITE_DIFFERENCE = "finite_difference"


@dataclass(frozen=True, eq=False)
class VolterraKernelSet:
    order: int
    memory: int
    base_input: float
    base_value: np.ndarray
    kernels: dict
    provenance: KernelProvenance
    steps: dict = field(default_factory=dict)
    nilpotency_index: int | None = None
    symmetry_spread: float = 0.0

    @property
    def output_dim(self):
        return self.base_value.shape[0]

    @property
    def base(self):
        """Constant base window z0 over the kernel memory"""
        return Window.constant(self.base_input, self.memory + 1)

    def kernel(self, j):
        if j not in self.kernels:
            raise InvalidInput(f"no kernel of order {j}; kernel set has order {self.order}")
        return self.kernels[j]

    def to_dict(self):
        return {
            "J": self.order,
            "M_mem": self.memory,
            "base": self.base_input,
            "base_value": self.base_value.tolist(),
            "output_dim": self.output_dim,
            "provenance": self.provenance.value,
            "steps": {str(j): h for j, h in self.steps.items()},
            "nilpotency_index": self.nilpotency_index,
            "symmetry_spread": self.symmetry_spread,
            "index_map": "row-major over (i_1, ..., i_j, output); index i is lag -i",
            "g": {str(j): g.ravel().tolist() for j, g in sorted(self.kernels.items())},
        }

    @classmethod
    def from_dict(cls, data):
        try:
            order, memory = int(data["J"]), int(data["M_mem"])
            base_value = np.asarray(data["base_value"], dtype=float)
            d = base_value.shape[0]
            kernels = {}
            for key, flat in data["g"].items():
                j = int(key)
                kernels[j] = np.asarray(flat, dtype=float).reshape((memory + 1,) * j + (d,))
            return cls(
                order=order,
                memory=memory,
                base_input=float(data["base"]),
                base_value=base_value,
                kernels=kernels,
                provenance=KernelProvenance(data["provenance"]),
                steps={int(j): float(h) for j, h in data.get("steps", {}).items()},
                nilpotency_index=data.get("nilpotency_index"),
                symmetry_spread=float(data.get("symmetry_spread", 0.0)),
            )
        except KeyError as e:
            raise InvalidInput(f"kernel set JSON is missing field {e}")
        except ValueError as e:
            raise InvalidInput(f"kernel set JSON is malformed: {e}")


@dataclass(frozen=True, eq=False)
class VolterraBound:
    L: float
    M: float
    p: int
    ratio: float
    per_time: np.ndarray
    weighted: float

    def at(self, t):
        depth = len(self.per_time)
        if not -depth < t <= 0:
            raise DepthExceeded(f"lag {t} outside window of depth {depth}")
        return float(self.per_time[depth - 1 + t])


def nilpotency_index(A, tol=NILPOTENT_TOL):
    """Smallest p <= N with |||A^p||| < tol, or None"""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    power = np.eye(A.shape[0])
    for p in range(1, A.shape[0] + 1):
        power = power @ A
        if spectral_norm(power) < tol:
            return p
    return None


def symmetrize(kernel, j):
    """Average a kernel over all permutations of its j lag axes"""
    if j < 2:
        return kernel
    perms = itertools.permutations(range(j))
    return np.mean([np.transpose(kernel, perm + (j,)) for perm in perms], axis=0)


def _symmetry_spread(kernel, j):
    if j < 2:
        return 0.0
    return max(float(np.abs(np.transpose(kernel, perm + (j,)) - kernel).max())
               for perm in itertools.permutations(range(j)))


# ============ EXACT EXTRACTION ============

def extract_exact(A, c, h):
    """Kernels of the nilpotent linear reservoir (A, c) with polynomial readout h.

    With R[:, k] = A^k c the filter is h(sum_k R[:, k] z_{-k}), so
    g_j(-k_1, ..., -k_j) = (1/j!) D^j h(0)(R[:, k_1], ..., R[:, k_j]).
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    c = np.asarray(c, dtype=float)
    if c.ndim == 1:
        c = c[:, None]
    if c.shape[1] != 1:
        raise Unsupported("Volterra kernels are implemented for scalar inputs only")
    if not isinstance(h, PolynomialReadout):
        raise InvalidInput("exact extraction needs a polynomial readout")
    if h.state_dim != A.shape[0]:
        raise InvalidInput(f"readout expects state dim {h.state_dim}, A is {A.shape[0]} x {A.shape[0]}")

    p = nilpotency_index(A)
    if p is None:
        raise NotNilpotent(f"A is not nilpotent within {A.shape[0]} powers")
    memory = p - 1
    R = np.column_stack([np.linalg.matrix_power(A, k) @ c[:, 0] for k in range(p)])

    order = max(1, h.degree)
    d = h.output_dim
    kernels = {j: np.zeros((memory + 1,) * j + (d,)) for j in range(1, order + 1)}
    base_value = np.zeros(d)
    for exps, coef in zip(h.exponents, h.coefficients):
        j = int(exps.sum())
        if j == 0:
            base_value += coef
            continue
        variables = [i for i, e in enumerate(exps) for _ in range(e)]
        derivative = np.zeros((memory + 1,) * j)
        for perm in itertools.permutations(variables):
            derivative += _outer([R[i] for i in perm])
        kernels[j] += derivative[..., None] * coef / math.factorial(j)

    logger.info("Exact kernels: order %d, memory %d, nilpotency index %d", order, memory, p)
    return VolterraKernelSet(order, memory, 0.0, base_value, kernels, KernelProvenance.EXACT_NILPOTENT,
                             nilpotency_index=p)


def _outer(vectors):
    result = vectors[0]
    for v in vectors[1:]:
        result = np.multiply.outer(result, v)
    return result


# ============ FINITE-DIFFERENCE EXTRACTION ============

def _require_well_posed(sys):
    if isinstance(sys, LinearReservoir) and nilpotency_index(sys.A) is not None:
        return
    constants = sys.constants()
    if constants.l_fx >= 1:
        raise CertificateRequired(f"finite-difference kernels need a contracting system, L_Fx = {constants.l_fx:.6g}")
    if constants.sampled:
        logger.warning("well-posedness of the %s filter rests on sampled constants", sys.family)


def base_state(sys, base_input, w=None, depth=DEFAULT_DEPTH):
    """State of the filter under the constant input base_input, by Picard iteration"""
    w = w or WeightingSequence.geometric(0.5)
    result = eval_filter(sys, Window.constant(base_input, depth), w, Picard())
    return result.states.values[-1]


def perturbed_output(sys, x_star, base_input, increments):
    """Filter output at time 0 for z = z0 + increments, increments[i] at lag -i, z0 before"""
    x = x_star
    for i in range(len(increments) - 1, -1, -1):
        x = sys.apply(x, np.array([base_input + increments[i]]))
    return np.atleast_1d(sys.output(x))


def default_step(j, base_input):
    return np.finfo(float).eps ** (1.0 / (j + 2)) * max(1.0, abs(base_input))


def extract_fd(sys, z0, order, memory, step=None, w=None, depth=DEFAULT_DEPTH):
    """Kernels g_j = (1/j!) d^j H^F(z0) / dz_{m_1} ... dz_{m_j} by central differences.

    Each mixed derivative uses the sign-sum stencil
    sum_s (prod s) H(z0 + h sum_l s_l e_{m_l}) / (2h)^j, and every lag tuple
    is computed before the kernel is symmetrized. ``depth`` is the window
    depth of the Picard solve for the base state.
    """
    if sys.input_dim != 1:
        raise Unsupported("Volterra kernels are implemented for scalar inputs only")
    if order > MAX_FD_ORDER:
        raise Unsupported(f"finite-difference kernels stop at order {MAX_FD_ORDER}, got {order}")
    if order < 1 or memory < 0:
        raise InvalidInput(f"order must be >= 1 and memory >= 0, got {order} and {memory}")
    if not z0.is_constant():
        raise InvalidBasePoint("base point must be a constant (time-invariant) input")
    _require_well_posed(sys)

    b = float(z0.values[0, 0])
    x_star = base_state(sys, b, w, depth)
    cache = {}

    def output(increments):
        key = tuple(increments)
        if key not in cache:
            cache[key] = perturbed_output(sys, x_star, b, increments)
        return cache[key]

    base_value = output(np.zeros(memory + 1))
    d = base_value.shape[0]
    kernels, steps = {}, {}
    spread = 0.0
    for j in range(1, order + 1):
        h = float(step) if step is not None else default_step(j, b)
        steps[j] = h
        logger.debug("Order %d kernel with step %.3e", j, h)
        kernel = np.zeros((memory + 1,) * j + (d,))
        for lags in itertools.product(range(memory + 1), repeat=j):
            total = np.zeros(d)
            for signs in itertools.product((1, -1), repeat=j):
                increments = np.zeros(memory + 1)
                for s, i in zip(signs, lags):
                    increments[i] += s * h
                total += math.prod(signs) * output(increments)
            kernel[lags] = total / (2 * h) ** j / math.factorial(j)
        spread = max(spread, _symmetry_spread(kernel, j))
        kernels[j] = symmetrize(kernel, j)

    logger.info("Finite-difference kernels: order %d, memory %d, %d filter evaluations, spread %.2e",
                order, memory, len(cache), spread)
    return VolterraKernelSet(order, memory, b, base_value, kernels, KernelProvenance.FINITE_DIFFERENCE,
                             steps=steps, symmetry_spread=spread)


# ============ SERIES AND BOUNDS ============

def eval_series(K, z, t=0):
    """U(z0)_t + sum_j sum_m g_j(m_1..m_j) prod_i (z_{m_i + t} - z0)"""
    if z.dim != 1:
        raise Unsupported("Volterra kernels are implemented for scalar inputs only")
    last = z.depth - 1 + t
    if t > 0 or last - K.memory < 0:
        raise DepthExceeded(f"time {t} with memory {K.memory} needs a deeper window than {z.depth}")
    increments = z.values[last - K.memory: last + 1, 0][::-1] - K.base_input
    value = np.array(K.base_value, dtype=float)
    for j, kernel in K.kernels.items():
        term = kernel
        for _ in range(j):
            term = np.tensordot(increments, term, axes=(0, 0))
        value = value + term
    return value


def eval_series_path(K, z):
    """Series outputs for every time t with a full memory inside the window, oldest first"""
    times = range(-(z.depth - 1 - K.memory), 1)
    return np.array([eval_series(K, z, t) for t in times])


def truncation_bound(L, M, w, z, p):
    """(L / w_{-t}) (1 - r)^{-1} r^{p+1} with r = ||z||_w / M, for the increment window z"""
    if p < 1:
        raise InvalidInput(f"truncation order must be at least 1, got {p}")
    if not (L > 0 and M > 0):
        raise InvalidInput(f"ball radii must be positive, got L={L}, M={M}")
    r = norm(z, NormSpec.weighted(w)) / M
    if r >= 1:
        raise OutsideDomain(f"||z||_w / M = {r:.6g} is outside the unit ball")
    weighted = L / (1 - r) * r ** (p + 1)
    with np.errstate(divide="ignore", over="ignore"):
        per_time = weighted / NormSpec.weighted(w).lag_weights(z.depth)
    return VolterraBound(float(L), float(M), int(p), r, per_time, weighted)


@dataclass(frozen=True, eq=False)
class BoundCheckReport:
    rhos: tuple
    ratios: np.ndarray
    errors: np.ndarray
    bounds: np.ndarray
    violations: int
    slack: float
    provenance: KernelProvenance
    symmetry_spread: float
    lags: int = 1

    def rows(self):
        header = ["rho", "trial", "ratio", "error", "bound", "violation"]
        body = []
        for k, rho in enumerate(self.rhos):
            for trial in range(self.errors.shape[1]):
                err, bnd = float(self.errors[k, trial]), float(self.bounds[k, trial])
                body.append([rho, trial, float(self.ratios[k, trial]), err, bnd, int(err > bnd + self.slack)])
        return header, body

    def to_dict(self):
        return {
            "rhos": list(self.rhos),
            "violations": self.violations,
            "slack": self.slack,
            "provenance": self.provenance.value,
            "symmetry_spread": self.symmetry_spread,
            "lags": self.lags,
            "max_error": float(self.errors.max()),
            "min_bound": float(self.bounds.min()),
        }


def default_codomain_radius(sys):
    """L for the bound: sqrt(N) for echo state networks without readout squashing into [-1, 1]^N"""
    if sys.compact_image and sys.family == "esn" and sys.readout is None:
        return math.sqrt(sys.state_dim)
    raise InvalidInput(f"no default output bound L for the {sys.family} family; pass one explicitly")


def bound_check_experiment(sys, K, w, trials, ball, rhos=DEFAULT_RHOS, seed=0, lags=None, depth=DEFAULT_DEPTH):
    """Measured |H(z) - series(z)| against the truncation bound on shells ||z - z0||_w ~ rho M.

    ``lags`` perturbed lags (default memory + 1). The bound only covers the
    order truncation: lags older than the kernel memory add the memory
    truncation error of the kernels to the measured error.
    """
    M, L = ball
    if L is None:
        L = default_codomain_radius(sys)
    if trials < 1:
        raise InvalidInput(f"trials must be at least 1, got {trials}")
    lags = K.memory + 1 if lags is None else lags
    if lags < K.memory + 1:
        raise InvalidInput(f"perturb at least the {K.memory + 1} lags of the kernel memory, got {lags}")
    if sys.output_dim != K.output_dim:
        raise InvalidInput(f"kernel set has {K.output_dim} outputs, system has {sys.output_dim}")

    rng = np.random.default_rng(seed)
    spec = NormSpec.weighted(w)
    x_star = base_state(sys, K.base_input, depth=depth)
    slack = FD_SLACK if K.provenance == KernelProvenance.FINITE_DIFFERENCE else EXACT_SLACK

    ratios = np.zeros((len(rhos), trials))
    errors = np.zeros((len(rhos), trials))
    bounds = np.zeros((len(rhos), trials))
    for k, rho in enumerate(rhos):
        for trial in range(trials):
            raw = rng.uniform(-1, 1, lags)
            size = norm(Window(raw[::-1]), spec)
            if size == 0:
                continue
            increments = raw * (rng.uniform(0.5, 1.0) * rho * M / size)
            window = Window(K.base_input + increments[::-1])
            exact = perturbed_output(sys, x_star, K.base_input, increments)
            series = eval_series(K, window)
            bound = truncation_bound(L, M, w, Window(increments[::-1]), K.order)
            ratios[k, trial] = bound.ratio
            errors[k, trial] = float(np.linalg.norm(exact - series))
            bounds[k, trial] = bound.at(0)

    violations = int(np.sum(errors > bounds + slack))
    if violations:
        logger.warning("Volterra bound check: %d violations", violations)
    return BoundCheckReport(tuple(rhos), ratios, errors, bounds, violations, slack,
                            K.provenance, K.symmetry_spread, lags)
