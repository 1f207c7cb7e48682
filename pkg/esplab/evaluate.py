"""
Reservoir filter evaluation on truncated inputs
Forward flows, Picard iteration of the filter fixed-point equation,
derivative recursions and the input / state forgetting experiments.
"""

import logging
import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from esplab.certify import certify_contraction
from esplab.errors import CertificateRequired, DepthExceeded, InvalidInput, NoConvergence, StaleState, UnboundedDomain
from esplab.reservoir import readout_jacobian
from esplab.seqspace import NormSpec, Window, decay_ratios, norm

logger = logging.getLogger(__name__)

DEFAULT_DEPTH = 200
DEFAULT_TOL = 1e-12
ENVELOPE_RTOL = 1e-9
ENVELOPE_ATOL = 1e-12


class ModeKind(str, Enum):
    FORWARD_WASHOUT = "forward_washout"
    PICARD = "picard"


@dataclass(frozen=True)
class ForwardWashout:
    x_init: np.ndarray | None = None
    kind: ModeKind = ModeKind.FORWARD_WASHOUT


@dataclass(frozen=True)
class Picard:
    x_init: np.ndarray | None = None
    max_iter: int = 1000
    tol: float = DEFAULT_TOL
    kind: ModeKind = ModeKind.PICARD


def mode_from_name(name, x_init=None, max_iter=1000, tol=DEFAULT_TOL):
    kind = ModeKind(name)
    if kind == ModeKind.PICARD:
        return Picard(x_init, max_iter, tol)
    return ForwardWashout(x_init)


@dataclass(frozen=True, eq=False)
class FilterResult:
    states: Window
    outputs: Window | None
    truncation_error_bound: float | None
    iterations: int
    residual: float
    mode: ModeKind
    x_init: np.ndarray
    inputs: Window
    sweep_history: tuple = ()

    def rows(self):
        """Table rows t, state components, output components"""
        header = ["t"] + [f"x{i}" for i in range(self.states.dim)]
        if self.outputs is not None:
            header += [f"y{i}" for i in range(self.outputs.dim)]
        body = []
        for row in range(self.states.depth):
            values = list(self.states.values[row])
            if self.outputs is not None:
                values += list(self.outputs.values[row])
            body.append([row - self.states.depth + 1] + values)
        return header, body

    def to_dict(self):
        return {
            "mode": self.mode.value,
            "iterations": self.iterations,
            "residual": self.residual,
            "truncation_error_bound": self.truncation_error_bound,
            "x_init": self.x_init.tolist(),
            "states": self.states.values.tolist(),
            "outputs": None if self.outputs is None else self.outputs.values.tolist(),
        }


@dataclass(frozen=True, eq=False)
class ForgettingReport:
    kind: str
    gaps: np.ndarray
    envelope: np.ndarray | None
    violations: int

    def rows(self):
        header = ["t", "gap", "envelope"]
        body = []
        for t, gap in enumerate(self.gaps, start=1):
            env = None if self.envelope is None else float(self.envelope[t - 1])
            body.append([t, float(gap), env])
        return header, body

    def to_dict(self):
        return {
            "kind": self.kind,
            "gaps": self.gaps.tolist(),
            "envelope": None if self.envelope is None else self.envelope.tolist(),
            "violations": self.violations,
        }


def count_violations(gaps, envelope):
    return int(np.sum(gaps > envelope * (1 + ENVELOPE_RTOL) + ENVELOPE_ATOL))


def _initial_state(sys, x_init):
    if x_init is None:
        return np.zeros(sys.state_dim)
    x_init = np.atleast_1d(np.asarray(x_init, dtype=float))
    if x_init.shape != (sys.state_dim,):
        raise InvalidInput(f"initial state must have dim {sys.state_dim}, got shape {x_init.shape}")
    return x_init


def _check_inputs(sys, z):
    if z.dim != sys.input_dim:
        raise InvalidInput(f"input window has dim {z.dim}, system expects {sys.input_dim}")


def _safe_constants(sys):
    try:
        return sys.constants()
    except UnboundedDomain:
        logger.warning("no constants available for %s; truncation bound omitted", sys.family)
        return None


# ============ FLOWS ============

def run_flow(sys, z, x0=None):
    """States x_1..x_T of x_t = F(x_{t-1}, z_t) started at x0 (forward-indexed input)"""
    _check_inputs(sys, z)
    x = _initial_state(sys, x0)
    states = np.empty((z.depth, sys.state_dim))
    for row, zt in enumerate(z.values):
        x = sys.apply(x, zt)
        states[row] = x
    return Window(states)


def _sweep(sys, X, Z, x_init):
    """One Picard sweep X_t <- F(X_{t-1}, z_t) with the oldest predecessor fixed at x_init"""
    new = np.empty_like(X)
    new[0] = sys.apply(x_init, Z[0])
    if len(X) > 1:
        new[1:] = sys.apply_rows(X[:-1], Z[1:])
    return new


def flow_residual(sys, states, z, x_init):
    """max_t ||x_t - F(x_{t-1}, z_t)|| with x_init preceding the oldest state"""
    gap = states.values - _sweep(sys, states.values, z.values, x_init)
    return float(np.linalg.norm(gap, axis=1).max())


def truncation_bound(sys, z, x_init, constants):
    """C * L_Fx^T; C is the image diameter for compact images, else ||x_init - F(x_init, z_{-T+1})|| / (1 - L_Fx).

    The non-compact constant treats x_init as the state left by a past that
    repeats z_{-T+1}. Under the zero-tail convention it can understate the
    error when x_init is not the fixed point of F(., 0).
    """
    if constants is None:
        return None
    c = constants.l_fx
    if c >= 1:
        logger.warning("L_Fx = %.6g >= 1: no truncation error bound", c)
        return None
    if constants.sampled:
        logger.warning("truncation bound uses sampled constants and is not rigorous")
    if sys.compact_image:
        C = sys.image_diameter
        if sys.family == "esn" and np.max(np.abs(x_init)) > 1:
            C = float(np.linalg.norm(x_init)) + sys.image_diameter / 2
    else:
        C = float(np.linalg.norm(x_init - sys.apply(x_init, z.values[0]))) / (1 - c)
    return C * c ** z.depth


def eval_filter(sys, z, w, mode=None):
    """Reservoir filter U^F(z) on the window, by forward washout or Picard iteration"""
    _check_inputs(sys, z)
    mode = mode or Picard()
    x_init = _initial_state(sys, mode.x_init)
    constants = _safe_constants(sys)
    history = ()

    if mode.kind == ModeKind.FORWARD_WASHOUT:
        states = run_flow(sys, z, x_init)
        iterations = 1
    else:
        states, iterations, history = _picard(sys, z, w, x_init, mode)

    residual = flow_residual(sys, states, z, x_init)
    outputs = None
    if sys.readout is not None:
        outputs = Window(np.array([sys.output(x) for x in states.values]))
    bound = truncation_bound(sys, z, x_init, constants)
    logger.info("%s evaluation: %d iterations, residual %.3e, truncation bound %s",
                mode.kind.value, iterations, residual, bound)
    return FilterResult(states, outputs, bound, iterations, residual, mode.kind, x_init, z, history)


def _picard(sys, z, w, x_init, mode):
    spec = NormSpec.weighted(w)
    X = np.tile(x_init, (z.depth, 1))
    history = []
    diff = math.inf
    for k in range(1, mode.max_iter + 1):
        new = _sweep(sys, X, z.values, x_init)
        delta = Window(new - X)
        diff = norm(delta, spec)
        residual = float(np.linalg.norm(delta.values, axis=1).max())
        history.append(diff)
        logger.debug("Picard sweep %d: weighted difference %.3e, residual %.3e", k, diff, residual)
        if diff < mode.tol and residual <= mode.tol:
            return Window(X), k, tuple(history)
        X = new
    raise NoConvergence(f"Picard iteration did not converge in {mode.max_iter} sweeps", diff, mode.max_iter)


def picard_contraction_rates(sys, z, w, start=None, sweeps=20, seed=0, floor=1e-8):
    """Per-sweep ratios ||X^{k+1} - X^k||_w / ||X^k - X^{k-1}||_w from an arbitrary starting window.

    Only ratios whose denominator exceeds ``floor`` are reported.
    """
    _check_inputs(sys, z)
    spec = NormSpec.weighted(w)
    if start is None:
        start = np.random.default_rng(seed).uniform(-1, 1, (z.depth, sys.state_dim))
    X = np.array(start.values if isinstance(start, Window) else start, dtype=float)
    x_init = np.zeros(sys.state_dim)
    diffs = []
    for _ in range(sweeps):
        new = _sweep(sys, X, z.values, x_init)
        diffs.append(norm(Window(new - X), spec))
        X = new
    return np.array([b / a for a, b in zip(diffs, diffs[1:]) if a > floor])


# ============ DERIVATIVES ============

def _require_states(result, z):
    if result is None:
        raise StaleState("no filter evaluation available; run eval_filter first")
    if not isinstance(result, FilterResult):
        raise StaleState(f"expected a FilterResult, got {type(result).__name__}")
    if result.inputs.values.shape != z.values.shape or not np.array_equal(result.inputs.values, z.values):
        raise StaleState("filter states were computed for a different input window")


def _predecessor(result, row):
    return result.states.values[row - 1] if row > 0 else result.x_init


def directional_derivative(sys, result, z, u):
    """DU^F(z) u via v_t = D_xF(x_{t-1}, z_t) v_{t-1} + D_zF(x_{t-1}, z_t) u_t with v_{-T} = 0"""
    _require_states(result, z)
    if u.values.shape != z.values.shape:
        raise InvalidInput(f"direction shape {u.values.shape} does not match input shape {z.values.shape}")
    v = np.zeros(sys.state_dim)
    out = np.empty((z.depth, sys.state_dim))
    for row in range(z.depth):
        prev = _predecessor(result, row)
        zt = z.values[row]
        v = sys.jacobian_x(prev, zt) @ v + sys.jacobian_z(prev, zt) @ u.values[row]
        out[row] = v
    return Window(out)


def output_derivative(sys, result, z, u):
    """Dh(x_t) DU^F(z) u for every row; the state derivative itself without a readout"""
    v = directional_derivative(sys, result, z, u)
    if sys.readout is None:
        return v
    rows = [readout_jacobian(sys.readout, x) @ dv for x, dv in zip(result.states.values, v.values)]
    return Window(np.array(rows))


def functional_partials(sys, result, z, depth):
    """Norms ||D_{z_t^i} H^F(z)|| for t = 0..-depth (rows) and input components i (columns).

    Computed with the backward product D_xF(x_{-1}, z_0) ... D_xF(x_{-k}, z_{-k+1}) D_zF(x_{-k-1}, z_{-k}).
    """
    _require_states(result, z)
    T = z.depth
    if not 0 <= depth < T:
        raise DepthExceeded(f"depth {depth} needs a window deeper than {T}")
    partials = np.empty((depth + 1, sys.input_dim))
    product = np.eye(sys.state_dim)
    for k in range(depth + 1):
        row = T - 1 - k
        prev = _predecessor(result, row)
        zt = z.values[row]
        partials[k] = np.linalg.norm(product @ sys.jacobian_z(prev, zt), axis=0)
        product = product @ sys.jacobian_x(prev, zt)
    return partials


# ============ FORGETTING EXPERIMENTS ============

def input_forgetting_experiment(sys, u, v, future, w, with_envelope=True, certificate=None, x_init=None):
    """Gaps ||U(u, future)_t - U(v, future)_t|| for t = 1..len(future).

    Both inputs run from a common initial state. The envelope
    L_U * D_w^t * ||u - v||_w needs a certified contraction.
    """
    if u.values.shape != v.values.shape:
        raise InvalidInput(f"pasts differ in shape: {u.values.shape} vs {v.values.shape}")
    x_init = _initial_state(sys, x_init)
    run_u = run_flow(sys, u.concat(future), x_init).values[u.depth:]
    run_v = run_flow(sys, v.concat(future), x_init).values[u.depth:]
    gaps = np.linalg.norm(run_u - run_v, axis=1)

    envelope = None
    violations = 0
    if with_envelope:
        certificate = certificate or certify_contraction(sys, w)
        if not certificate.certified:
            raise CertificateRequired(f"input forgetting envelope needs a certified contraction, "
                                      f"got {certificate.verdict.value}")
        decay = decay_ratios(w).decay
        distance = norm(u - v, NormSpec.weighted(w))
        steps = np.arange(1, future.depth + 1)
        envelope = certificate.filter_lipschitz * decay ** steps * distance
        violations = count_violations(gaps, envelope)
        if violations:
            logger.warning("input forgetting: %d envelope violations", violations)
    return ForgettingReport("input", gaps, envelope, violations)


def state_forgetting_experiment(sys, z, x0, xbar0, constants=None):
    """Gaps ||flow(z, x0)_t - flow(z, xbar0)_t|| with envelope L_Fx^{t-1} * gap_1 when L_Fx < 1"""
    flow_a = run_flow(sys, z, x0).values
    flow_b = run_flow(sys, z, xbar0).values
    gaps = np.linalg.norm(flow_a - flow_b, axis=1)

    constants = constants or _safe_constants(sys)
    envelope = None
    violations = 0
    if constants is not None and constants.l_fx < 1:
        if constants.sampled:
            logger.warning("state forgetting envelope uses sampled constants")
        envelope = gaps[0] * constants.l_fx ** np.arange(z.depth)
        violations = count_violations(gaps, envelope)
    else:
        logger.warning("state forgetting: no envelope, L_Fx is not below 1")
    return ForgettingReport("state", gaps, envelope, violations)
