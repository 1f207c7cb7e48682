"""
Weighted sequence spaces on finite windows
Weighting sequences, decay ratios, sup / weighted / p-weighted norms,
time delays and projections with their operator norms.

A semi-infinite sequence (..., z_{-2}, z_{-1}, z_0) is represented by a
Window holding its most recent T entries, oldest row first, and is
implicitly extended by zeros for t <= -T.
"""

import csv
import json
import logging
import math
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path
from typing import NamedTuple

import numpy as np

from esplab.errors import DepthExceeded, InvalidInput, InvalidWeighting

logger = logging.getLogger(__name__)

# Relative slack when comparing empirical ratios against analytic ones
RATIO_RTOL = 1e-12


class WeightKind(str, Enum):
    GEOMETRIC = "geometric"
    HARMONIC = "harmonic"
    GAUSSIAN_EXP = "gaussian_exp"
    CUSTOM = "custom"


class DecayRatios(NamedTuple):
    """Decay ratio D_w and inverse decay ratio L_w"""
    decay: float
    inverse_decay: float
    lower_bound: bool = False


@dataclass(frozen=True)
class WeightingSequence:
    """Strictly decreasing w: N -> (0, 1] with w_0 = 1 and limit 0.

    ``param`` is lambda for geometric sequences and d for harmonic ones.
    Custom sequences are given by a finite table continued geometrically
    with the last observed consecutive ratio. ``exponent`` raises the
    whole sequence to a power, w_t -> w_t ** exponent.
    """
    kind: WeightKind
    param: float | None = None
    table: tuple = ()
    exponent: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "kind", WeightKind(self.kind))
        if not self.exponent > 0:
            raise InvalidWeighting(f"exponent must be positive, got {self.exponent}")

        if self.kind == WeightKind.GEOMETRIC:
            if self.param is None or not 0 < self.param < 1:
                raise InvalidWeighting(f"geometric weighting needs 0 < lambda < 1, got {self.param}")
        elif self.kind == WeightKind.HARMONIC:
            if self.param is None or not self.param > 0:
                raise InvalidWeighting(f"harmonic weighting needs d > 0, got {self.param}")
        elif self.kind == WeightKind.CUSTOM:
            table = tuple(float(v) for v in self.table)
            object.__setattr__(self, "table", table)
            if len(table) < 2:
                raise InvalidWeighting("custom weighting needs at least two table entries")
            if abs(table[0] - 1.0) > 1e-12:
                raise InvalidWeighting(f"custom weighting must start at w_0 = 1, got {table[0]}")
            if not all(math.isfinite(v) and v > 0 for v in table):
                raise InvalidWeighting("custom weighting entries must be finite and positive")
            if any(b >= a for a, b in zip(table, table[1:])):
                raise InvalidWeighting("custom weighting table is not strictly decreasing")

    # ============ CONSTRUCTORS ============

    @classmethod
    def geometric(cls, lam):
        return cls(WeightKind.GEOMETRIC, param=float(lam))

    @classmethod
    def harmonic(cls, d):
        return cls(WeightKind.HARMONIC, param=float(d))

    @classmethod
    def gaussian_exp(cls):
        return cls(WeightKind.GAUSSIAN_EXP)

    @classmethod
    def custom(cls, table):
        return cls(WeightKind.CUSTOM, table=tuple(table))

    def power(self, exponent):
        """Weighting sequence w ** exponent"""
        return replace(self, exponent=self.exponent * exponent)

    # ============ VALUES ============

    def log_values(self, count):
        """log w_t for t = 0..count-1"""
        t = np.arange(count, dtype=float)
        if self.kind == WeightKind.GEOMETRIC:
            logs = t * math.log(self.param)
        elif self.kind == WeightKind.HARMONIC:
            logs = -np.log1p(self.param * t)
        elif self.kind == WeightKind.GAUSSIAN_EXP:
            logs = -t ** 2
        else:
            table = np.log(np.asarray(self.table))
            tail_ratio = table[-1] - table[-2]
            logs = np.empty(count)
            head = min(count, len(table))
            logs[:head] = table[:head]
            if count > len(table):
                steps = np.arange(1, count - len(table) + 1)
                logs[len(table):] = table[-1] + steps * tail_ratio
        return self.exponent * logs

    def values(self, count):
        """w_t for t = 0..count-1 (may underflow to 0 for fast-decaying kinds)"""
        return np.exp(self.log_values(count))

    def analytic_ratios(self):
        """Closed-form (D_w, L_w), or None when only sampled ratios exist"""
        e = self.exponent
        if self.kind == WeightKind.GEOMETRIC:
            return DecayRatios(self.param ** e, self.param ** (-e))
        if self.kind == WeightKind.HARMONIC:
            return DecayRatios(1.0, (1.0 + self.param) ** e)
        if self.kind == WeightKind.GAUSSIAN_EXP:
            return DecayRatios(math.exp(-e), math.inf)
        return None

    # ============ SERIALIZATION ============

    def to_dict(self):
        data = {"kind": self.kind.value}
        if self.kind == WeightKind.GEOMETRIC:
            data["lambda"] = self.param
        elif self.kind == WeightKind.HARMONIC:
            data["d"] = self.param
        elif self.kind == WeightKind.CUSTOM:
            data["table"] = list(self.table)
        if self.exponent != 1.0:
            data["exponent"] = self.exponent
        return data

    @classmethod
    def from_dict(cls, data):
        try:
            kind = WeightKind(data.get("kind"))
        except ValueError:
            supported = ", ".join(k.value for k in WeightKind)
            raise InvalidWeighting(f"unknown weighting kind {data.get('kind')!r} (supported: {supported})")
        exponent = float(data.get("exponent", 1.0))
        try:
            if kind == WeightKind.GEOMETRIC:
                return cls(kind, param=float(data["lambda"]), exponent=exponent)
            if kind == WeightKind.HARMONIC:
                return cls(kind, param=float(data["d"]), exponent=exponent)
            if kind == WeightKind.CUSTOM:
                return cls(kind, table=tuple(data["table"]), exponent=exponent)
        except KeyError as e:
            raise InvalidWeighting(f"weighting {kind.value!r} is missing field {e}")
        return cls(kind, exponent=exponent)


def parse_weighting(text):
    """Weighting from a JSON string or a path to a JSON file"""
    source = text
    path = Path(text)
    if not text.lstrip().startswith("{") and path.exists():
        source = path.read_text()
    try:
        data = json.loads(source)
    except json.JSONDecodeError as e:
        raise InvalidWeighting(f"malformed weighting JSON at line {e.lineno} column {e.colno}: {e.msg}")
    return WeightingSequence.from_dict(data)


def decay_ratios(w, horizon=64):
    """Decay ratio D_w and inverse decay ratio L_w.

    Closed forms are used for geometric, harmonic and gaussian sequences.
    Custom sequences get the sup of consecutive ratios over t = 0..horizon,
    flagged as a lower bound.
    """
    if horizon < 2:
        raise InvalidInput(f"horizon must be at least 2, got {horizon}")

    ratios = w.analytic_ratios()
    if ratios is None:
        logs = w.log_values(horizon + 2)
        steps = np.diff(logs)
        if np.any(steps >= 0):
            raise InvalidWeighting("weighting sequence is not strictly decreasing")
        ratios = DecayRatios(float(np.exp(steps.max())), float(np.exp(-steps.min())), lower_bound=True)
        logger.debug("Sampled decay ratios over horizon %d: %s", horizon, ratios)

    if ratios.decay * ratios.inverse_decay < 1.0 - RATIO_RTOL:
        raise InvalidWeighting(f"decay ratios violate L_w * D_w >= 1: {ratios}")
    return ratios


def decay_ratios_p(w, p, horizon=64):
    """Decay ratios D_{w,p} = D_w^(1/p) and L_{w,p} = L_w^(1/p) of the p-weighted norm"""
    if p < 1:
        raise InvalidInput(f"p must be at least 1, got {p}")
    ratios = decay_ratios(w, horizon)
    return DecayRatios(ratios.decay ** (1.0 / p), ratios.inverse_decay ** (1.0 / p), ratios.lower_bound)


# ============ WINDOWS ============

@dataclass(frozen=True, eq=False)
class Window:
    """Finite truncation (z_{-T+1}, ..., z_0) of a left semi-infinite sequence.

    ``values`` is a read-only T x n array; time index t maps to row T-1+t.
    """
    values: np.ndarray

    def __post_init__(self):
        arr = np.array(self.values, dtype=float)
        if arr.ndim == 1:
            arr = arr[:, None]
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise InvalidInput(f"window must be a non-empty T x n array, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise InvalidInput("window contains non-finite entries")
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)

    @classmethod
    def zeros(cls, depth, dim=1):
        return cls(np.zeros((depth, dim)))

    @classmethod
    def constant(cls, value, depth):
        value = np.atleast_1d(np.asarray(value, dtype=float))
        return cls(np.tile(value, (depth, 1)))

    @property
    def depth(self):
        return self.values.shape[0]

    @property
    def dim(self):
        return self.values.shape[1]

    def at(self, t):
        """Entry z_t for -T < t <= 0"""
        if not -self.depth < t <= 0:
            raise DepthExceeded(f"lag {t} outside window of depth {self.depth}")
        return self.values[self.depth - 1 + t]

    def is_constant(self, atol=0.0):
        return bool(np.all(np.abs(self.values - self.values[0]) <= atol))

    def concat(self, newer):
        """This window followed in time by ``newer``"""
        if newer.dim != self.dim:
            raise InvalidInput(f"cannot concatenate windows of dims {self.dim} and {newer.dim}")
        return Window(np.vstack([self.values, newer.values]))

    def fit_depth(self, depth):
        """Window of exactly ``depth`` rows: the most recent entries, zero-padded at the oldest end"""
        if depth < 1:
            raise InvalidInput(f"window depth must be positive, got {depth}")
        if depth <= self.depth:
            return Window(self.values[self.depth - depth:])
        return Window.zeros(depth - self.depth, self.dim).concat(self)

    def allclose(self, other, rtol=1e-12, atol=0.0):
        return self.values.shape == other.values.shape and np.allclose(self.values, other.values, rtol=rtol, atol=atol)

    def _coerce(self, other):
        if isinstance(other, Window):
            if other.values.shape != self.values.shape:
                raise InvalidInput(f"window shapes differ: {self.values.shape} vs {other.values.shape}")
            return other.values
        return other

    def __add__(self, other):
        return Window(self.values + self._coerce(other))

    def __sub__(self, other):
        return Window(self.values - self._coerce(other))

    def __mul__(self, scalar):
        return Window(self.values * scalar)

    __rmul__ = __mul__

    def __neg__(self):
        return Window(-self.values)

    def __repr__(self):
        return f"Window(depth={self.depth}, dim={self.dim})"

    # ============ SERIALIZATION ============

    def to_dict(self):
        return {"depth": self.depth, "dim": self.dim, "values": self.values.tolist()}

    @classmethod
    def from_dict(cls, data):
        try:
            return cls(np.asarray(data["values"], dtype=float))
        except KeyError:
            raise InvalidInput("window JSON is missing field 'values'")
        except (TypeError, ValueError) as e:
            raise InvalidInput(f"window JSON values are not a numeric table: {e}")

    def to_csv(self, filename):
        """Write one row per time index, oldest first"""
        with open(filename, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f)
            writer.writerow(["t"] + [f"z{i}" for i in range(self.dim)])
            for row, t in zip(self.values, range(-self.depth + 1, 1)):
                writer.writerow([t] + [repr(float(v)) for v in row])

    @classmethod
    def from_csv(cls, filename):
        """Read a window written by to_csv; a leading 't' column is optional"""
        rows = []
        drop_first = False
        with open(filename, newline="", encoding="utf-8") as f:
            reader = csv.reader(f)
            for line_no, record in enumerate(reader, start=1):
                if not record or all(not cell.strip() for cell in record):
                    continue
                if line_no == 1 and not _is_number(record[0]):
                    drop_first = record[0].strip().lower() == "t"
                    continue
                cells = record[1:] if drop_first else record
                try:
                    rows.append([float(cell) for cell in cells])
                except ValueError:
                    raise InvalidInput(f"{filename}: line {line_no}: non-numeric entry in {record}")
                if len(rows[-1]) != len(rows[0]):
                    raise InvalidInput(f"{filename}: line {line_no}: expected {len(rows[0])} columns, got {len(rows[-1])}")
        if not rows:
            raise InvalidInput(f"{filename}: no data rows")
        return cls(np.asarray(rows))


def _is_number(text):
    try:
        float(text)
        return True
    except ValueError:
        return False


def as_window(z):
    return z if isinstance(z, Window) else Window(z)


# ============ NORMS ============

class NormKind(str, Enum):
    SUP = "sup"
    WEIGHTED = "weighted"
    P_WEIGHTED = "p_weighted"


@dataclass(frozen=True)
class NormSpec:
    kind: NormKind
    weighting: WeightingSequence | None = None
    p: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "kind", NormKind(self.kind))
        if self.kind != NormKind.SUP and self.weighting is None:
            raise InvalidInput(f"{self.kind.value} norm needs a weighting sequence")
        if self.kind == NormKind.P_WEIGHTED and self.p < 1:
            raise InvalidInput(f"p must be at least 1, got {self.p}")

    @classmethod
    def sup(cls):
        return cls(NormKind.SUP)

    @classmethod
    def weighted(cls, w):
        return cls(NormKind.WEIGHTED, w)

    @classmethod
    def p_weighted(cls, p, w):
        return cls(NormKind.P_WEIGHTED, w, float(p))

    def lag_weights(self, depth):
        """w_{-t} aligned with window rows, oldest first"""
        if self.kind == NormKind.SUP:
            return np.ones(depth)
        return self.weighting.values(depth)[::-1]

    def effective_log_weights(self, depth):
        """log of the per-row factor the vector norm is scaled by (w or w^(1/p))"""
        if self.kind == NormKind.SUP:
            return np.zeros(depth)
        logs = self.weighting.log_values(depth)[::-1]
        return logs / self.p if self.kind == NormKind.P_WEIGHTED else logs

    def ratios(self, horizon):
        if self.kind == NormKind.SUP:
            return DecayRatios(1.0, 1.0)
        if self.kind == NormKind.P_WEIGHTED:
            return decay_ratios_p(self.weighting, self.p, horizon)
        return decay_ratios(self.weighting, horizon)


def norm(z, spec):
    """Sup, weighted or p-weighted norm of a window with Euclidean inner norm"""
    z = as_window(z)
    row_norms = np.linalg.norm(z.values, axis=1)
    if spec.kind == NormKind.SUP:
        return float(row_norms.max())
    weights = spec.lag_weights(z.depth)
    if spec.kind == NormKind.WEIGHTED:
        return float((row_norms * weights).max())
    return float(np.sum(row_norms ** spec.p * weights) ** (1.0 / spec.p))


# ============ TIME DELAYS AND PROJECTIONS ============

def shift(z, tau):
    """Time delay restricted to the window, depth preserved.

    tau > 0 delays the sequence (T_{-tau}): the tau oldest rows drop out and
    zeros enter at the recent end. tau < 0 advances it (T_{|tau|}): the |tau|
    most recent rows drop out and zeros enter at the oldest end.
    """
    z = as_window(z)
    if abs(tau) >= z.depth:
        raise DepthExceeded(f"shift {tau} does not fit a window of depth {z.depth}")
    if tau == 0:
        return z
    pad = np.zeros((abs(tau), z.dim))
    if tau > 0:
        return Window(np.vstack([z.values[tau:], pad]))
    return Window(np.vstack([pad, z.values[:tau]]))


def project(z, t):
    """p_t(z) = z_t"""
    return as_window(z).at(t)


@dataclass(frozen=True)
class Projection:
    lag: int


@dataclass(frozen=True)
class Shift:
    tau: int


class OperatorNormEstimate(NamedTuple):
    estimate: float
    analytic: float
    exact: bool


def analytic_operator_norm(op, spec, depth):
    """Operator norm from the closed forms (exact=False marks an upper bound)"""
    if isinstance(op, Projection):
        if not -depth < op.lag <= 0:
            raise DepthExceeded(f"projection lag {op.lag} outside window of depth {depth}")
        log_w = spec.effective_log_weights(depth)[depth - 1 + op.lag]
        return math.exp(-log_w), True

    ratios = spec.ratios(max(depth + 1, 2))
    if op.tau == 0:
        return 1.0, True
    if op.tau < 0:
        return ratios.inverse_decay ** (-op.tau), op.tau == -1
    return ratios.decay ** op.tau, op.tau == 1


def _random_windows(spec, trials, depth, dim, rng):
    """Windows z_t = r_t u_t / w_{-t} with u_t on the unit sphere and r_t in (0, 1]"""
    directions = rng.standard_normal((trials, depth, dim))
    directions /= np.linalg.norm(directions, axis=2, keepdims=True)
    radii = 1.0 - rng.random((trials, depth, 1))
    with np.errstate(over="ignore"):
        scale = np.exp(-spec.effective_log_weights(depth))[None, :, None]
    samples = directions * radii * scale
    samples[~np.isfinite(samples)] = 0.0
    return samples


def _impulse_witnesses(spec, depth, dim):
    """z_s = delta_{s,t} v / w_{-t}, one per lag"""
    with np.errstate(over="ignore"):
        scale = np.exp(-spec.effective_log_weights(depth))
    witnesses = []
    for row in range(depth):
        if not np.isfinite(scale[row]):
            continue
        z = np.zeros((depth, dim))
        z[row, 0] = scale[row]
        witnesses.append(z)
    return witnesses


def operator_norm_estimate(op, spec, trials=200, depth=32, dim=2, seed=0):
    """Monte-Carlo sup of ||op(z)|| / ||z|| next to the analytic value.

    The candidate set contains the impulse witnesses, which attain the
    analytic value for projections and for one-step shifts.
    """
    if trials < 1:
        raise InvalidInput(f"trials must be at least 1, got {trials}")
    analytic, exact = analytic_operator_norm(op, spec, depth)
    rng = np.random.default_rng(seed)

    candidates = list(_random_windows(spec, trials, depth, dim, rng)) + _impulse_witnesses(spec, depth, dim)
    best = 0.0
    for values in candidates:
        z = Window(values)
        size = norm(z, spec)
        if size == 0.0:
            continue
        if isinstance(op, Projection):
            image = float(np.linalg.norm(project(z, op.lag)))
        else:
            image = norm(shift(z, op.tau), spec)
        best = max(best, image / size)

    if best > analytic * (1 + 1e-9):
        logger.warning("Operator norm estimate %.17g exceeds analytic value %.17g", best, analytic)
    return OperatorNormEstimate(best, analytic, exact)
