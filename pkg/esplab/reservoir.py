"""
Reservoir map families
Linear, echo state network, trigonometric and regular state-affine systems
and user-supplied maps, each with analytic Jacobians, the Lipschitz
constants L_F, L_Fx, L_Fz (M_p, M_q for state-affine systems) and an
optional readout.
"""

import json
import logging
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, ClassVar

import numpy as np
from scipy.optimize import brentq
from scipy.stats import qmc

from esplab.errors import InvalidInput, Unsupported, UnboundedDomain

logger = logging.getLogger(__name__)

SUPPORTED_FAMILIES = ("linear", "esn", "trig_sas", "regular_sas")


def spectral_norm(matrix):
    """Largest singular value (0 for empty matrices)"""
    matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
    if matrix.size == 0:
        return 0.0
    return float(np.linalg.norm(matrix, 2))


def _frozen(array, name, ndim):
    arr = np.array(array, dtype=float)
    if arr.ndim != ndim:
        raise InvalidInput(f"{name} must have {ndim} dimensions, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidInput(f"{name} contains non-finite entries")
    arr.setflags(write=False)
    return arr


def _matrix(array, name, rows=None):
    arr = np.array(array, dtype=float)
    if arr.ndim == 1 and rows is not None and arr.shape[0] == rows:
        arr = arr[:, None]
    return _frozen(arr, name, 2)


# ============ CONSTANTS ============

class Provenance(str, Enum):
    ANALYTIC = "analytic"
    SAMPLED_LOWER_BOUND = "sampled_lower_bound"


@dataclass(frozen=True)
class SamplingSpec:
    """Sobol grid over [-state_box, state_box]^N x [-input_box, input_box]^n"""
    points: int = 4096
    state_box: float = 1.0
    input_box: float = 1.0
    seed: int = 0

    def draw(self, state_dim, input_dim):
        if self.points < 1:
            raise InvalidInput(f"sampling needs at least one point, got {self.points}")
        sampler = qmc.Sobol(d=state_dim + input_dim, scramble=True, seed=self.seed)
        unit = sampler.random_base2(m=max(0, math.ceil(math.log2(self.points))))[: self.points]
        cube = 2.0 * unit - 1.0
        logger.debug("Drew %d Sobol points in dimension %d", len(cube), state_dim + input_dim)
        return cube[:, :state_dim] * self.state_box, cube[:, state_dim:] * self.input_box


@dataclass(frozen=True)
class SystemConstants:
    l_f: float
    l_fx: float
    l_fz: float
    m_p: float | None = None
    m_q: float | None = None
    provenance: Provenance = Provenance.ANALYTIC
    notes: tuple = ()

    @property
    def sampled(self):
        return self.provenance == Provenance.SAMPLED_LOWER_BOUND

    def to_dict(self):
        return {
            "L_F": self.l_f,
            "L_Fx": self.l_fx,
            "L_Fz": self.l_fz,
            "M_p": self.m_p,
            "M_q": self.m_q,
            "provenance": self.provenance.value,
            "notes": list(self.notes),
        }

    @classmethod
    def from_dict(cls, data):
        return cls(
            l_f=float(data["L_F"]),
            l_fx=float(data["L_Fx"]),
            l_fz=float(data["L_Fz"]),
            m_p=None if data.get("M_p") is None else float(data["M_p"]),
            m_q=None if data.get("M_q") is None else float(data["M_q"]),
            provenance=Provenance(data.get("provenance", "analytic")),
            notes=tuple(data.get("notes", ())),
        )


# ============ SQUASHING FUNCTIONS ============

class SquashingKind(str, Enum):
    TANH = "tanh"
    ALGEBRAIC_SIGMOID = "algebraic_sigmoid"
    CUSTOM = "custom"


@dataclass(frozen=True)
class Squashing:
    """Componentwise activation with its Lipschitz constant L_sigma.

    ``bounded`` means sigma maps into [-1, 1]. Tanh and the algebraic
    sigmoid carry L_sigma = 1 and bounded = True; a custom squashing must
    state both.
    """
    kind: SquashingKind = SquashingKind.TANH
    func: Callable | None = None
    derivative: Callable | None = None
    lipschitz: float | None = None
    bounded: bool | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", SquashingKind(self.kind))
        if self.kind != SquashingKind.CUSTOM:
            if self.lipschitz is None:
                object.__setattr__(self, "lipschitz", 1.0)
            if self.bounded is None:
                object.__setattr__(self, "bounded", True)
            return
        if self.func is None or self.derivative is None:
            raise InvalidInput("custom squashing needs both the function and its derivative")
        if self.lipschitz is None or not math.isfinite(self.lipschitz) or self.lipschitz < 0:
            raise InvalidInput("custom squashing needs a finite, non-negative Lipschitz constant")
        if self.bounded is None:
            raise InvalidInput("custom squashing must state whether it maps into [-1, 1]")
        object.__setattr__(self, "lipschitz", float(self.lipschitz))
        object.__setattr__(self, "bounded", bool(self.bounded))

    @classmethod
    def tanh(cls):
        return cls(SquashingKind.TANH)

    @classmethod
    def algebraic_sigmoid(cls):
        return cls(SquashingKind.ALGEBRAIC_SIGMOID)

    def __call__(self, x):
        if self.kind == SquashingKind.TANH:
            return np.tanh(x)
        if self.kind == SquashingKind.ALGEBRAIC_SIGMOID:
            return x / np.sqrt(1.0 + x * x)
        return np.asarray(self.func(x), dtype=float)

    def prime(self, x):
        if self.kind == SquashingKind.TANH:
            return 1.0 - np.tanh(x) ** 2
        if self.kind == SquashingKind.ALGEBRAIC_SIGMOID:
            return (1.0 + x * x) ** -1.5
        return np.asarray(self.derivative(x), dtype=float)


# ============ READOUTS ============

class Readout(ABC):
    state_dim: int
    output_dim: int

    @abstractmethod
    def apply(self, x):
        """h(x)"""

    @abstractmethod
    def jacobian(self, x):
        """Dh(x), d x N"""

    @property
    def lipschitz(self):
        """c_h = sup ||Dh||, infinite when unbounded"""
        return math.inf

    def to_dict(self):
        raise Unsupported(f"{type(self).__name__} cannot be serialized")

    def _check(self, x):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if x.shape != (self.state_dim,):
            raise InvalidInput(f"readout expects a state of dim {self.state_dim}, got shape {x.shape}")
        return x


@dataclass(frozen=True, eq=False)
class LinearReadout(Readout):
    W: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "W", _matrix(self.W, "W"))

    @property
    def state_dim(self):
        return self.W.shape[1]

    @property
    def output_dim(self):
        return self.W.shape[0]

    def apply(self, x):
        return self.W @ self._check(x)

    def jacobian(self, x):
        self._check(x)
        return np.array(self.W)

    @property
    def lipschitz(self):
        return spectral_norm(self.W)

    def to_dict(self):
        return {"kind": "linear", "W": self.W.tolist()}


@dataclass(frozen=True, eq=False)
class PolynomialReadout(Readout):
    """h(x) = sum_k coefficients[k] * prod_i x_i ** exponents[k, i]

    ``exponents`` is K x N with non-negative integers, ``coefficients`` K x d.
    """
    exponents: np.ndarray
    coefficients: np.ndarray

    def __post_init__(self):
        exps = np.array(self.exponents, dtype=int)
        if exps.ndim != 2 or np.any(exps < 0):
            raise InvalidInput("polynomial exponents must be a K x N table of non-negative integers")
        coefs = np.array(self.coefficients, dtype=float)
        if coefs.ndim == 1:
            coefs = coefs[:, None]
        if coefs.shape[0] != exps.shape[0]:
            raise InvalidInput(f"{exps.shape[0]} monomials but {coefs.shape[0]} coefficient rows")
        exps.setflags(write=False)
        coefs.setflags(write=False)
        object.__setattr__(self, "exponents", exps)
        object.__setattr__(self, "coefficients", coefs)

    @property
    def state_dim(self):
        return self.exponents.shape[1]

    @property
    def output_dim(self):
        return self.coefficients.shape[1]

    @property
    def degree(self):
        if len(self.exponents) == 0:
            return 0
        return int(self.exponents.sum(axis=1).max())

    def apply(self, x):
        x = self._check(x)
        return self.coefficients.T @ np.prod(x ** self.exponents, axis=1)

    def jacobian(self, x):
        x = self._check(x)
        jac = np.zeros((self.output_dim, self.state_dim))
        for i in range(self.state_dim):
            lowered = self.exponents.copy()
            lowered[:, i] = np.maximum(lowered[:, i] - 1, 0)
            partial = self.exponents[:, i] * np.prod(x ** lowered, axis=1)
            jac[:, i] = self.coefficients.T @ partial
        return jac

    @property
    def lipschitz(self):
        if self.degree <= 1:
            return spectral_norm(self.jacobian(np.zeros(self.state_dim)))
        return math.inf

    def to_dict(self):
        return {"kind": "polynomial", "exponents": self.exponents.tolist(), "coefficients": self.coefficients.tolist()}


@dataclass(frozen=True, eq=False)
class CustomReadout(Readout):
    func: Callable
    derivative: Callable
    c_h: float
    state_dim: int
    output_dim: int

    def __post_init__(self):
        if not math.isfinite(self.c_h):
            raise InvalidInput("custom readout needs a finite bound c_h on its derivative")

    def apply(self, x):
        return np.atleast_1d(np.asarray(self.func(self._check(x)), dtype=float))

    def jacobian(self, x):
        return np.atleast_2d(np.asarray(self.derivative(self._check(x)), dtype=float))

    @property
    def lipschitz(self):
        return self.c_h


def readout_apply(r, x):
    """y = h(x)"""
    return r.apply(x)


def readout_jacobian(r, x):
    """Dh(x) as a d x N matrix"""
    return r.jacobian(x)


# ============ RESERVOIR SYSTEMS ============

class ReservoirSystem(ABC):
    """Reservoir map F: R^N x R^n -> R^N with optional readout h"""
    family: ClassVar[str] = "custom"
    readout: Readout | None

    @property
    @abstractmethod
    def state_dim(self):
        pass

    @property
    @abstractmethod
    def input_dim(self):
        pass

    @abstractmethod
    def apply(self, x, z):
        """F(x, z)"""

    @abstractmethod
    def jacobian_x(self, x, z):
        """D_xF(x, z), N x N"""

    @abstractmethod
    def jacobian_z(self, x, z):
        """D_zF(x, z), N x n"""

    @abstractmethod
    def constants(self, sampling=None):
        """SystemConstants for this map"""

    @property
    def compact_image(self):
        return False

    @property
    def image_diameter(self):
        return None

    @property
    def output_dim(self):
        return self.readout.output_dim if self.readout is not None else self.state_dim

    def apply_rows(self, X, Z):
        """F applied row by row to T x N states and T x n inputs"""
        return np.array([self.apply(x, z) for x, z in zip(X, Z)])

    def output(self, x):
        return readout_apply(self.readout, x) if self.readout is not None else np.asarray(x, dtype=float)

    def to_dict(self):
        raise Unsupported(f"{type(self).__name__} cannot be serialized; supported families: {', '.join(SUPPORTED_FAMILIES)}")

    def _check(self, x, z):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        z = np.atleast_1d(np.asarray(z, dtype=float))
        if x.shape != (self.state_dim,):
            raise InvalidInput(f"state must have dim {self.state_dim}, got shape {x.shape}")
        if z.shape != (self.input_dim,):
            raise InvalidInput(f"input must have dim {self.input_dim}, got shape {z.shape}")
        return x, z

    def _check_readout(self):
        if self.readout is not None and self.readout.state_dim != self.state_dim:
            raise InvalidInput(f"readout expects state dim {self.readout.state_dim}, system has {self.state_dim}")

    def _readout_dict(self, data):
        if self.readout is not None:
            data["readout"] = self.readout.to_dict()
        return data


@dataclass(frozen=True, eq=False)
class LinearReservoir(ReservoirSystem):
    """F(x, z) = A x + c z"""
    family: ClassVar[str] = "linear"
    A: np.ndarray
    c: np.ndarray
    readout: Readout | None = None

    def __post_init__(self):
        A = _frozen(self.A, "A", 2)
        if A.shape[0] != A.shape[1]:
            raise InvalidInput(f"A must be square, got shape {A.shape}")
        c = _matrix(self.c, "c", rows=A.shape[0])
        if c.shape[0] != A.shape[0]:
            raise InvalidInput(f"c must have {A.shape[0]} rows, got shape {c.shape}")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "c", c)
        self._check_readout()

    @property
    def state_dim(self):
        return self.A.shape[0]

    @property
    def input_dim(self):
        return self.c.shape[1]

    def apply(self, x, z):
        x, z = self._check(x, z)
        return self.A @ x + self.c @ z

    def apply_rows(self, X, Z):
        return X @ self.A.T + Z @ self.c.T

    def jacobian_x(self, x, z):
        self._check(x, z)
        return np.array(self.A)

    def jacobian_z(self, x, z):
        self._check(x, z)
        return np.array(self.c)

    def constants(self, sampling=None):
        return SystemConstants(
            l_f=spectral_norm(np.hstack([self.A, self.c])),
            l_fx=spectral_norm(self.A),
            l_fz=spectral_norm(self.c),
        )

    def to_dict(self):
        return self._readout_dict({"family": self.family, "A": self.A.tolist(), "c": self.c.tolist()})


@dataclass(frozen=True, eq=False)
class EchoStateNetwork(ReservoirSystem):
    """F(x, z) = sigma(A x + c z + zeta), sigma applied componentwise"""
    family: ClassVar[str] = "esn"
    A: np.ndarray
    c: np.ndarray
    zeta: np.ndarray | None = None
    sigma: Squashing = field(default_factory=Squashing.tanh)
    readout: Readout | None = None

    def __post_init__(self):
        A = _frozen(self.A, "A", 2)
        if A.shape[0] != A.shape[1]:
            raise InvalidInput(f"A must be square, got shape {A.shape}")
        c = _matrix(self.c, "c", rows=A.shape[0])
        if c.shape[0] != A.shape[0]:
            raise InvalidInput(f"c must have {A.shape[0]} rows, got shape {c.shape}")
        zeta = np.zeros(A.shape[0]) if self.zeta is None else self.zeta
        zeta = _frozen(np.atleast_1d(zeta), "zeta", 1)
        if zeta.shape != (A.shape[0],):
            raise InvalidInput(f"zeta must have length {A.shape[0]}, got shape {zeta.shape}")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "zeta", zeta)
        self._check_readout()

    @property
    def state_dim(self):
        return self.A.shape[0]

    @property
    def input_dim(self):
        return self.c.shape[1]

    @property
    def compact_image(self):
        return self.sigma.bounded

    @property
    def image_diameter(self):
        return 2.0 * math.sqrt(self.state_dim) if self.sigma.bounded else None

    def _preactivation(self, x, z):
        return self.A @ x + self.c @ z + self.zeta

    def apply(self, x, z):
        x, z = self._check(x, z)
        return self.sigma(self._preactivation(x, z))

    def apply_rows(self, X, Z):
        return self.sigma(X @ self.A.T + Z @ self.c.T + self.zeta)

    def jacobian_x(self, x, z):
        x, z = self._check(x, z)
        return self.sigma.prime(self._preactivation(x, z))[:, None] * self.A

    def jacobian_z(self, x, z):
        x, z = self._check(x, z)
        return self.sigma.prime(self._preactivation(x, z))[:, None] * self.c

    def constants(self, sampling=None):
        l_sigma = self.sigma.lipschitz
        return SystemConstants(
            l_f=l_sigma * spectral_norm(np.hstack([self.A, self.c])),
            l_fx=l_sigma * spectral_norm(self.A),
            l_fz=l_sigma * spectral_norm(self.c),
        )

    def to_dict(self):
        if self.sigma.kind == SquashingKind.CUSTOM:
            raise Unsupported("echo state networks with a custom squashing cannot be serialized")
        return self._readout_dict({
            "family": self.family,
            "A": self.A.tolist(),
            "c": self.c.tolist(),
            "zeta": self.zeta.tolist(),
            "sigma": self.sigma.kind.value,
        })


# ============ STATE-AFFINE SYSTEMS ============

@dataclass(frozen=True, eq=False)
class TrigTerm:
    """cos_coef * cos(cos_freq . z) + sin_coef * sin(sin_freq . z)

    Coefficients are N x N matrices for p terms and N-vectors for q terms.
    """
    cos_coef: np.ndarray
    cos_freq: np.ndarray
    sin_coef: np.ndarray
    sin_freq: np.ndarray

    def __post_init__(self):
        for name in ("cos_coef", "cos_freq", "sin_coef", "sin_freq"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if self.cos_coef.shape != self.sin_coef.shape:
            raise InvalidInput("cos and sin coefficients must have the same shape")
        if self.cos_freq.shape != self.sin_freq.shape or self.cos_freq.ndim != 1:
            raise InvalidInput("cos and sin frequencies must be vectors of the input dimension")

    def value(self, z):
        return self.cos_coef * math.cos(self.cos_freq @ z) + self.sin_coef * math.sin(self.sin_freq @ z)

    def to_dict(self):
        return {"cos": self.cos_coef.tolist(), "u": self.cos_freq.tolist(),
                "sin": self.sin_coef.tolist(), "v": self.sin_freq.tolist()}

    @classmethod
    def from_dict(cls, data):
        return cls(data["cos"], data["u"], data["sin"], data["v"])


def _sampled_sas_constants(sys, states, inputs, notes):
    m_p = m_q = l_fx = l_fz = l_f = 0.0
    for x, z in zip(states, inputs):
        p = sys.p(z)
        jac_z = sys.jacobian_z(x, z)
        m_p = max(m_p, spectral_norm(p))
        m_q = max(m_q, float(np.linalg.norm(sys.q(z))))
        l_fz = max(l_fz, spectral_norm(jac_z))
        l_f = max(l_f, spectral_norm(np.hstack([p, jac_z])))
    l_fx = m_p
    logger.warning("%s constants are sampled lower bounds over %d points", sys.family, len(states))
    return SystemConstants(l_f, l_fx, l_fz, m_p, m_q, Provenance.SAMPLED_LOWER_BOUND, notes)


@dataclass(frozen=True, eq=False)
class TrigonometricSAS(ReservoirSystem):
    """F(x, z) = p(z) x + q(z) with trigonometric polynomials p and q"""
    family: ClassVar[str] = "trig_sas"
    p_terms: tuple
    q_terms: tuple
    state_dim_: int = field(default=0, repr=False)
    input_dim_: int = field(default=0, repr=False)
    readout: Readout | None = None

    def __post_init__(self):
        p_terms = tuple(t if isinstance(t, TrigTerm) else TrigTerm(*t) for t in self.p_terms)
        q_terms = tuple(t if isinstance(t, TrigTerm) else TrigTerm(*t) for t in self.q_terms)
        if not p_terms:
            raise InvalidInput("trigonometric state-affine system needs at least one p term")
        N = p_terms[0].cos_coef.shape[0]
        n = p_terms[0].cos_freq.shape[0]
        for term in p_terms:
            if term.cos_coef.shape != (N, N) or term.cos_freq.shape != (n,):
                raise InvalidInput(f"p terms must have {N} x {N} coefficients and frequencies of dim {n}")
        for term in q_terms:
            if term.cos_coef.shape != (N,) or term.cos_freq.shape != (n,):
                raise InvalidInput(f"q terms must have length-{N} coefficients and frequencies of dim {n}")
        object.__setattr__(self, "p_terms", p_terms)
        object.__setattr__(self, "q_terms", q_terms)
        object.__setattr__(self, "state_dim_", N)
        object.__setattr__(self, "input_dim_", n)
        self._check_readout()

    @property
    def state_dim(self):
        return self.state_dim_

    @property
    def input_dim(self):
        return self.input_dim_

    def p(self, z):
        return sum(term.value(z) for term in self.p_terms)

    def q(self, z):
        if not self.q_terms:
            return np.zeros(self.state_dim)
        return sum(term.value(z) for term in self.q_terms)

    def apply(self, x, z):
        x, z = self._check(x, z)
        return self.p(z) @ x + self.q(z)

    def jacobian_x(self, x, z):
        x, z = self._check(x, z)
        return self.p(z)

    def jacobian_z(self, x, z):
        x, z = self._check(x, z)
        jac = np.zeros((self.state_dim, self.input_dim))
        for term in self.p_terms:
            jac -= np.outer(term.cos_coef @ x * math.sin(term.cos_freq @ z), term.cos_freq)
            jac += np.outer(term.sin_coef @ x * math.cos(term.sin_freq @ z), term.sin_freq)
        for term in self.q_terms:
            jac -= np.outer(term.cos_coef * math.sin(term.cos_freq @ z), term.cos_freq)
            jac += np.outer(term.sin_coef * math.cos(term.sin_freq @ z), term.sin_freq)
        return jac

    def constants(self, sampling=None):
        sampling = sampling or SamplingSpec()
        states, inputs = sampling.draw(self.state_dim, self.input_dim)
        notes = (f"sup over Sobol grid of {len(states)} points, state box {sampling.state_box}, "
                 f"input box {sampling.input_box}",)
        return _sampled_sas_constants(self, states, inputs, notes)

    def to_dict(self):
        return self._readout_dict({
            "family": self.family,
            "p": [t.to_dict() for t in self.p_terms],
            "q": [t.to_dict() for t in self.q_terms],
        })


def _monomials(exponents, z):
    return np.prod(z ** exponents, axis=1)


def _monomial_gradients(exponents, z):
    """K x n gradients of z ** exponents[k]"""
    grads = np.zeros(exponents.shape, dtype=float)
    for i in range(exponents.shape[1]):
        lowered = exponents.copy()
        lowered[:, i] = np.maximum(lowered[:, i] - 1, 0)
        grads[:, i] = exponents[:, i] * np.prod(z ** lowered, axis=1)
    return grads


@dataclass(frozen=True, eq=False)
class RegularSAS(ReservoirSystem):
    """F(x, z) = p(z) x + q(z) with polynomial p and q on the ball of radius input_bound

    ``p_terms`` pairs an exponent vector over the inputs with an N x N matrix,
    ``q_terms`` pairs one with an N-vector.
    """
    family: ClassVar[str] = "regular_sas"
    p_terms: tuple
    q_terms: tuple = ()
    input_bound: float | None = None
    readout: Readout | None = None

    def __post_init__(self):
        if not self.p_terms:
            raise InvalidInput("regular state-affine system needs at least one p term")
        p_exps = np.array([e for e, _ in self.p_terms], dtype=int)
        p_coefs = np.array([c for _, c in self.p_terms], dtype=float)
        if p_exps.ndim != 2 or p_coefs.ndim != 3 or p_coefs.shape[1] != p_coefs.shape[2]:
            raise InvalidInput("p terms must pair exponent vectors with square matrices")
        N, n = p_coefs.shape[1], p_exps.shape[1]
        if self.q_terms:
            q_exps = np.array([e for e, _ in self.q_terms], dtype=int)
            q_coefs = np.array([c for _, c in self.q_terms], dtype=float)
        else:
            q_exps, q_coefs = np.zeros((0, n), dtype=int), np.zeros((0, N))
        if q_exps.shape[1] != n or q_coefs.shape[1:] != (N,):
            raise InvalidInput(f"q terms must pair exponent vectors of dim {n} with vectors of length {N}")
        if np.any(p_exps < 0) or np.any(q_exps < 0):
            raise InvalidInput("monomial exponents must be non-negative")
        if self.input_bound is not None and not 0 < self.input_bound < math.inf:
            raise InvalidInput(f"input bound must be positive and finite, got {self.input_bound}")
        for name, arr in (("_p_exps", p_exps), ("_p_coefs", p_coefs), ("_q_exps", q_exps), ("_q_coefs", q_coefs)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        self._check_readout()

    @property
    def state_dim(self):
        return self._p_coefs.shape[1]

    @property
    def input_dim(self):
        return self._p_exps.shape[1]

    def p(self, z):
        return np.tensordot(_monomials(self._p_exps, z), self._p_coefs, axes=1)

    def q(self, z):
        return _monomials(self._q_exps, z) @ self._q_coefs

    def apply(self, x, z):
        x, z = self._check(x, z)
        return self.p(z) @ x + self.q(z)

    def jacobian_x(self, x, z):
        x, z = self._check(x, z)
        return self.p(z)

    def jacobian_z(self, x, z):
        x, z = self._check(x, z)
        images = self._p_coefs @ x
        jac = images.T @ _monomial_gradients(self._p_exps, z)
        if len(self._q_exps):
            jac = jac + self._q_coefs.T @ _monomial_gradients(self._q_exps, z)
        return jac

    def constants(self, sampling=None):
        if self.input_bound is None:
            raise UnboundedDomain("regular state-affine constants need a finite input bound M_dom; "
                                  "over an unbounded domain L_F is infinite")
        sampling = sampling or SamplingSpec()
        states, inputs = replace_box(sampling, self.input_bound).draw(self.state_dim, self.input_dim)
        radii = np.linalg.norm(inputs, axis=1)
        outside = radii > self.input_bound
        inputs[outside] *= (self.input_bound / radii[outside])[:, None]
        notes = (f"sup over Sobol grid of {len(states)} points, state box {sampling.state_box}, "
                 f"input ball radius {self.input_bound}",)
        return _sampled_sas_constants(self, states, inputs, notes)

    def to_dict(self):
        return self._readout_dict({
            "family": self.family,
            "p": [{"exponents": e.tolist(), "coef": c.tolist()} for e, c in zip(self._p_exps, self._p_coefs)],
            "q": [{"exponents": e.tolist(), "coef": c.tolist()} for e, c in zip(self._q_exps, self._q_coefs)],
            "input_bound": self.input_bound,
        })


def replace_box(sampling, input_box):
    return SamplingSpec(sampling.points, sampling.state_box, input_box, sampling.seed)


@dataclass(frozen=True, eq=False)
class CustomReservoir(ReservoirSystem):
    """User-supplied F with optional Jacobian callables"""
    func: Callable
    state_dim_: int
    input_dim_: int
    jac_x: Callable | None = None
    jac_z: Callable | None = None
    compact: bool = False
    diameter: float | None = None
    readout: Readout | None = None

    def __post_init__(self):
        if self.compact and self.diameter is None:
            raise InvalidInput("a compact-image custom reservoir needs its image diameter")
        self._check_readout()

    @property
    def state_dim(self):
        return self.state_dim_

    @property
    def input_dim(self):
        return self.input_dim_

    @property
    def compact_image(self):
        return self.compact

    @property
    def image_diameter(self):
        return self.diameter if self.compact else None

    def apply(self, x, z):
        x, z = self._check(x, z)
        return np.atleast_1d(np.asarray(self.func(x, z), dtype=float))

    def jacobian_x(self, x, z):
        if self.jac_x is None:
            raise Unsupported("custom reservoir has no state Jacobian")
        x, z = self._check(x, z)
        return np.atleast_2d(np.asarray(self.jac_x(x, z), dtype=float))

    def jacobian_z(self, x, z):
        if self.jac_z is None:
            raise Unsupported("custom reservoir has no input Jacobian")
        x, z = self._check(x, z)
        return np.atleast_2d(np.asarray(self.jac_z(x, z), dtype=float))

    def constants(self, sampling=None):
        sampling = sampling or SamplingSpec()
        states, inputs = sampling.draw(self.state_dim, self.input_dim)
        l_fx = l_fz = l_f = 0.0
        for x, z in zip(states, inputs):
            jx, jz = self.jacobian_x(x, z), self.jacobian_z(x, z)
            l_fx = max(l_fx, spectral_norm(jx))
            l_fz = max(l_fz, spectral_norm(jz))
            l_f = max(l_f, spectral_norm(np.hstack([jx, jz])))
        logger.warning("custom reservoir constants are sampled lower bounds over %d points", len(states))
        notes = (f"sup over Sobol grid of {len(states)} points",)
        return SystemConstants(l_f, l_fx, l_fz, provenance=Provenance.SAMPLED_LOWER_BOUND, notes=notes)


# ============ CHECKS AND HELPERS ============

def fd_jacobians(sys, x, z):
    """Central-difference D_xF and D_zF with step 1e-5 * max(1, ||point||)"""
    x, z = sys._check(x, z)
    h = 1e-5 * max(1.0, float(np.linalg.norm(np.concatenate([x, z]))))
    jac_x = np.empty((sys.state_dim, sys.state_dim))
    jac_z = np.empty((sys.state_dim, sys.input_dim))
    for i in range(sys.state_dim):
        e = np.zeros(sys.state_dim)
        e[i] = h
        jac_x[:, i] = (sys.apply(x + e, z) - sys.apply(x - e, z)) / (2 * h)
    for i in range(sys.input_dim):
        e = np.zeros(sys.input_dim)
        e[i] = h
        jac_z[:, i] = (sys.apply(x, z + e) - sys.apply(x, z - e)) / (2 * h)
    return jac_x, jac_z


def jacobian_error(sys, x, z):
    """Largest relative mismatch between analytic and finite-difference Jacobians"""
    fd_x, fd_z = fd_jacobians(sys, x, z)
    errors = []
    for analytic, numeric in ((sys.jacobian_x(x, z), fd_x), (sys.jacobian_z(x, z), fd_z)):
        scale = max(1.0, float(np.abs(analytic).max()))
        errors.append(float(np.abs(analytic - numeric).max()) / scale)
    return max(errors)


def scalar_fixed_points(sys, z, bracket=(-2.0, 2.0), grid=2001):
    """All fixed points of x -> F(x, z) in the bracket for a one-dimensional state"""
    if sys.state_dim != 1:
        raise Unsupported("fixed-point search needs a scalar state")
    z = np.atleast_1d(np.asarray(z, dtype=float))

    def gap(x):
        return float(sys.apply(np.array([x]), z)[0]) - x

    xs = np.linspace(bracket[0], bracket[1], grid)
    gs = np.array([gap(x) for x in xs])
    roots = [float(x) for x, g in zip(xs, gs) if g == 0.0]
    for i in np.nonzero(gs[:-1] * gs[1:] < 0)[0]:
        roots.append(brentq(gap, xs[i], xs[i + 1], xtol=1e-14, rtol=4 * np.finfo(float).eps))
    roots.sort()
    unique = [r for k, r in enumerate(roots) if k == 0 or r - roots[k - 1] > 1e-10]
    logger.debug("Fixed points of scalar system at z=%s: %s", z, unique)
    return np.array(unique)


# ============ JSON DESCRIPTIONS ============

def readout_from_dict(data):
    if data is None:
        return None
    kind = data.get("kind")
    try:
        if kind == "linear":
            return LinearReadout(data["W"])
        if kind == "polynomial":
            return PolynomialReadout(data["exponents"], data["coefficients"])
    except KeyError as e:
        raise InvalidInput(f"readout {kind!r} is missing field {e}")
    raise Unsupported(f"unknown readout kind {kind!r} (supported: linear, polynomial)")


def system_from_dict(data):
    """Build a ReservoirSystem from its JSON description"""
    family = data.get("family")
    if family not in SUPPORTED_FAMILIES:
        raise Unsupported(f"unknown family {family!r} (supported: {', '.join(SUPPORTED_FAMILIES)})")
    readout = readout_from_dict(data.get("readout"))
    try:
        if family == "linear":
            return LinearReservoir(data["A"], data["c"], readout=readout)
        if family == "esn":
            sigma = Squashing(SquashingKind(data.get("sigma", "tanh")))
            return EchoStateNetwork(data["A"], data["c"], data.get("zeta"), sigma, readout=readout)
        if family == "trig_sas":
            return TrigonometricSAS(
                tuple(TrigTerm.from_dict(t) for t in data["p"]),
                tuple(TrigTerm.from_dict(t) for t in data.get("q", [])),
                readout=readout,
            )
        return RegularSAS(
            tuple((t["exponents"], t["coef"]) for t in data["p"]),
            tuple((t["exponents"], t["coef"]) for t in data.get("q", [])),
            data.get("input_bound"),
            readout=readout,
        )
    except KeyError as e:
        raise InvalidInput(f"{family} system description is missing field {e}")
    except ValueError as e:
        if isinstance(e, InvalidInput):
            raise
        raise InvalidInput(f"{family} system description has an invalid field: {e}")


def system_to_dict(sys):
    return sys.to_dict()


def load_system(path):
    """Read a system description JSON file"""
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except FileNotFoundError:
        raise InvalidInput(f"system file not found: {path}")
    except json.JSONDecodeError as e:
        raise InvalidInput(f"{path}: malformed JSON at line {e.lineno} column {e.colno}: {e.msg}")
    logger.info("Loaded %s system from %s", data.get("family"), path)
    return system_from_dict(data)
