"""Concrete model assembly: nonlinearities, covariances, regularity exponents.

A model is one of three families:

* ``heat`` -- semilinear parabolic equation on (0, 1) with Dirichlet
  boundary conditions (dirichlet-sine basis), diagonal covariance.
* ``wave`` -- damped-driven semilinear wave equation in phase-space form
  over the same scalar basis; noise enters the velocity component.
* ``torus`` -- parabolic equation on the unit torus (fourier-torus basis)
  whose covariance is the square of a multiplication operator, the
  concrete case where the covariance does not commute with the generator.

Nonlinearities are Nemytskii compositions with globally C^2-bounded scalar
maps, evaluated by collocation.
"""

import math
from dataclasses import dataclass

import numpy as np

from .basis import (
    BasisId, DIRICHLET_SINE, FOURIER_TORUS, PhaseField, SpectralField,
    field, sine_coeffs_batch, sine_values_batch, torus_coeffs_batch,
    torus_values_batch,
)

__all__ = [
    "NonlinearityDescriptor", "CovarianceDescriptor", "ModelSpec",
    "AdmissibilityError", "zero_nonlinearity", "nemytskii",
    "diagonal_covariance", "multiplication_covariance", "default_torus_b",
    "compute_sQ", "predicted_rates", "PredictedRates",
    "eval_nonlinearity", "nemytskii_batch", "collocation_nodes",
    "q_values", "b_half_spectrum", "heat_model", "wave_model", "torus_model",
]


class AdmissibilityError(ValueError):
    """A model parameter set violates an admissibility rule."""

    def __init__(self, rule: str, detail: str):
        self.rule = rule
        self.detail = detail
        super().__init__(f"{rule}: {detail}")


# ---------------------------------------------------------------------------
# Nonlinearity catalog
# ---------------------------------------------------------------------------
#
# Both entries are bounded with bounded first and second derivatives, so the
# induced Nemytskii operator is C^2-bounded H -> H (regularity offset 0).
# sup|f''| for x/(1+x^2) is attained at x = sqrt(2)-1 with value (3+2*sqrt(2))/4.

_CATALOG = {
    "scaled-sine": {
        "f": np.sin,
        "df": np.cos,
        "sup_f": 1.0,
        "sup_df": 1.0,
        "sup_d2f": 1.0,
    },
    "bounded-cubic-surrogate": {
        "f": lambda x: x / (1.0 + x**2),
        "df": lambda x: (1.0 - x**2) / (1.0 + x**2) ** 2,
        "sup_f": 0.5,
        "sup_df": 1.0,
        "sup_d2f": (3.0 + 2.0 * math.sqrt(2.0)) / 4.0,
    },
}


@dataclass(frozen=True)
class NonlinearityDescriptor:
    """Pointwise nonlinearity; `kind` is 'zero' or 'nemytskii'."""

    kind: str
    name: str | None = None
    alpha: float = 1.0
    s_F: float = 0.0

    def __post_init__(self):
        if self.kind not in ("zero", "nemytskii"):
            raise ValueError(f"unknown nonlinearity kind {self.kind!r}")
        if self.kind == "nemytskii" and self.name not in _CATALOG:
            raise ValueError(f"unknown catalog map {self.name!r}; "
                             f"available: {sorted(_CATALOG)}")
        if self.s_F < 0:
            raise ValueError("regularity offset s_F must be nonnegative")

    @property
    def sup_f(self) -> float:
        if self.kind == "zero":
            return 0.0
        return abs(self.alpha) * _CATALOG[self.name]["sup_f"]

    @property
    def sup_df(self) -> float:
        if self.kind == "zero":
            return 0.0
        return abs(self.alpha) * _CATALOG[self.name]["sup_df"]

    @property
    def sup_d2f(self) -> float:
        if self.kind == "zero":
            return 0.0
        return abs(self.alpha) * _CATALOG[self.name]["sup_d2f"]

    def pointwise(self, x: np.ndarray) -> np.ndarray:
        if self.kind == "zero":
            return np.zeros_like(x)
        return self.alpha * _CATALOG[self.name]["f"](x)


def zero_nonlinearity() -> NonlinearityDescriptor:
    return NonlinearityDescriptor("zero")


def nemytskii(name: str, alpha: float = 1.0) -> NonlinearityDescriptor:
    return NonlinearityDescriptor("nemytskii", name, alpha)


# ---------------------------------------------------------------------------
# Covariance descriptors
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CovarianceDescriptor:
    """Noise covariance: diagonal in the eigenbasis, or a multiplication square.

    diagonal: q_k = lambda_k^{-r} with r >= 0 (r = 0 is space-time white noise).
    multiplication: Q = B^2 with B pointwise multiplication by a smooth positive
    function b on the torus, stored through its Fourier half-spectrum
    ``b_half = [b_0, b_1, ..., b_m]`` (b_{-n} = conj(b_n), so b is real).
    """

    kind: str
    r: float = 0.0
    b_half: tuple = ()
    decay_order: float = 2.0

    def __post_init__(self):
        if self.kind not in ("diagonal", "multiplication"):
            raise ValueError(f"unknown covariance kind {self.kind!r}")
        if self.kind == "diagonal":
            if self.r < 0:
                raise ValueError("diagonal exponent r must be >= 0")
        else:
            if self.decay_order < 2:
                raise ValueError("multiplication covariance requires decay order m >= 2")
            b = np.asarray(self.b_half, dtype=complex)
            if b.size == 0:
                raise ValueError("multiplication covariance needs Fourier data for b")
            if abs(b[0].imag) > 1e-12:
                raise ValueError("b_0 must be real (b is real-valued)")
            vals = _b_values(b, 4 * max(64, 4 * (b.size - 1)))
            if np.min(vals) <= 0:
                raise ValueError("b must be positive at all collocation nodes")

    @property
    def support_radius(self) -> int:
        """Largest |n| with b_n != 0 (multiplication kind)."""
        b = np.asarray(self.b_half, dtype=complex)
        nz = np.nonzero(np.abs(b) > 0)[0]
        return int(nz[-1]) if nz.size else 0

    @property
    def coefficient_bound(self) -> float:
        """Recorded constant C with |b_n| <= C |n|^{-m} for n != 0."""
        b = np.asarray(self.b_half, dtype=complex)
        if b.size <= 1:
            return 0.0
        n = np.arange(1, b.size)
        return float(np.max(np.abs(b[1:]) * n**self.decay_order))


def diagonal_covariance(r: float = 0.0) -> CovarianceDescriptor:
    return CovarianceDescriptor("diagonal", r=r)


def multiplication_covariance(b_half, decay_order: float = 2.0) -> CovarianceDescriptor:
    return CovarianceDescriptor("multiplication", b_half=tuple(complex(v) for v in b_half),
                                decay_order=decay_order)


def default_torus_b() -> CovarianceDescriptor:
    """b(x) = 2 + cos(2 pi x): b_0 = 2, b_{+-1} = 1/2, positivity 1 <= b <= 3."""
    return multiplication_covariance([2.0, 0.5], decay_order=8.0)


def _b_values(b_half: np.ndarray, m_nodes: int) -> np.ndarray:
    dim = b_half.size - 1
    interleaved = np.zeros(2 * dim + 1, dtype=complex)
    interleaved[0] = b_half[0]
    if dim:
        interleaved[1::2] = b_half[1:]
        interleaved[2::2] = np.conj(b_half[1:])
    return torus_values_batch(interleaved, m_nodes)


def b_half_spectrum(cov: CovarianceDescriptor) -> np.ndarray:
    return np.asarray(cov.b_half, dtype=complex)


def q_values(cov: CovarianceDescriptor, basis: BasisId, dimension: int) -> np.ndarray:
    """Per-mode variances q_k = lambda_k^{-r} in storage order (diagonal only)."""
    if cov.kind != "diagonal":
        raise ValueError("q_values is defined for diagonal covariances")
    lam = basis.eigenvalues(dimension)
    return lam ** (-cov.r) if cov.r != 0.0 else np.ones_like(lam)


def compute_sQ(cov: CovarianceDescriptor, basis: BasisId) -> float:
    """Regularity exponent of the stochastic convolution, capped at 1.

    With eigenvalues growing like k^2, the trace ``sum_k lambda_k^{s-1} q_k``
    with q_k = lambda_k^{-r} is finite exactly when s < r + 1/2.  An
    invertible multiplication operator leaves the regularity of white noise
    unchanged, giving 1/2.
    """
    if cov.kind == "diagonal":
        return min(cov.r + 0.5, 1.0)
    if cov.kind == "multiplication":
        if basis.kind != "fourier-torus":
            raise ValueError("multiplication covariance lives on the torus")
        return 0.5
    raise ValueError(f"unsupported covariance kind {cov.kind!r}")


# ---------------------------------------------------------------------------
# Model specification
# ---------------------------------------------------------------------------

_FAMILY_BASIS = {"heat": DIRICHLET_SINE, "wave": DIRICHLET_SINE, "torus": FOURIER_TORUS}


@dataclass(frozen=True, eq=False)
class ModelSpec:
    """One concrete equation: family, coefficients, initial state, horizon.

    `s` is the working regularity exponent of all trajectory norms; `s0`
    declares the regularity of the initial condition (finite-mode data is
    smooth, so `math.inf` is a valid declaration).
    """

    family: str
    nonlinearity: NonlinearityDescriptor
    covariance: CovarianceDescriptor
    x0: object  # SpectralField (heat/torus) or PhaseField (wave)
    s: float
    s0: float = math.inf
    gamma: float = 0.0
    horizon: float = 1.0

    def __post_init__(self):
        validate_model(self)

    @property
    def basis(self) -> BasisId:
        return _FAMILY_BASIS[self.family]

    @property
    def s_Q(self) -> float:
        return compute_sQ(self.covariance, self.basis)

    @property
    def is_phase(self) -> bool:
        return self.family == "wave"


def validate_model(m: ModelSpec) -> None:
    if m.family not in _FAMILY_BASIS:
        raise AdmissibilityError("family", f"unknown family {m.family!r}")
    if m.horizon <= 0:
        raise AdmissibilityError("horizon", "T must be positive")
    if m.gamma < 0:
        raise AdmissibilityError("damping", "gamma must be nonnegative")
    if m.family != "wave" and m.gamma != 0.0:
        raise AdmissibilityError("damping", "gamma is a wave-family parameter")
    if m.covariance.kind == "multiplication" and m.family != "torus":
        raise AdmissibilityError("covariance", "multiplication covariance requires the torus family")

    s_F, s, s_Q = m.nonlinearity.s_F, m.s, compute_sQ(m.covariance, _FAMILY_BASIS[m.family])
    if m.family == "wave":
        if not (s_F <= s <= 0.5):
            raise AdmissibilityError("s in [s_F, 1/2]", f"s={s}, s_F={s_F}")
    else:
        if not (s_F <= s < 1.0):
            raise AdmissibilityError("s_F <= s < 1", f"s={s}, s_F={s_F}")
    if not s < s_Q:
        raise AdmissibilityError("s < s_Q", f"s={s}, s_Q={s_Q}")
    if m.s0 < s:
        raise AdmissibilityError("s0 >= s", f"s0={m.s0}, s={s}")

    if m.family == "wave":
        if not isinstance(m.x0, PhaseField):
            raise AdmissibilityError("initial condition", "wave family needs a phase-space state")
    else:
        if not isinstance(m.x0, SpectralField) or m.x0.basis != _FAMILY_BASIS[m.family]:
            raise AdmissibilityError("initial condition",
                                     f"{m.family} family needs a {_FAMILY_BASIS[m.family].kind} field")


@dataclass(frozen=True)
class PredictedRates:
    """Decay exponents in N (positive numbers; fitted log-log slopes approach
    their negatives)."""

    strong_N_exponent: float
    weak_N_exponent: float


def predicted_rates(model: ModelSpec) -> PredictedRates:
    """Dominant convergence exponents in N.

    Eigenvalues grow like N^2, so an error bound lambda_N^{-a} is N^{-2a}.
    For the parabolic families the stochastic terms dominate (assuming
    s0 >= 2 s_Q - s so the initial-condition term does not), giving strong
    exponent s_Q - s and weak exponent 2 (s_Q - s).

    For the wave family the residual term caps both rates through
    sbar = min(1 - s_F, s0): the group action maps mode pairs to mode pairs,
    so the damping drift component stays inside the resolved band and drops
    out of the residual, while the Nemytskii component enters through the
    velocity slot and is one phase-space derivative smoother than the state.
    """
    s, s_Q, s0 = model.s, model.s_Q, model.s0
    if model.family in ("heat", "torus"):
        return PredictedRates(strong_N_exponent=s_Q - s, weak_N_exponent=2.0 * (s_Q - s))
    sbar = min(1.0 - model.nonlinearity.s_F, s0)
    return PredictedRates(strong_N_exponent=min(sbar - s, s_Q - s),
                          weak_N_exponent=min(sbar - s, 2.0 * (s_Q - s)))


# ---------------------------------------------------------------------------
# Nonlinearity evaluation
# ---------------------------------------------------------------------------


def collocation_nodes(dimension: int) -> int:
    """Node-count policy for physical-space evaluation: 4x the band size,
    twice the anti-aliasing minimum 2(dimension+1)."""
    return max(4 * dimension, 2 * (dimension + 1))


def nemytskii_batch(nl: NonlinearityDescriptor, coeffs: np.ndarray, basis: BasisId,
                    dimension: int, m_nodes: int | None = None) -> np.ndarray:
    """Coefficients of f o u for a batch of coefficient rows.

    Transforms to the collocation grid, applies the scalar map pointwise, and
    transforms back onto the first `dimension` modes.
    """
    if nl.kind == "zero":
        return np.zeros_like(coeffs)
    if m_nodes is None:
        m_nodes = collocation_nodes(dimension)
    if basis.kind == "fourier-torus":
        vals = torus_values_batch(coeffs, m_nodes)
        return torus_coeffs_batch(nl.pointwise(vals), dimension)
    vals = sine_values_batch(coeffs, m_nodes)
    return sine_coeffs_batch(nl.pointwise(vals), dimension)


def eval_nonlinearity(model: ModelSpec, u: SpectralField,
                      m_nodes: int | None = None) -> SpectralField:
    """F(u) for a scalar state of the model (heat/torus directly; for the wave
    family this is the position-component map, and the phase-space drift
    (0, F(u) - gamma v) is assembled by the solver)."""
    if u.basis != model.basis:
        raise ValueError("state basis does not match the model")
    out = nemytskii_batch(model.nonlinearity, u.coeffs, u.basis, u.dimension, m_nodes)
    return field(u.basis, out, u.dimension)


# ---------------------------------------------------------------------------
# Convenience constructors for the three families
# ---------------------------------------------------------------------------


def heat_model(nonlinearity: NonlinearityDescriptor, covariance: CovarianceDescriptor,
               x0: SpectralField, s: float = 0.0, s0: float = math.inf,
               horizon: float = 0.5) -> ModelSpec:
    return ModelSpec("heat", nonlinearity, covariance, x0, s=s, s0=s0, horizon=horizon)


def wave_model(nonlinearity: NonlinearityDescriptor, covariance: CovarianceDescriptor,
               x0: PhaseField, gamma: float = 1.0, s: float = 0.0,
               s0: float = math.inf, horizon: float = 0.5) -> ModelSpec:
    return ModelSpec("wave", nonlinearity, covariance, x0, s=s, s0=s0,
                     gamma=gamma, horizon=horizon)


def torus_model(nonlinearity: NonlinearityDescriptor, covariance: CovarianceDescriptor,
                x0: SpectralField, s: float = 0.0, s0: float = math.inf,
                horizon: float = 0.5) -> ModelSpec:
    return ModelSpec("torus", nonlinearity, covariance, x0, s=s, s0=s0, horizon=horizon)
