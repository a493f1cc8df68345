"""Eigenbasis field algebra for the three one-dimensional model families.

Three bases are supported:

* ``dirichlet-sine`` -- eigenfunctions ``sqrt(2) sin(k pi x)`` on (0, 1),
  modes k = 1, 2, ..., eigenvalues ``pi^2 k^2``.  Real coefficients.
* ``fourier-torus`` -- complex exponentials ``exp(2 i pi n x)`` on the unit
  torus, modes enumerated (0, 1, -1, 2, -2, ...), eigenvalues
  ``4 pi^2 n^2 + 1``.  Complex coefficients with conjugate symmetry, so the
  represented function is real valued.
* ``wave-phase`` -- pairs (position, velocity) over the dirichlet-sine scalar
  basis, with the phase-space norm ``|x|_s^2 = |u|_s^2 + |v|_{s-1}^2``.

All field types are immutable; operations are pure functions.
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.fft

__all__ = [
    "BasisId", "DIRICHLET_SINE", "FOURIER_TORUS", "WAVE_PHASE",
    "SpectralField", "PhaseField", "Trajectory",
    "field", "phase_field", "basis_vector",
    "hs_norm", "apply_semigroup", "apply_group_wave",
    "project", "project_complement",
    "to_collocation", "from_collocation",
    "sup_norm_trajectory", "trajectory_from_values",
    "S_RANGE",
]

# Exponent range used anywhere an interpolation norm appears.
S_RANGE = (-2.0, 2.0)


def _check_s(s: float) -> float:
    s = float(s)
    if not (S_RANGE[0] <= s <= S_RANGE[1]):
        raise ValueError(f"regularity exponent s={s} outside supported range {S_RANGE}")
    return s


@dataclass(frozen=True)
class BasisId:
    """Identity of an eigenbasis; carries the mode enumeration and eigenvalue law."""

    kind: str  # 'dirichlet-sine' | 'fourier-torus' | 'wave-phase'

    def __post_init__(self):
        if self.kind not in ("dirichlet-sine", "fourier-torus", "wave-phase"):
            raise ValueError(f"unknown basis kind {self.kind!r}")

    @property
    def is_complex(self) -> bool:
        return self.kind == "fourier-torus"

    def n_coeffs(self, dimension: int) -> int:
        """Number of stored coefficients for dimension N."""
        if self.kind == "fourier-torus":
            return 2 * dimension + 1
        return dimension

    def eigenvalues(self, dimension: int) -> np.ndarray:
        """Eigenvalues of -A for the enumerated modes, in storage order."""
        return _eigenvalues(self.kind, dimension)

    def frequencies(self, dimension: int):
        """Mode labels in storage order (sine: k=1..N; torus: 0,1,-1,...)."""
        if self.kind == "fourier-torus":
            return _torus_freqs(dimension)
        return np.arange(1, dimension + 1)


DIRICHLET_SINE = BasisId("dirichlet-sine")
FOURIER_TORUS = BasisId("fourier-torus")
WAVE_PHASE = BasisId("wave-phase")


@lru_cache(maxsize=128)
def _torus_freqs(dimension: int) -> np.ndarray:
    # (0, 1, -1, 2, -2, ..., N, -N)
    n = np.zeros(2 * dimension + 1, dtype=np.int64)
    n[1::2] = np.arange(1, dimension + 1)
    n[2::2] = -np.arange(1, dimension + 1)
    n.flags.writeable = False
    return n


@lru_cache(maxsize=256)
def _eigenvalues(kind: str, dimension: int) -> np.ndarray:
    if kind == "fourier-torus":
        n = _torus_freqs(dimension)
        lam = 4.0 * np.pi**2 * n.astype(np.float64) ** 2 + 1.0
    elif kind in ("dirichlet-sine", "wave-phase"):
        k = np.arange(1, dimension + 1, dtype=np.float64)
        lam = np.pi**2 * k**2
    else:  # pragma: no cover
        raise ValueError(kind)
    lam.flags.writeable = False
    return lam


# ---------------------------------------------------------------------------
# Field types
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SpectralField:
    """A field represented by coefficients in a scalar eigenbasis.

    ``coeffs`` has length ``basis.n_coeffs(dimension)`` and is read-only.
    Fourier-torus coefficients are conjugate-symmetric: the represented
    function is real valued.
    """

    basis: BasisId
    coeffs: np.ndarray
    dimension: int

    def __post_init__(self):
        expected = self.basis.n_coeffs(self.dimension)
        if self.coeffs.shape != (expected,):
            raise ValueError(
                f"{self.basis.kind} field of dimension {self.dimension} needs "
                f"{expected} coefficients, got shape {self.coeffs.shape}")


@dataclass(frozen=True, eq=False)
class PhaseField:
    """Position/velocity pair over the dirichlet-sine scalar basis."""

    position: SpectralField
    velocity: SpectralField

    def __post_init__(self):
        u, v = self.position, self.velocity
        if u.basis.kind != "dirichlet-sine" or v.basis.kind != "dirichlet-sine":
            raise ValueError("phase fields use the dirichlet-sine scalar basis")
        if u.dimension != v.dimension:
            raise ValueError("position and velocity must share the dimension")

    @property
    def dimension(self) -> int:
        return self.position.dimension


def field(basis: BasisId, coeffs, dimension: int | None = None) -> SpectralField:
    """Construct a field, enforcing dtype and (for the torus) conjugate symmetry."""
    coeffs = np.asarray(coeffs)
    if basis.kind == "fourier-torus":
        coeffs = coeffs.astype(np.complex128)
        if dimension is None:
            if coeffs.size % 2 != 1:
                raise ValueError("fourier-torus coefficient count must be odd (2N+1)")
            dimension = (coeffs.size - 1) // 2
        coeffs = _symmetrize_torus(coeffs)
    else:
        coeffs = coeffs.astype(np.float64)
        if dimension is None:
            dimension = coeffs.size
    coeffs = coeffs.copy()
    coeffs.flags.writeable = False
    return SpectralField(basis, coeffs, int(dimension))


def _symmetrize_torus(coeffs: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    """Enforce c_{-n} = conj(c_n); reject coefficients that are not nearly symmetric."""
    out = coeffs.copy()
    if abs(out[0].imag) > tol * max(1.0, abs(out[0])):
        raise ValueError("fourier-torus mode 0 must be real for a real-valued field")
    out[0] = out[0].real
    plus, minus = out[1::2], out[2::2]
    defect = np.abs(minus - np.conj(plus))
    scale = np.maximum(1.0, np.abs(plus))
    if np.any(defect > 1e-6 * scale):
        raise ValueError("fourier-torus coefficients are not conjugate-symmetric")
    avg = 0.5 * (plus + np.conj(minus))
    out[1::2] = avg
    out[2::2] = np.conj(avg)
    return out


def phase_field(position: SpectralField, velocity: SpectralField) -> PhaseField:
    return PhaseField(position, velocity)


def basis_vector(basis: BasisId, mode: int, dimension: int) -> SpectralField:
    """A unit basis direction as a field of the given dimension.

    dirichlet-sine: the k-th eigenfunction (mode = k, 1-based).  For the
    torus, `mode` indexes the enumeration (0, 1, -1, 2, -2, ...) and the
    returned field is the normalized real direction (e_n + e_{-n})/sqrt(2)
    for n != 0, since a lone complex exponential is not a real-valued field.
    """
    coeffs = np.zeros(basis.n_coeffs(dimension),
                      dtype=np.complex128 if basis.is_complex else np.float64)
    if basis.is_complex:
        freqs = _torus_freqs(dimension)
        n = freqs[mode]
        if n == 0:
            coeffs[mode] = 1.0
        else:
            partner = int(np.where(freqs == -n)[0][0])
            coeffs[mode] = coeffs[partner] = 1.0 / np.sqrt(2.0)
    else:
        coeffs[mode - 1] = 1.0
    return field(basis, coeffs, dimension)


# ---------------------------------------------------------------------------
# Norms, semigroup, group, projections
# ---------------------------------------------------------------------------


def hs_norm_sq_coeffs(coeffs: np.ndarray, lam: np.ndarray, s: float) -> np.ndarray:
    """Squared interpolation norm(s); broadcasts over leading axes of `coeffs`."""
    w = lam ** s if s != 0.0 else np.ones_like(lam)
    mag2 = (coeffs.real**2 + coeffs.imag**2) if np.iscomplexobj(coeffs) else coeffs**2
    return mag2 @ w


def hs_norm(u, s: float) -> float:
    """Interpolation-space norm ``|u|_s = sqrt(sum_k lambda_k^s |u_k|^2)``.

    Accepts a :class:`SpectralField` or a :class:`PhaseField`; for the latter
    the phase-space norm ``sqrt(|position|_s^2 + |velocity|_{s-1}^2)`` is
    returned.
    """
    s = _check_s(s)
    if isinstance(u, PhaseField):
        pu, pv = u.position, u.velocity
        lam = pu.basis.eigenvalues(pu.dimension)
        return float(np.sqrt(hs_norm_sq_coeffs(pu.coeffs, lam, s)
                             + hs_norm_sq_coeffs(pv.coeffs, lam, s - 1.0)))
    if u.coeffs.size == 0:
        return 0.0
    lam = u.basis.eigenvalues(u.dimension)
    return float(np.sqrt(hs_norm_sq_coeffs(u.coeffs, lam, s)))


def apply_semigroup(u: SpectralField, t: float) -> SpectralField:
    """Heat semigroup: per mode ``c_k -> exp(-t lambda_k) c_k``.  Requires t >= 0."""
    if t < 0:
        raise ValueError("the semigroup is only defined for t >= 0")
    lam = u.basis.eigenvalues(u.dimension)
    return field(u.basis, np.exp(-t * lam) * u.coeffs, u.dimension)


def group_rotation_factors(lam: np.ndarray, t: float):
    """(cos, sin/sqrt(lam), -sqrt(lam) sin) factors of the wave group at time t."""
    root = np.sqrt(lam)
    theta = t * root
    c, s = np.cos(theta), np.sin(theta)
    return c, s / root, -root * s


def apply_group_wave(x: PhaseField, t: float) -> PhaseField:
    """Wave group: blockwise rotation of each (position, velocity) mode pair.

    ``u_k -> cos(t sqrt(l_k)) u_k + sin(t sqrt(l_k)) v_k / sqrt(l_k)``,
    ``v_k -> -sqrt(l_k) sin(t sqrt(l_k)) u_k + cos(t sqrt(l_k)) v_k``.
    Defined for all real t (a group, not just a semigroup); isometric in
    every phase-space norm.
    """
    lam = x.position.basis.eigenvalues(x.dimension)
    c, s_over, minus_root_s = group_rotation_factors(lam, t)
    u, v = x.position.coeffs, x.velocity.coeffs
    new_u = c * u + s_over * v
    new_v = minus_root_s * u + c * v
    b = x.position.basis
    return PhaseField(field(b, new_u, x.dimension), field(b, new_v, x.dimension))


def band_size(basis: BasisId, n: int) -> int:
    """Number of stored coefficients with mode index inside the band of size n."""
    return basis.n_coeffs(n)


def project(u, n: int):
    """Orthogonal projection onto the first n modes (torus: |freq| <= n)."""
    if isinstance(u, PhaseField):
        return PhaseField(project(u.position, n), project(u.velocity, n))
    if n > u.dimension:
        raise ValueError(f"projection level {n} exceeds field dimension {u.dimension}")
    keep = band_size(u.basis, n)
    coeffs = u.coeffs.copy()
    coeffs[keep:] = 0.0
    return field(u.basis, coeffs, u.dimension)


def project_complement(u, n: int):
    """Complementary projection: zero the first n modes, keep the rest."""
    if isinstance(u, PhaseField):
        return PhaseField(project_complement(u.position, n),
                          project_complement(u.velocity, n))
    if n > u.dimension:
        raise ValueError(f"projection level {n} exceeds field dimension {u.dimension}")
    keep = band_size(u.basis, n)
    coeffs = u.coeffs.copy()
    coeffs[:keep] = 0.0
    return field(u.basis, coeffs, u.dimension)


# ---------------------------------------------------------------------------
# Collocation transforms
# ---------------------------------------------------------------------------
#
# dirichlet-sine: values on the interior nodes x_j = j/M, j = 1..M-1, via the
# odd-extension sine transform (DST-I).  fourier-torus: values on x_j = j/M,
# j = 0..M-1, via the real FFT on the conjugate-symmetric half spectrum.
# Both round-trip exactly (up to roundoff) when M >= 2 (dimension + 1).


def _require_nodes(m_nodes: int, dimension: int):
    if m_nodes < 2 * (dimension + 1):
        raise ValueError(
            f"m_nodes={m_nodes} below the anti-aliasing minimum "
            f"2(dimension+1)={2 * (dimension + 1)}")


def sine_values_batch(coeffs: np.ndarray, m_nodes: int) -> np.ndarray:
    """Values of sine-basis field(s) on interior nodes j/M, j=1..M-1 (batched)."""
    # values_j = sqrt(2) sum_k c_k sin(pi k j / M) = DST-I(c padded) / sqrt(2)
    return scipy.fft.dst(coeffs, type=1, n=m_nodes - 1, axis=-1) / np.sqrt(2.0)


def sine_coeffs_batch(values: np.ndarray, dimension: int) -> np.ndarray:
    """Inverse of :func:`sine_values_batch`; exact for band-limited data."""
    m_nodes = values.shape[-1] + 1
    c = scipy.fft.dst(values, type=1, axis=-1) / (np.sqrt(2.0) * m_nodes)
    return c[..., :dimension]


def _torus_half_to_interleaved(half: np.ndarray, dimension: int) -> np.ndarray:
    out = np.empty(half.shape[:-1] + (2 * dimension + 1,), dtype=np.complex128)
    out[..., 0] = half[..., 0]
    out[..., 1::2] = half[..., 1:dimension + 1]
    out[..., 2::2] = np.conj(half[..., 1:dimension + 1])
    return out


def _torus_interleaved_to_half(coeffs: np.ndarray) -> np.ndarray:
    dimension = (coeffs.shape[-1] - 1) // 2
    half = np.empty(coeffs.shape[:-1] + (dimension + 1,), dtype=np.complex128)
    half[..., 0] = coeffs[..., 0]
    half[..., 1:] = coeffs[..., 1::2]
    return half


def torus_values_batch(coeffs: np.ndarray, m_nodes: int) -> np.ndarray:
    """Real values of conjugate-symmetric torus field(s) on nodes j/M (batched)."""
    half = _torus_interleaved_to_half(coeffs)
    return np.fft.irfft(half, n=m_nodes, axis=-1) * m_nodes


def torus_coeffs_batch(values: np.ndarray, dimension: int) -> np.ndarray:
    """Inverse of :func:`torus_values_batch` for real-valued node data."""
    m_nodes = values.shape[-1]
    half = np.fft.rfft(values, axis=-1)[..., :dimension + 1] / m_nodes
    return _torus_half_to_interleaved(half, dimension)


def to_collocation(u: SpectralField, m_nodes: int) -> np.ndarray:
    """Physical-space values of `u` on the uniform collocation grid.

    dirichlet-sine returns the M-1 interior values (the boundary values
    vanish identically); fourier-torus returns the M periodic node values.
    """
    _require_nodes(m_nodes, u.dimension)
    if u.basis.kind == "fourier-torus":
        return torus_values_batch(u.coeffs, m_nodes)
    return sine_values_batch(u.coeffs, m_nodes)


def from_collocation(values: np.ndarray, basis: BasisId, dimension: int) -> SpectralField:
    """Project node values back onto the first `dimension` modes."""
    values = np.asarray(values, dtype=np.float64)
    m_nodes = values.shape[-1] + (1 if basis.kind != "fourier-torus" else 0)
    _require_nodes(m_nodes, dimension)
    if basis.kind == "fourier-torus":
        return field(basis, torus_coeffs_batch(values, dimension), dimension)
    return field(basis, sine_coeffs_batch(values, dimension), dimension)


# ---------------------------------------------------------------------------
# Trajectories
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Time-gridded sequence of fields sharing one basis and dimension.

    ``values`` has shape (M+1, K) for scalar states or (M+1, 2, N) for phase
    states, where row i is the state at ``times[i]``.  The grid is uniform.
    """

    times: np.ndarray
    basis: BasisId
    values: np.ndarray
    is_phase: bool = False

    def __post_init__(self):
        t = self.times
        if t.ndim != 1 or t.size < 2 or t[0] != 0.0:
            raise ValueError("trajectory grid must start at t=0 with at least two nodes")
        steps = np.diff(t)
        if np.any(steps <= 0) or not np.allclose(steps, steps[0], rtol=1e-9, atol=1e-12):
            raise ValueError("trajectory grid must be uniform and strictly increasing")
        if self.values.shape[0] != t.size:
            raise ValueError("one state per grid node required")

    @property
    def n_steps(self) -> int:
        return self.times.size - 1

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])

    @property
    def horizon(self) -> float:
        return float(self.times[-1])

    @property
    def dimension(self) -> int:
        if self.is_phase:
            return self.values.shape[-1]
        if self.basis.kind == "fourier-torus":
            return (self.values.shape[-1] - 1) // 2
        return self.values.shape[-1]

    def state(self, i: int):
        if self.is_phase:
            return PhaseField(field(self.basis, self.values[i, 0]),
                              field(self.basis, self.values[i, 1]))
        return field(self.basis, self.values[i])

    def nearest_index(self, t: float) -> int:
        return int(round(t / self.dt))


def trajectory_from_values(times, basis: BasisId, values, is_phase: bool = False) -> Trajectory:
    times = np.asarray(times, dtype=np.float64).copy()
    values = np.asarray(values).copy()
    times.flags.writeable = False
    values.flags.writeable = False
    return Trajectory(times, basis, values, is_phase)


def sup_norm_trajectory(traj: Trajectory, s: float) -> float:
    """Max over grid nodes of the state norm (grid surrogate for the time sup)."""
    s = _check_s(s)
    if traj.is_phase:
        lam = traj.basis.eigenvalues(traj.values.shape[-1])
        sq = (hs_norm_sq_coeffs(traj.values[:, 0, :], lam, s)
              + hs_norm_sq_coeffs(traj.values[:, 1, :], lam, s - 1.0))
    else:
        dim = traj.dimension
        lam = traj.basis.eigenvalues(dim)
        sq = hs_norm_sq_coeffs(traj.values, lam, s)
    return float(np.sqrt(np.max(sq)))
