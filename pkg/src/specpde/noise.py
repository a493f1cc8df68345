"""Brownian paths, exact stochastic-convolution sampling, and moment oracles.

The cylindrical Wiener process is carried as a matrix of scalar Brownian
increment rows, one row per real basis direction, generated from keyed
counter-based streams (see :mod:`specpde.rng`) so that rows are independent
of how many of them a run retains.  On the torus the real rows are the
constant, cosine and sine directions; complex mode increments are assembled
conjugate-symmetrically from them.

Commuting (diagonal) covariances are integrated with the exact per-mode
Ornstein-Uhlenbeck transition, so the sampled grid marginals carry no time
discretization error.  The multiplication-operator covariance and the
commutator process use the left-point exponential rule with a per-mode
variance correction that keeps every output-mode marginal variance exact
(see the moment oracles below); cross-mode correlations remain O(dt)
accurate and are controlled by the step-halving policy.
"""

from dataclasses import dataclass

import numpy as np

from . import rng
from .basis import (
    BasisId, FOURIER_TORUS, SpectralField, Trajectory, field,
    trajectory_from_values,
)
from .models import CovarianceDescriptor, b_half_spectrum, q_values

__all__ = [
    "NoisePath", "StochasticConvolutionSample",
    "sample_noise_path", "rows_required", "complex_increments",
    "ou_step_factors", "convolution_step_exact", "convolution_step_multiplicative",
    "sample_convolution_diagonal", "commutator_apply", "commutator_matrix_element",
    "sample_rho_N", "rho_moment_oracle", "rho_moment_oracle_bruteforce",
    "tail_moment_oracle", "tail_moment_bound",
    "apply_b_batch", "variance_correction",
]


# ---------------------------------------------------------------------------
# Paths
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class NoisePath:
    """Mode-major matrix of Brownian increments over a uniform grid on [0, T].

    ``increments[k, m]`` is the N(0, dt) increment of scalar row k over step
    m, a deterministic function of (seed, k, m) alone.
    """

    seed: int
    n_modes: int
    m_steps: int
    horizon: float
    increments: np.ndarray

    @property
    def dt(self) -> float:
        return self.horizon / self.m_steps

    def unit_normals(self) -> np.ndarray:
        """The increments rescaled to unit variance."""
        return self.increments / np.sqrt(self.dt)


def sample_noise_path(seed: int, n_modes: int, m_steps: int, horizon: float,
                      basis: BasisId | None = None) -> NoisePath:
    """Draw the increment matrix for `n_modes` scalar rows over `m_steps` steps.

    The basis argument only documents intent: rows are basis-agnostic scalar
    Brownian motions; torus models assemble complex coefficients downstream.
    """
    if n_modes <= 0 or m_steps <= 0 or horizon <= 0:
        raise ValueError("n_modes, m_steps and horizon must be positive")
    dt = horizon / m_steps
    xi = rng.normal_rows(seed, n_modes, m_steps)
    inc = np.sqrt(dt) * xi
    inc.flags.writeable = False
    return NoisePath(int(seed), int(n_modes), int(m_steps), float(horizon), inc)


def rows_required(basis: BasisId, n: int, support: int = 0) -> int:
    """Scalar rows needed to drive modes up to band n (plus a convolution margin)."""
    if basis.kind == "fourier-torus":
        return 2 * (n + support) + 1
    return n


def complex_increments(rows: np.ndarray, n: int) -> np.ndarray:
    """Conjugate-symmetric complex torus increments from real direction rows.

    ``rows[..., 0]`` drives mode 0; rows (2j-1, 2j) are the cosine/sine
    directions of frequency j.  Output is in interleaved storage order
    (0, +1, -1, ...), length 2n+1, and each mode has E|dW_n|^2 = E row^2.
    """
    out = np.empty(rows.shape[:-1] + (2 * n + 1,), dtype=np.complex128)
    out[..., 0] = rows[..., 0]
    c = rows[..., 1:2 * n:2]
    s = rows[..., 2:2 * n + 1:2]
    plus = (c - 1j * s) / np.sqrt(2.0)
    out[..., 1::2] = plus
    out[..., 2::2] = np.conj(plus)
    return out


# ---------------------------------------------------------------------------
# Exact Ornstein-Uhlenbeck transitions (commuting covariance)
# ---------------------------------------------------------------------------


def ou_step_factors(lam: np.ndarray, q: np.ndarray, dt: float):
    """Per-mode (decay, noise scale) of the exact OU transition over one step:
    z <- decay z + scale xi with scale^2 = q (1 - decay^2) / (2 lambda)."""
    decay = np.exp(-dt * lam)
    scale = np.sqrt(q * (1.0 - decay**2) / (2.0 * lam))
    return decay, scale


def convolution_step_exact(z: SpectralField, dt: float, q: np.ndarray,
                           xi: np.ndarray) -> SpectralField:
    """One exact transition of the linear stochastic convolution, per mode:
    ``z_k <- e^{-lam_k dt} z_k + sigma_k(dt) xi_k``.

    `q` holds the per-mode covariance values and `xi` the unit-variance
    increments for the step (a path's increments divided by sqrt(dt)).
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    lam = z.basis.eigenvalues(z.dimension)
    q = np.asarray(q, dtype=np.float64)
    if q.shape != lam.shape:
        raise ValueError("q must provide one variance per mode")
    decay, scale = ou_step_factors(lam, q, dt)
    return field(z.basis, decay * z.coeffs + scale * np.asarray(xi), z.dimension)


@dataclass(frozen=True, eq=False)
class StochasticConvolutionSample:
    """Grid sample of the mild solution of dZ = AZ dt + dW^Q, Z(0) = 0."""

    trajectory: Trajectory
    covariance_kind: str


def sample_convolution_diagonal(seed: int, cov: CovarianceDescriptor, basis: BasisId,
                                n: int, m_steps: int, horizon: float,
                                path: NoisePath | None = None) -> StochasticConvolutionSample:
    """Exact grid sample of the stochastic convolution for a diagonal covariance.

    When `path` is given its increments are reused (resolution coupling);
    otherwise a fresh path is drawn from `seed`.
    """
    if cov.kind != "diagonal":
        raise ValueError("diagonal covariance required; use the multiplicative sampler")
    rows = rows_required(basis, n)
    if path is None:
        path = sample_noise_path(seed, rows, m_steps, horizon, basis)
    if path.n_modes < rows or path.m_steps != m_steps:
        raise ValueError("path does not cover the requested modes/grid")
    dt = path.dt
    lam = basis.eigenvalues(n)
    q = q_values(cov, basis, n)
    decay, scale = ou_step_factors(lam, q, dt)
    xi = path.unit_normals()

    k = basis.n_coeffs(n)
    values = np.zeros((m_steps + 1, k), dtype=np.complex128 if basis.is_complex else np.float64)
    z = values[0].copy()
    for m in range(m_steps):
        step_xi = complex_increments(xi[:rows, m], n) if basis.is_complex else xi[:n, m]
        z = decay * z + scale * step_xi
        values[m + 1] = z
    times = np.linspace(0.0, horizon, m_steps + 1)
    traj = trajectory_from_values(times, basis, values)
    return StochasticConvolutionSample(traj, "diagonal")


def sample_convolution_multiplicative(seed: int, cov: CovarianceDescriptor, n: int,
                                      m_steps: int, horizon: float,
                                      path: NoisePath | None = None) -> StochasticConvolutionSample:
    """Grid sample of the torus convolution dZ = AZ dt + B dW on modes |k| <= n.

    Variance-corrected left-point exponential rule; cylindrical increments
    cover frequencies up to n plus the support radius of b so the product is
    exact at the band edge.
    """
    if cov.kind != "multiplication":
        raise ValueError("multiplication covariance required")
    support = cov.support_radius
    rows = rows_required(FOURIER_TORUS, n, support)
    if path is None:
        path = sample_noise_path(seed, rows, m_steps, horizon, FOURIER_TORUS)
    if path.n_modes < rows or path.m_steps != m_steps:
        raise ValueError("path does not cover the requested modes/grid")
    dt = path.dt
    lam = FOURIER_TORUS.eigenvalues(n)
    decay = np.exp(-dt * lam)
    corr = variance_correction(lam, dt)
    b = b_half_spectrum(cov)
    inc = path.increments
    values = np.zeros((m_steps + 1, 2 * n + 1), dtype=np.complex128)
    z = values[0].copy()
    for m in range(m_steps):
        dw = complex_increments(inc[:rows, m], n + support)
        z = decay * z + corr * apply_b_batch(b, dw, n)
        values[m + 1] = z
    times = np.linspace(0.0, horizon, m_steps + 1)
    return StochasticConvolutionSample(
        trajectory_from_values(times, FOURIER_TORUS, values), "multiplication")


def sample_convolution_wave(seed: int, cov: CovarianceDescriptor, n: int,
                            m_steps: int, horizon: float,
                            path: NoisePath | None = None) -> StochasticConvolutionSample:
    """Grid sample of the phase-space convolution driven through the velocity.

    Group rotation of the running state plus a right-point velocity
    increment sqrt(q_k dt) xi; the rotation is an isometry, so the total
    phase-space second moment is exact on the grid.
    """
    if cov.kind != "diagonal":
        raise ValueError("the wave family uses diagonal covariances")
    from .basis import DIRICHLET_SINE, group_rotation_factors
    if path is None:
        path = sample_noise_path(seed, n, m_steps, horizon, DIRICHLET_SINE)
    if path.n_modes < n or path.m_steps != m_steps:
        raise ValueError("path does not cover the requested modes/grid")
    dt = path.dt
    lam = DIRICHLET_SINE.eigenvalues(n)
    ct, sov, mrs = group_rotation_factors(lam, dt)
    sig = np.sqrt(q_values(cov, DIRICHLET_SINE, n) * dt)
    xi = path.unit_normals()
    values = np.zeros((m_steps + 1, 2, n))
    u = np.zeros(n)
    v = np.zeros(n)
    for m in range(m_steps):
        u, v = ct * u + sov * v, mrs * u + ct * v
        v = v + sig * xi[:n, m]
        values[m + 1, 0], values[m + 1, 1] = u, v
    times = np.linspace(0.0, horizon, m_steps + 1)
    return StochasticConvolutionSample(
        trajectory_from_values(times, DIRICHLET_SINE, values, is_phase=True), "diagonal")


# ---------------------------------------------------------------------------
# Multiplication-operator noise on the torus
# ---------------------------------------------------------------------------


def apply_b_batch(b_half: np.ndarray, coeffs: np.ndarray, n_out: int) -> np.ndarray:
    """Coefficients of b*x (pointwise product) on modes |n| <= n_out, batched.

    Exact band convolution (B x)_n = sum_m b_{n-m} x_m; b is band-limited so
    no collocation grid is involved.
    """
    support = b_half.size - 1
    n_in = (coeffs.shape[-1] - 1) // 2
    # centered spectra [-n..n]; pad wide enough that every shifted slice exists
    centered = _interleaved_to_centered(coeffs, n_in)
    pad_half = max(n_in, n_out) + support
    padded = np.zeros(coeffs.shape[:-1] + (2 * pad_half + 1,), dtype=np.complex128)
    padded[..., pad_half - n_in:pad_half + n_in + 1] = centered
    out_c = np.zeros(coeffs.shape[:-1] + (2 * n_out + 1,), dtype=np.complex128)
    full_b = np.concatenate([np.conj(b_half[:0:-1]), b_half])  # b_{-m}..b_m
    for j, bm in enumerate(full_b):
        if bm == 0:
            continue
        shift = j - support  # output mode n picks up b_shift * x_{n-shift}
        lo = pad_half - shift - n_out
        out_c += bm * padded[..., lo:lo + 2 * n_out + 1]
    return _centered_to_interleaved(out_c, n_out)


def _interleaved_to_centered(coeffs: np.ndarray, n: int) -> np.ndarray:
    out = np.empty_like(coeffs)
    out[..., n] = coeffs[..., 0]
    out[..., n + 1:] = coeffs[..., 1::2]
    out[..., n - 1::-1] = coeffs[..., 2::2]
    return out


def _centered_to_interleaved(centered: np.ndarray, n: int) -> np.ndarray:
    out = np.empty_like(centered)
    out[..., 0] = centered[..., n]
    out[..., 1::2] = centered[..., n + 1:]
    out[..., 2::2] = centered[..., n - 1::-1]
    return out


def variance_correction(lam: np.ndarray, dt: float) -> np.ndarray:
    """Factor c with c^2 = (1 - e^{-2 lam dt}) / (2 lam dt): applied to the
    per-step noise so that every output-mode marginal variance of the
    left-point exponential rule is exact."""
    x = 2.0 * lam * dt
    return np.sqrt(-np.expm1(-x) / x)


def convolution_step_multiplicative(z: SpectralField, dt: float,
                                    cov: CovarianceDescriptor,
                                    dW: SpectralField) -> SpectralField:
    """One step of the truncated-noise convolution dZ = AZ dt + B dW.

    Left-point exponential rule with per-mode variance correction:
    ``z <- e^{dt A} z + c(dt, lam) (B dW)`` restricted to z's band.  The
    cylindrical increment field `dW` must extend at least to z's band plus
    the support radius of b for the product to be exact at the band edge.
    """
    if cov.kind != "multiplication":
        raise ValueError("multiplication covariance required; use convolution_step_exact")
    if z.basis.kind != "fourier-torus" or dW.basis.kind != "fourier-torus":
        raise ValueError("multiplication-operator noise lives on the torus basis")
    if dt <= 0:
        raise ValueError("dt must be positive")
    n = z.dimension
    b = b_half_spectrum(cov)
    bdw = apply_b_batch(b, dW.coeffs, n)
    lam = z.basis.eigenvalues(n)
    out = np.exp(-dt * lam) * z.coeffs + variance_correction(lam, dt) * bdw
    return field(z.basis, out, n)


# ---------------------------------------------------------------------------
# Commutator machinery
# ---------------------------------------------------------------------------


def commutator_apply(cov: CovarianceDescriptor, n: int, x: SpectralField) -> SpectralField:
    """[B, P_n] x = B P_n x - P_n B x, exact in coefficient space.

    The output is supported on the mixed band only: frequencies that the
    product moves across the projection cut.  Its dimension extends x's by
    the support radius of b.
    """
    if cov.kind != "multiplication":
        raise ValueError("the commutator is defined for multiplication covariances")
    if x.basis.kind != "fourier-torus":
        raise ValueError("torus basis required")
    support = cov.support_radius
    b = b_half_spectrum(cov)
    n_out = x.dimension + support
    inside = _band_limit(x.coeffs, x.dimension, n)
    b_pnx = apply_b_batch(b, inside, n_out)
    bx = apply_b_batch(b, x.coeffs, n_out)
    pn_bx = _band_limit(bx, n_out, n)
    return field(FOURIER_TORUS, b_pnx - pn_bx, n_out)


def _band_limit(coeffs: np.ndarray, n_in: int, n_keep: int) -> np.ndarray:
    """Zero all modes with |frequency| > n_keep (interleaved storage)."""
    out = coeffs.copy()
    if n_keep < n_in:
        out[..., 2 * n_keep + 1:] = 0.0
    return out


def commutator_matrix_element(cov: CovarianceDescriptor, n: int, k: int, ell: int) -> complex:
    """<[B, P_n] e_k, e_ell> = b_{ell-k} when exactly one of |k|, |ell| is <= n."""
    b = b_half_spectrum(cov)
    d = ell - k
    if abs(d) > b.size - 1:
        return 0.0
    mixed = (abs(k) <= n) != (abs(ell) <= n)
    if not mixed:
        return 0.0
    return complex(b[d]) if d >= 0 else complex(np.conj(b[-d]))


def sample_rho_N(seed: int, cov: CovarianceDescriptor, n: int, m_steps: int,
                 horizon: float, path: NoisePath | None = None) -> Trajectory:
    """Sample the commutator process rho_n(t) = int e^{(t-r)A} [B, P_n] dW(r).

    Driven by cylindrical increments on frequencies up to n + support; the
    integrand is applied through :func:`commutator_apply`, integrated with
    the variance-corrected left-point exponential rule.
    """
    support = cov.support_radius
    rows = rows_required(FOURIER_TORUS, n, support)
    if path is None:
        path = sample_noise_path(seed, rows, m_steps, horizon, FOURIER_TORUS)
    if path.n_modes < rows or path.m_steps != m_steps:
        raise ValueError("path does not cover the requested modes/grid")
    dt = path.dt
    n_out = n + support
    lam = FOURIER_TORUS.eigenvalues(n_out)
    decay = np.exp(-dt * lam)
    corr = variance_correction(lam, dt)
    b = b_half_spectrum(cov)

    inc = path.increments
    values = np.zeros((m_steps + 1, 2 * n_out + 1), dtype=np.complex128)
    z = values[0].copy()
    for m in range(m_steps):
        dw = complex_increments(inc[:rows, m], n + support)
        g_dw = _commutator_on_coeffs(b, dw, n, n_out)
        z = decay * z + corr * g_dw
        values[m + 1] = z
    times = np.linspace(0.0, horizon, m_steps + 1)
    return trajectory_from_values(times, FOURIER_TORUS, values)


def _commutator_on_coeffs(b_half: np.ndarray, coeffs: np.ndarray, n: int,
                          n_out: int) -> np.ndarray:
    n_in = (coeffs.shape[-1] - 1) // 2
    inside = _band_limit(coeffs, n_in, n)
    b_px = apply_b_batch(b_half, inside, n_out)
    bx = apply_b_batch(b_half, coeffs, n_out)
    return b_px - _band_limit(bx, n_out, n)


def rho_moment_mc(cov: CovarianceDescriptor, n: int, m_steps: int, horizon: float,
                  s: float, n_paths: int, seed: int = 0):
    """Monte Carlo estimate of E|rho_n(T)|_s^2 with its standard error.

    Integrates the commutator process for a whole ensemble at once with the
    same variance-corrected rule as :func:`sample_rho_N`.
    """
    support = cov.support_radius
    rows = rows_required(FOURIER_TORUS, n, support)
    n_out = n + support
    dt = horizon / m_steps
    lam = FOURIER_TORUS.eigenvalues(n_out)
    decay = np.exp(-dt * lam)
    scale = variance_correction(lam, dt) * np.sqrt(dt)
    b = b_half_spectrum(cov)
    g = np.random.default_rng(seed)
    z = np.zeros((n_paths, 2 * n_out + 1), dtype=np.complex128)
    for _ in range(m_steps):
        xi = g.standard_normal((n_paths, rows))
        dw = complex_increments(xi, n_out)
        z = decay * z + scale * _commutator_on_coeffs(b, dw, n, n_out)
    w = lam**s if s != 0.0 else np.ones_like(lam)
    vals = (z.real**2 + z.imag**2) @ w
    return float(np.mean(vals)), float(np.std(vals, ddof=1) / np.sqrt(n_paths))


# ---------------------------------------------------------------------------
# Closed-form second-moment oracles
# ---------------------------------------------------------------------------


def _mode_variance_factor(lam, t, s):
    """lambda^s (1 - e^{-2 lambda t}) / (2 lambda)."""
    return lam**s * -np.expm1(-2.0 * lam * t) / (2.0 * lam)


def rho_moment_oracle(cov: CovarianceDescriptor, n: int, t: float, s: float) -> float:
    """Exact E|rho_n(t)|_s^2 by direct summation of the mixed-band pairs.

    E|rho_n(t)|_s^2 = sum over (k, ell) with exactly one of |k|,|ell| <= n of
    |b_{ell-k}|^2 lambda_ell^s (1 - e^{-2 lambda_ell t}) / (2 lambda_ell);
    exact when b is band-limited, which every catalog b is.
    """
    if cov.kind != "multiplication":
        raise ValueError("the commutator oracle is defined for multiplication covariances")
    if t < 0:
        raise ValueError("t must be nonnegative")
    if t == 0.0:
        return 0.0
    b = b_half_spectrum(cov)
    support = cov.support_radius
    if support == 0:
        return 0.0
    total = 0.0
    # output mode ell with |ell-k| <= support and mixed-band indicator: only
    # frequencies within `support` of the cut contribute
    for ell in range(-(n + support), n + support + 1):
        lam = 4.0 * np.pi**2 * ell**2 + 1.0
        weight = float(_mode_variance_factor(lam, t, s))
        for d in range(-support, support + 1):
            k = ell - d
            if (abs(k) <= n) == (abs(ell) <= n):
                continue
            bn = b[d] if d >= 0 else np.conj(b[-d])
            total += abs(bn) ** 2 * weight
    return total


def rho_moment_oracle_bruteforce(cov: CovarianceDescriptor, n: int, t: float,
                                 s: float, k_max: int) -> float:
    """Independent double-loop evaluation over all |k|, |ell| <= k_max."""
    b = b_half_spectrum(cov)
    support = b.size - 1
    total = 0.0
    for k in range(-k_max, k_max + 1):
        for ell in range(-k_max, k_max + 1):
            d = ell - k
            if abs(d) > support:
                continue
            if (abs(k) <= n) == (abs(ell) <= n):
                continue
            bn = b[d] if d >= 0 else np.conj(b[-d])
            lam = 4.0 * np.pi**2 * ell**2 + 1.0
            total += abs(bn) ** 2 * float(_mode_variance_factor(lam, t, s))
    return total


def tail_moment_oracle(cov: CovarianceDescriptor, basis: BasisId, n: int, t: float,
                       s: float, k_max: int = 200000) -> float:
    """E |P_n^perp W^{A,Q}(t)|_s^2 = sum_{k>n} q_k lambda_k^s (1-e^{-2 lambda_k t})/(2 lambda_k),
    truncated at `k_max` enumerated modes; see :func:`tail_moment_bound` for
    the discarded remainder."""
    if cov.kind != "diagonal":
        raise ValueError("the tail oracle is defined for diagonal covariances")
    if t < 0:
        raise ValueError("t must be nonnegative")
    if t == 0.0 or n >= k_max:
        return 0.0
    lam = basis.eigenvalues(k_max)
    q = q_values(cov, basis, k_max)
    keep = basis.n_coeffs(n)
    lam_t, q_t = lam[keep:], q[keep:]
    return float(np.sum(q_t * _mode_variance_factor(lam_t, t, s)))


def tail_moment_bound(cov: CovarianceDescriptor, basis: BasisId, s: float,
                      k_max: int = 200000) -> float:
    """Upper bound on the mass discarded beyond `k_max` enumerated modes:
    integral comparison of sum q_k lambda_k^{s-1} / 2 under k^2 growth."""
    if cov.kind != "diagonal":
        raise ValueError("diagonal covariance required")
    # exponent of the frequency in the summand: 2 (s - 1 - r); < -1 whenever
    # the trace condition holds
    p = 2.0 * (s - 1.0 - cov.r)
    if p >= -1.0:
        return np.inf
    if basis.kind == "fourier-torus":
        c, n_max, scale = 4.0 * np.pi**2, (k_max - 1) // 2, 2.0  # two frequency tails
    else:
        c, n_max, scale = np.pi**2, k_max, 1.0
    return scale * c ** (s - 1.0 - cov.r) * n_max ** (p + 1.0) / (-(p + 1.0)) / 2.0
