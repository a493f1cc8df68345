"""Time integration of the Galerkin systems and the deterministic trajectory map.

The parabolic families step with the exponential Euler rule

    u <- e^{dt A} u + A^{-1}(e^{dt A} - I) P_N F(u) + (noise increment),

which is exact on the linear part; the wave family composes the group
rotation, an explicit drift increment dt P_N (0, F(u) - gamma v) evaluated
at the rotated state, and a right-point velocity noise increment.

``ito_map`` realizes the solution map w -> Y^w of

    Y(t) = e^{tA} x0 + int_0^t e^{(t-r)A} F(Y(r)) dr + w(t)

by time-marching the integral term with the same quadrature as the
integrator, so the representation identities (solution = map applied to the
stochastic convolution; projected solution = map applied to projected
convolution plus residual) hold on the grid to machine precision when both
sides share one collocation grid (SolverConfig.m_nodes).
"""

import math
from dataclasses import dataclass

import numpy as np

from .basis import (
    DIRICHLET_SINE, Trajectory, group_rotation_factors, hs_norm_sq_coeffs,
    sup_norm_trajectory, trajectory_from_values,
)
from .models import ModelSpec, collocation_nodes, nemytskii_batch, q_values
from .noise import (
    NoisePath, apply_b_batch, complex_increments, rows_required,
    variance_correction,
)
from .models import b_half_spectrum

__all__ = [
    "SolverConfig", "DivergenceError", "integrate_galerkin", "ito_map",
    "ito_map_picard", "residual_R_N", "frechet_check_ito_map", "FrechetReport",
    "gronwall_lipschitz_bound", "make_stepper", "noise_rows_for",
    "initial_state_array", "sup_distance", "add_trajectories",
]


@dataclass(frozen=True)
class SolverConfig:
    """Discretization controls shared by the integrators and the map."""

    m_steps: int = 2048
    step_policy: str = "fixed"  # 'fixed' | 'halve-until-stable'
    halving_tolerance: float = 0.10
    picard_tol: float = 1e-10
    picard_max_iter: int = 200
    m_nodes: int | None = None  # None: per-field policy 4*dim
    finite_check_window: int = 32

    def __post_init__(self):
        if self.m_steps < 2:
            raise ValueError("m_steps must be at least 2")
        if self.picard_tol <= 0 or self.halving_tolerance <= 0:
            raise ValueError("tolerances must be positive")
        if self.step_policy not in ("fixed", "halve-until-stable"):
            raise ValueError(f"unknown step policy {self.step_policy!r}")


class DivergenceError(RuntimeError):
    """A path produced a non-finite coefficient (solver bug, not model behavior)."""

    def __init__(self, seed, step):
        self.seed = seed
        self.step = step
        super().__init__(f"non-finite state at step {step} (seed {seed})")


# ---------------------------------------------------------------------------
# Steppers
# ---------------------------------------------------------------------------
#
# A stepper advances batched coefficient arrays one time step.  States are
# (B, K) for scalar families and (B, 2, N) for the wave family.  The noise
# increment is produced once per step at full rank by `noise_increment`
# and added as a prefix slice, which is what couples resolutions.


class _ParabolicStepper:
    def __init__(self, model: ModelSpec, n: int, dt: float, m_nodes: int | None = None):
        self.model = model
        self.n = n
        self.dt = dt
        basis = model.basis
        self.basis = basis
        self.k = basis.n_coeffs(n)
        lam = basis.eigenvalues(n)
        self.lam = lam
        self.decay = np.exp(-dt * lam)
        self.phi = (1.0 - self.decay) / lam  # A^{-1}(e^{dt A} - I) per mode
        self.m_nodes = m_nodes if m_nodes is not None else collocation_nodes(n)
        cov = model.covariance
        if cov.kind == "diagonal":
            q = q_values(cov, basis, n)
            self.sigma = np.sqrt(q * (1.0 - self.decay**2) / (2.0 * lam))
            self.support = 0
            self.b_half = None
        else:
            self.support = cov.support_radius
            self.b_half = b_half_spectrum(cov)
            self.corr = variance_correction(lam, dt) * np.sqrt(dt)
        self.noise_rows = rows_required(basis, n, self.support)
        self.is_complex = basis.is_complex

    def init_state(self, batch: int, x0_coeffs: np.ndarray) -> np.ndarray:
        dtype = np.complex128 if self.is_complex else np.float64
        state = np.zeros((batch, self.k), dtype=dtype)
        state[:] = _embed_coeffs(x0_coeffs, self.k)
        return state

    def noise_increment(self, xi: np.ndarray) -> np.ndarray:
        """Per-step noise at this stepper's rank from unit-normal rows."""
        if self.b_half is None:
            if self.is_complex:
                return self.sigma * complex_increments(xi[..., :self.noise_rows], self.n)
            return self.sigma * xi[..., :self.n]
        dw = complex_increments(xi[..., :self.noise_rows], self.n + self.support)
        return self.corr * apply_b_batch(self.b_half, dw, self.n)

    def drift_term(self, state: np.ndarray) -> np.ndarray:
        if self.model.nonlinearity.kind == "zero":
            return np.zeros_like(state)
        f_hat = nemytskii_batch(self.model.nonlinearity, state, self.basis,
                                self.n, self.m_nodes)
        return self.phi * f_hat

    def step(self, state: np.ndarray, noise_slice) -> np.ndarray:
        out = self.decay * state + self.drift_term(state)
        if noise_slice is not None:
            out += noise_slice[..., :self.k]
        return out


class _WaveStepper:
    def __init__(self, model: ModelSpec, n: int, dt: float, m_nodes: int | None = None):
        self.model = model
        self.n = n
        self.dt = dt
        self.basis = DIRICHLET_SINE
        self.k = n
        lam = DIRICHLET_SINE.eigenvalues(n)
        self.rot = group_rotation_factors(lam, dt)
        self.sigma = np.sqrt(q_values(model.covariance, DIRICHLET_SINE, n) * dt)
        self.m_nodes = m_nodes if m_nodes is not None else collocation_nodes(n)
        self.noise_rows = n
        self.gamma = model.gamma
        self.is_complex = False

    def init_state(self, batch: int, x0_coeffs: np.ndarray) -> np.ndarray:
        state = np.zeros((batch, 2, self.n))
        state[:, 0] = _embed_coeffs(x0_coeffs[0], self.n)
        state[:, 1] = _embed_coeffs(x0_coeffs[1], self.n)
        return state

    def noise_increment(self, xi: np.ndarray) -> np.ndarray:
        return self.sigma * xi[..., :self.n]

    def rotate(self, state: np.ndarray) -> np.ndarray:
        ct, sov, mrs = self.rot
        u, v = state[..., 0, :], state[..., 1, :]
        return np.stack([ct * u + sov * v, mrs * u + ct * v], axis=-2)

    def drift_velocity(self, rotated: np.ndarray) -> np.ndarray:
        u, v = rotated[..., 0, :], rotated[..., 1, :]
        out = -self.gamma * v
        if self.model.nonlinearity.kind != "zero":
            out = out + nemytskii_batch(self.model.nonlinearity, u, self.basis,
                                        self.n, self.m_nodes)
        return out

    def step(self, state: np.ndarray, noise_slice) -> np.ndarray:
        rotated = self.rotate(state)
        out = rotated.copy()
        out[..., 1, :] += self.dt * self.drift_velocity(rotated)
        if noise_slice is not None:
            out[..., 1, :] += noise_slice[..., :self.n]
        return out


def make_stepper(model: ModelSpec, n: int, dt: float, m_nodes: int | None = None):
    if model.family == "wave":
        return _WaveStepper(model, n, dt, m_nodes)
    return _ParabolicStepper(model, n, dt, m_nodes)


def noise_rows_for(model: ModelSpec, n: int) -> int:
    support = model.covariance.support_radius if model.covariance.kind == "multiplication" else 0
    return rows_required(model.basis, n, support)


def _embed_coeffs(coeffs: np.ndarray, k_target: int) -> np.ndarray:
    """Prefix embed/truncate between band sizes (both bases store bands as
    prefixes in enumeration order)."""
    out = np.zeros(k_target, dtype=coeffs.dtype)
    k = min(coeffs.shape[-1], k_target)
    out[:k] = coeffs[:k]
    return out


def initial_state_array(model: ModelSpec, n: int):
    """Model initial condition as plain arrays at resolution n (projected)."""
    if model.family == "wave":
        x0 = model.x0
        return np.stack([_embed_coeffs(x0.position.coeffs, n),
                         _embed_coeffs(x0.velocity.coeffs, n)])
    return _embed_coeffs(model.x0.coeffs, model.basis.n_coeffs(n))


# ---------------------------------------------------------------------------
# Galerkin integration
# ---------------------------------------------------------------------------


def integrate_galerkin(model: ModelSpec, n: int, path: NoisePath,
                       config: SolverConfig | None = None) -> Trajectory:
    """Integrate the dimension-n Galerkin system along one noise path.

    The path must carry at least as many rows as the system consumes and its
    horizon must match the model's.
    """
    config = config or SolverConfig(m_steps=path.m_steps)
    if abs(path.horizon - model.horizon) > 1e-12 * max(1.0, model.horizon):
        raise ValueError("path horizon does not match the model horizon")
    rows = noise_rows_for(model, n)
    if path.n_modes < rows:
        raise ValueError(f"path carries {path.n_modes} rows, {rows} required for n={n}")
    m_steps = path.m_steps
    dt = path.dt
    stepper = make_stepper(model, n, dt, config.m_nodes)
    xi = path.unit_normals()

    state = stepper.init_state(1, initial_state_array(model, n))
    shape = (m_steps + 1,) + state.shape[1:]
    values = np.zeros(shape, dtype=state.dtype)
    values[0] = state[0]
    for m in range(m_steps):
        noise = stepper.noise_increment(xi[None, :, m])
        state = stepper.step(state, noise)
        if not np.all(np.isfinite(state.view(np.float64))):
            raise DivergenceError(path.seed, m + 1)
        values[m + 1] = state[0]
    times = np.linspace(0.0, model.horizon, m_steps + 1)
    return trajectory_from_values(times, stepper.basis, values,
                                  is_phase=model.family == "wave")


# ---------------------------------------------------------------------------
# The trajectory map and its residual
# ---------------------------------------------------------------------------


def _check_grid(model: ModelSpec, w: Trajectory):
    if abs(w.horizon - model.horizon) > 1e-12 * max(1.0, model.horizon):
        raise ValueError("trajectory horizon does not match the model horizon")
    if (model.family == "wave") != w.is_phase:
        raise ValueError("trajectory kind does not match the model family")


def ito_map(model: ModelSpec, w: Trajectory, config: SolverConfig | None = None) -> Trajectory:
    """Grid realization of the solution map Y = (semigroup term) + (F integral) + w.

    Marches the integral term with the integrator's own quadrature; each grid
    value depends only on past values plus w.
    """
    config = config or SolverConfig(m_steps=w.n_steps)
    _check_grid(model, w)
    n = w.dimension
    dt = w.dt
    m_steps = w.n_steps
    stepper = make_stepper(model, n, dt, config.m_nodes)
    x0 = initial_state_array(model, n)

    values = np.zeros_like(w.values)
    if model.family == "wave":
        free = x0[None, ...].astype(np.float64).copy()  # e^{t A} x0, marched
        integ = np.zeros((1, 2, n))
        y = free + integ + w.values[0][None, ...]
        values[0] = y[0]
        for m in range(m_steps):
            y_rot = stepper.rotate(y)
            incr = np.zeros_like(integ)
            incr[:, 1, :] = dt * stepper.drift_velocity(y_rot)
            integ = stepper.rotate(integ) + incr
            free = stepper.rotate(free)
            y = free + integ + w.values[m + 1][None, ...]
            if not np.all(np.isfinite(y)):
                raise DivergenceError(None, m + 1)
            values[m + 1] = y[0]
    else:
        free = _embed_coeffs(x0, stepper.k)[None, :].copy()
        integ = np.zeros((1, stepper.k), dtype=values.dtype)
        y = free + integ + w.values[0][None, :]
        values[0] = y[0]
        for m in range(m_steps):
            integ = stepper.decay * integ + stepper.drift_term(y)
            free = stepper.decay * free
            y = free + integ + w.values[m + 1][None, :]
            if not np.all(np.isfinite(y.view(np.float64))):
                raise DivergenceError(None, m + 1)
            values[m + 1] = y[0]
    return trajectory_from_values(w.times.copy(), w.basis, values, w.is_phase)


def ito_map_picard(model: ModelSpec, w: Trajectory,
                   config: SolverConfig | None = None) -> Trajectory:
    """Fixed-point verification mode: iterate the integral map on whole
    trajectories until the sup-norm update falls below the Picard tolerance.

    Uses the same quadrature as :func:`ito_map`; both realizations agree at
    the fixed point.
    """
    config = config or SolverConfig(m_steps=w.n_steps)
    _check_grid(model, w)
    n = w.dimension
    dt = w.dt
    m_steps = w.n_steps
    stepper = make_stepper(model, n, dt, config.m_nodes)
    x0 = initial_state_array(model, n)

    current = w.values.copy()
    for iteration in range(config.picard_max_iter):
        new = np.zeros_like(current)
        if model.family == "wave":
            free = x0.astype(np.float64).copy()
            integ = np.zeros((2, n))
            new[0] = free + integ + w.values[0]
            for m in range(m_steps):
                y_rot = stepper.rotate(current[m][None, ...])
                incr = np.zeros((1, 2, n))
                incr[:, 1, :] = dt * stepper.drift_velocity(y_rot)
                integ = stepper.rotate(integ[None, ...])[0] + incr[0]
                free = stepper.rotate(free[None, ...])[0]
                new[m + 1] = free + integ + w.values[m + 1]
        else:
            free = _embed_coeffs(x0, stepper.k).copy()
            integ = np.zeros(stepper.k, dtype=current.dtype)
            new[0] = free + integ + w.values[0]
            for m in range(m_steps):
                integ = stepper.decay * integ + stepper.drift_term(current[m][None, :])[0]
                free = stepper.decay * free
                new[m + 1] = free + integ + w.values[m + 1]
        delta = float(np.max(np.abs(new - current)))
        current = new
        if delta < config.picard_tol:
            break
    else:
        raise RuntimeError(f"fixed-point iteration did not converge in "
                           f"{config.picard_max_iter} sweeps (last update {delta:.3e})")
    return trajectory_from_values(w.times.copy(), w.basis, current, w.is_phase)


def residual_R_N(model: ModelSpec, u_n: Trajectory, n: int,
                 ambient_dim: int | None = None,
                 config: SolverConfig | None = None) -> Trajectory:
    """Grid quadrature of the representation residual

        R(t) = (P_n - I) e^{tA} x0 + int_0^t (P_n - I) e^{(t-r)A} F(u_n(r)) dr,

    supported on modes beyond n, represented up to `ambient_dim` (defaults to
    twice n).  The drift quadrature matches the integrator's, so the identity
    u_n = map(P_n W + R) is exact on the grid when both use one collocation
    grid.
    """
    config = config or SolverConfig(m_steps=u_n.n_steps)
    _check_grid(model, u_n)
    if u_n.dimension < n:
        raise ValueError("trajectory does not carry the projected band")
    ambient = ambient_dim if ambient_dim is not None else 2 * n
    if ambient < n:
        raise ValueError("ambient dimension must be at least n")
    dt = u_n.dt
    m_steps = u_n.n_steps
    stepper = make_stepper(model, ambient, dt, config.m_nodes)
    x0 = initial_state_array(model, ambient)
    keep = model.basis.n_coeffs(n) if model.family != "wave" else n

    def tail_only(arr):
        out = arr.copy()
        if model.family == "wave":
            out[..., :, :keep] = 0.0
        else:
            out[..., :keep] = 0.0
        return -out  # (P_n - I) g = -(tail of g)

    values = np.zeros((m_steps + 1,) + ((2, ambient) if model.family == "wave"
                                        else (stepper.k,)),
                      dtype=np.complex128 if stepper.is_complex else np.float64)
    if model.family == "wave":
        free = x0.astype(np.float64)
        integ = np.zeros((2, ambient))
        values[0] = tail_only(free) + integ
        for m in range(m_steps):
            state = _embed_phase(u_n.values[m], ambient)
            rot_state = stepper.rotate(state[None, ...])
            incr = np.zeros((1, 2, ambient))
            incr[:, 1, :] = dt * stepper.drift_velocity(rot_state)
            integ = stepper.rotate(integ[None, ...])[0] + tail_only(incr[0])
            free = stepper.rotate(free[None, ...])[0]
            values[m + 1] = tail_only(free) + integ
    else:
        free = _embed_coeffs(x0, stepper.k)
        integ = np.zeros(stepper.k, dtype=values.dtype)
        values[0] = tail_only(free) + integ
        for m in range(m_steps):
            state = _embed_coeffs(u_n.values[m], stepper.k)[None, :]
            integ = stepper.decay * integ + tail_only(stepper.drift_term(state)[0])
            free = stepper.decay * free
            values[m + 1] = tail_only(free) + integ
    return trajectory_from_values(u_n.times.copy(), stepper.basis, values,
                                  is_phase=model.family == "wave")


def _embed_phase(state: np.ndarray, n_target: int) -> np.ndarray:
    out = np.zeros((2, n_target))
    k = min(state.shape[-1], n_target)
    out[0, :k] = state[0, :k]
    out[1, :k] = state[1, :k]
    return out


# ---------------------------------------------------------------------------
# Trajectory helpers
# ---------------------------------------------------------------------------


def add_trajectories(a: Trajectory, b: Trajectory, scale: float = 1.0) -> Trajectory:
    """a + scale*b on a shared grid, embedding the narrower band."""
    if a.n_steps != b.n_steps or abs(a.horizon - b.horizon) > 1e-12:
        raise ValueError("trajectories live on different grids")
    ka, kb = a.values.shape[-1], b.values.shape[-1]
    k = max(ka, kb)
    dtype = np.result_type(a.values.dtype, b.values.dtype)
    out = np.zeros(a.values.shape[:-1] + (k,), dtype=dtype)
    out[..., :ka] = a.values
    out[..., :kb] += scale * b.values
    return trajectory_from_values(a.times.copy(), a.basis, out, a.is_phase)


def sup_distance(a: Trajectory, b: Trajectory, s: float) -> float:
    """Sup over the grid of the state distance in the s-norm (bands embedded)."""
    if a.n_steps != b.n_steps:
        raise ValueError("trajectories live on different grids")
    ka, kb = a.values.shape[-1], b.values.shape[-1]
    k = max(ka, kb)
    va = np.zeros(a.values.shape[:-1] + (k,), dtype=np.complex128 if np.iscomplexobj(a.values) or np.iscomplexobj(b.values) else np.float64)
    vb = np.zeros_like(va)
    va[..., :ka] = a.values
    vb[..., :kb] = b.values
    diff = va - vb
    if a.is_phase:
        n = k
        lam = a.basis.eigenvalues(n)
        sq = (hs_norm_sq_coeffs(diff[:, 0, :], lam, s)
              + hs_norm_sq_coeffs(diff[:, 1, :], lam, s - 1.0))
    else:
        dim = (k - 1) // 2 if a.basis.is_complex else k
        lam = a.basis.eigenvalues(dim)
        sq = hs_norm_sq_coeffs(diff, lam, s)
    return float(np.sqrt(np.max(sq)))


def project_trajectory(traj: Trajectory, n: int) -> Trajectory:
    """Band projection applied at every grid node."""
    keep = traj.basis.n_coeffs(n) if not traj.is_phase else n
    vals = traj.values.copy()
    vals[..., keep:] = 0.0
    return trajectory_from_values(traj.times.copy(), traj.basis, vals, traj.is_phase)


# ---------------------------------------------------------------------------
# Derivative and Lipschitz checks for the trajectory map
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FrechetReport:
    scales: tuple
    quotients: tuple
    second_differences: tuple
    first_order_stable: bool
    second_order_bounded: bool


def frechet_check_ito_map(model: ModelSpec, w: Trajectory, h: Trajectory,
                          scales=(1e-1, 1e-2, 1e-3, 1e-4),
                          config: SolverConfig | None = None) -> FrechetReport:
    """Finite-difference differentiability signatures of the trajectory map.

    Reports ||map(w + eps h) - map(w)|| / eps across scales (stabilization
    signals a first derivative) and the centered second difference
    ||map(w + eps h) - 2 map(w) + map(w - eps h)|| / eps^2 (boundedness
    signals a bounded second derivative).  Norms are sup-in-time s-norms at
    the model's working exponent.
    """
    s = model.s
    base = ito_map(model, w, config)
    quotients = []
    seconds = []
    for eps in scales:
        plus = ito_map(model, add_trajectories(w, h, eps), config)
        minus = ito_map(model, add_trajectories(w, h, -eps), config)
        quotients.append(sup_distance(plus, base, s) / eps)
        second = trajectory_from_values(
            base.times.copy(), base.basis,
            plus.values - 2.0 * base.values + minus.values, base.is_phase)
        seconds.append(sup_norm_trajectory(second, s) / eps**2)
    q = quotients
    stable = abs(q[-1] - q[-2]) <= 0.05 * max(abs(q[-1]), 1e-300)
    d2_bound = model.nonlinearity.sup_d2f
    h_norm = sup_norm_trajectory(h, s)
    lip = gronwall_lipschitz_bound(model)
    # anything wildly beyond the Gronwall-amplified curvature scale is a failure
    bounded = max(seconds) <= max(10.0 * d2_bound * lip**3 * h_norm**2 * model.horizon, 1e-6)
    return FrechetReport(tuple(scales), tuple(quotients), tuple(seconds),
                         bool(stable), bool(bounded))


def gronwall_lipschitz_bound(model: ModelSpec) -> float:
    """Lipschitz constant of the trajectory map in the sup s-norm.

    exp(C_F T^{1 - (s + s_F)/2}) with C_F the Lipschitz constant of the
    nonlinearity amplified by the sharp smoothing constant; at s = s_F = 0
    the kernel is bounded by 1 and the bound is the plain Gronwall constant
    exp(sup|f'| T).
    """
    beta = (model.s + model.nonlinearity.s_F) / 2.0
    c_f = model.nonlinearity.sup_df
    if beta > 0:
        c_f *= (beta / np.e) ** beta * math.gamma(1.0 - beta)
    return float(np.exp(c_f * model.horizon ** (1.0 - beta)))
