"""Solvers: exactness on linear parts, representation identities, map regularity."""

import numpy as np
import pytest

from specpde.basis import (
    DIRICHLET_SINE, FOURIER_TORUS, basis_vector, field, hs_norm, phase_field,
    sup_norm_trajectory, trajectory_from_values,
)
from specpde.models import (
    default_torus_b, diagonal_covariance, heat_model, nemytskii, torus_model,
    wave_model, zero_nonlinearity,
)
from specpde.noise import (
    sample_convolution_diagonal, sample_convolution_multiplicative,
    sample_convolution_wave, sample_noise_path,
)
from specpde.solvers import (
    DivergenceError, SolverConfig, add_trajectories, frechet_check_ito_map,
    gronwall_lipschitz_bound, integrate_galerkin, ito_map, ito_map_picard,
    noise_rows_for, project_trajectory, residual_R_N, sup_distance,
)


def _zero_field(n):
    return field(DIRICHLET_SINE, np.zeros(n))


def _zero_torus(n):
    return field(FOURIER_TORUS, np.zeros(2 * n + 1, dtype=complex))


def _heat(nl=None, r=0.0, horizon=0.5, x0=None):
    return heat_model(nl if nl is not None else nemytskii("scaled-sine", 1.0),
                      diagonal_covariance(r), x0 if x0 is not None else basis_vector(DIRICHLET_SINE, 1, 1),
                      s=0.0, horizon=horizon)


def _torus(nl=None, horizon=0.5):
    return torus_model(nl if nl is not None else nemytskii("scaled-sine", 1.0),
                       default_torus_b(), _zero_torus(0), s=0.0, horizon=horizon)


def _wave(nl=None, gamma=1.0, horizon=0.5):
    x0 = phase_field(basis_vector(DIRICHLET_SINE, 1, 4), _zero_field(4))
    return wave_model(nl if nl is not None else nemytskii("scaled-sine", 1.0),
                      diagonal_covariance(0.0), x0, gamma=gamma, s=0.0, horizon=horizon)


def _zero_path(n_modes, m_steps, horizon):
    p = sample_noise_path(0, n_modes, m_steps, horizon)
    inc = np.zeros_like(p.increments)
    from specpde.noise import NoisePath
    return NoisePath(0, n_modes, m_steps, horizon, inc)


# ---------------------------------------------------------------------------
# Linear exactness
# ---------------------------------------------------------------------------


def test_heat_linear_part_exact():
    m = _heat(nl=zero_nonlinearity(), horizon=0.5)
    path = _zero_path(8, 16, 0.5)
    traj = integrate_galerkin(m, 8, path)
    lam1 = np.pi**2
    for i, t in enumerate(traj.times):
        assert traj.values[i, 0] == pytest.approx(np.exp(-lam1 * t), rel=1e-13)
        assert np.all(traj.values[i, 1:] == 0.0)


def test_wave_linear_undamped_norm_constant():
    m = _wave(nl=zero_nonlinearity(), gamma=0.0, horizon=1.0)
    path = _zero_path(8, 64, 1.0)
    traj = integrate_galerkin(m, 8, path)
    n0 = hs_norm(traj.state(0), 0.0)
    for i in range(traj.n_steps + 1):
        assert hs_norm(traj.state(i), 0.0) == pytest.approx(n0, rel=1e-10)


def test_galerkin_equals_convolution_linear_case():
    # with F = 0 and zero initial state, the integrator IS the convolution sampler
    m = _heat(nl=zero_nonlinearity(), x0=_zero_field(1))
    path = sample_noise_path(9, 16, 32, 0.5)
    traj = integrate_galerkin(m, 16, path)
    conv = sample_convolution_diagonal(9, m.covariance, DIRICHLET_SINE, 16, 32, 0.5,
                                       path=path).trajectory
    assert np.array_equal(traj.values, conv.values)


def test_galerkin_rejects_undersized_path():
    m = _heat()
    path = sample_noise_path(1, 4, 16, 0.5)
    with pytest.raises(ValueError):
        integrate_galerkin(m, 8, path)


def test_divergence_detection():
    m = _heat(x0=field(DIRICHLET_SINE, np.array([np.inf])))
    path = sample_noise_path(1, 8, 16, 0.5)
    with pytest.raises(DivergenceError) as err:
        integrate_galerkin(m, 8, path)
    assert err.value.seed == 1


# ---------------------------------------------------------------------------
# Trajectory map
# ---------------------------------------------------------------------------


def test_ito_map_affine_when_linear():
    m = _heat(nl=zero_nonlinearity())
    g = np.random.default_rng(2)
    times = np.linspace(0.0, 0.5, 33)
    w_vals = np.cumsum(g.standard_normal((33, 8)), axis=0) * 0.05
    w_vals[0] = 0.0
    w = trajectory_from_values(times, DIRICHLET_SINE, w_vals)
    out = ito_map(m, w)
    lam = DIRICHLET_SINE.eigenvalues(8)
    x0 = np.zeros(8)
    x0[0] = 1.0
    for i, t in enumerate(times):
        want = np.exp(-lam * t) * x0 + w_vals[i]
        assert np.allclose(out.values[i], want, atol=1e-14)


def test_ito_map_marching_matches_fixed_point():
    m = _heat()
    g = np.random.default_rng(3)
    times = np.linspace(0.0, 0.5, 65)
    w_vals = np.cumsum(g.standard_normal((65, 8)), axis=0) * 0.05
    w_vals[0] = 0.0
    w = trajectory_from_values(times, DIRICHLET_SINE, w_vals)
    a = ito_map(m, w)
    b = ito_map_picard(m, w, SolverConfig(m_steps=64, picard_tol=1e-13))
    assert sup_distance(a, b, 0.0) < 1e-11


def test_ito_map_self_consistency_under_refinement():
    # w = 0: the map solves the deterministic equation; quadrupling the step
    # count must move the answer less than the step-halving tolerance
    m = _heat()
    n = 16
    coarse_times = np.linspace(0.0, 0.5, 65)
    fine_times = np.linspace(0.0, 0.5, 257)
    w_coarse = trajectory_from_values(coarse_times, DIRICHLET_SINE, np.zeros((65, n)))
    w_fine = trajectory_from_values(fine_times, DIRICHLET_SINE, np.zeros((257, n)))
    a = ito_map(m, w_coarse)
    b = ito_map(m, w_fine)
    # compare on the shared (coarse) nodes
    diff = np.max(np.abs(a.values - b.values[::4]))
    scale = np.max(np.abs(b.values))
    assert diff / scale < 0.01


# ---------------------------------------------------------------------------
# Representation identities
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_identity_solution_is_map_of_convolution_heat(seed):
    m = _heat()
    n = 16
    m_steps = 64
    cfg = SolverConfig(m_steps=m_steps, m_nodes=4 * n)
    path = sample_noise_path(seed, n, m_steps, m.horizon)
    u = integrate_galerkin(m, n, path, cfg)
    conv = sample_convolution_diagonal(seed, m.covariance, DIRICHLET_SINE, n,
                                       m_steps, m.horizon, path=path).trajectory
    themap = ito_map(m, conv, cfg)
    assert sup_distance(u, themap, 0.0) < 1e-12 * max(1.0, sup_norm_trajectory(u, 0.0))


@pytest.mark.parametrize("seed", [3, 4])
def test_identity_solution_is_map_of_convolution_torus(seed):
    m = _torus()
    n = 8
    m_steps = 32
    cfg = SolverConfig(m_steps=m_steps, m_nodes=8 * n)
    rows = noise_rows_for(m, n)
    path = sample_noise_path(seed, rows, m_steps, m.horizon)
    u = integrate_galerkin(m, n, path, cfg)
    conv = sample_convolution_multiplicative(seed, m.covariance, n, m_steps,
                                             m.horizon, path=path).trajectory
    themap = ito_map(m, conv, cfg)
    assert sup_distance(u, themap, 0.0) < 1e-12


@pytest.mark.parametrize("seed", [5, 6])
def test_identity_solution_is_map_of_convolution_wave(seed):
    m = _wave()
    n = 8
    m_steps = 32
    cfg = SolverConfig(m_steps=m_steps, m_nodes=8 * n)
    path = sample_noise_path(seed, n, m_steps, m.horizon)
    x = integrate_galerkin(m, n, path, cfg)
    conv = sample_convolution_wave(seed, m.covariance, n, m_steps, m.horizon,
                                   path=path).trajectory
    themap = ito_map(m, conv, cfg)
    assert sup_distance(x, themap, 0.0) < 1e-12


@pytest.mark.parametrize("seed", [7, 8])
def test_identity_projected_solution_heat(seed):
    # u_n = map(P_n W + R_n) on the grid, with one shared collocation grid
    m = _heat()
    n, ambient, m_steps = 6, 24, 64
    cfg = SolverConfig(m_steps=m_steps, m_nodes=4 * ambient)
    path = sample_noise_path(seed, ambient, m_steps, m.horizon)
    u_n = integrate_galerkin(m, n, path, cfg)
    conv = sample_convolution_diagonal(seed, m.covariance, DIRICHLET_SINE, ambient,
                                       m_steps, m.horizon, path=path).trajectory
    w = add_trajectories(project_trajectory(conv, n),
                         residual_R_N(m, u_n, n, ambient_dim=ambient, config=cfg))
    recon = ito_map(m, w, cfg)
    assert sup_distance(recon, u_n, 0.0) < 1e-12


@pytest.mark.parametrize("seed", [9])
def test_identity_projected_solution_torus(seed):
    m = _torus()
    n, ambient, m_steps = 4, 12, 32
    cfg = SolverConfig(m_steps=m_steps, m_nodes=8 * ambient)
    rows = noise_rows_for(m, ambient)
    path = sample_noise_path(seed, rows, m_steps, m.horizon)
    u_n = integrate_galerkin(m, n, path, cfg)
    conv = sample_convolution_multiplicative(seed, m.covariance, ambient, m_steps,
                                             m.horizon, path=path).trajectory
    w = add_trajectories(project_trajectory(conv, n),
                         residual_R_N(m, u_n, n, ambient_dim=ambient, config=cfg))
    recon = ito_map(m, w, cfg)
    assert sup_distance(recon, u_n, 0.0) < 1e-12


@pytest.mark.parametrize("seed", [10])
def test_identity_projected_solution_wave(seed):
    m = _wave()
    n, ambient, m_steps = 4, 16, 32
    cfg = SolverConfig(m_steps=m_steps, m_nodes=4 * ambient)
    path = sample_noise_path(seed, ambient, m_steps, m.horizon)
    x_n = integrate_galerkin(m, n, path, cfg)
    conv = sample_convolution_wave(seed, m.covariance, ambient, m_steps, m.horizon,
                                   path=path).trajectory
    w = add_trajectories(project_trajectory(conv, n),
                         residual_R_N(m, x_n, n, ambient_dim=ambient, config=cfg))
    recon = ito_map(m, w, cfg)
    assert sup_distance(recon, x_n, 0.0) < 1e-12


def test_residual_trivial_cases():
    # F = 0 and band-limited x0: residual vanishes identically
    m = _heat(nl=zero_nonlinearity())
    path = _zero_path(8, 16, 0.5)
    u = integrate_galerkin(m, 8, path)
    r = residual_R_N(m, u, 8, ambient_dim=16)
    assert np.allclose(r.values, 0.0, atol=1e-15)


def test_residual_pure_tail_initial_condition():
    # F = 0, x0 = e_{n+1}: R(t) = -e^{-lam_{n+1} t} e_{n+1}
    n = 4
    x0 = basis_vector(DIRICHLET_SINE, n + 1, n + 1)
    m = _heat(nl=zero_nonlinearity(), x0=x0)
    path = _zero_path(n + 1, 16, 0.5)
    u_n = integrate_galerkin(m, n, path)  # projected solution: zero
    assert np.allclose(u_n.values, 0.0, atol=1e-15)
    r = residual_R_N(m, u_n, n, ambient_dim=n + 1)
    lam = DIRICHLET_SINE.eigenvalues(n + 1)[-1]
    for i, t in enumerate(r.times):
        assert r.values[i, -1] == pytest.approx(-np.exp(-lam * t), rel=1e-13)
        assert np.all(r.values[i, :-1] == 0.0)


def test_residual_supported_on_tail():
    m = _heat()
    path = sample_noise_path(11, 8, 32, 0.5)
    u = integrate_galerkin(m, 8, path)
    r = residual_R_N(m, u, 8, ambient_dim=20)
    assert np.allclose(r.values[:, :8], 0.0, atol=1e-15)
    assert np.max(np.abs(r.values[:, 8:])) > 0


# ---------------------------------------------------------------------------
# Frechet and Lipschitz checks
# ---------------------------------------------------------------------------


def _random_trajectory(n, m_steps, horizon, seed, scale=0.2):
    g = np.random.default_rng(seed)
    times = np.linspace(0.0, horizon, m_steps + 1)
    vals = np.cumsum(g.standard_normal((m_steps + 1, n)), axis=0) * scale / np.sqrt(m_steps)
    vals[0] = 0.0
    return trajectory_from_values(times, DIRICHLET_SINE, vals)


def test_frechet_affine_case():
    m = _heat(nl=zero_nonlinearity())
    w = _random_trajectory(8, 32, 0.5, seed=21)
    h = _random_trajectory(8, 32, 0.5, seed=22)
    rep = frechet_check_ito_map(m, w, h, scales=(1e-1, 1e-2))
    h_norm = sup_norm_trajectory(h, 0.0)
    for q in rep.quotients:
        assert q == pytest.approx(h_norm, rel=1e-10)
    assert max(rep.second_differences) < 1e-10
    assert rep.first_order_stable and rep.second_order_bounded


def test_frechet_nonlinear_signatures():
    m = _heat()
    w = _random_trajectory(8, 64, 0.5, seed=23)
    h = _random_trajectory(8, 64, 0.5, seed=24)
    rep = frechet_check_ito_map(m, w, h)
    assert rep.first_order_stable
    assert rep.second_order_bounded
    q = rep.quotients
    assert abs(q[-1] - q[-2]) < 0.05 * q[-1]


def test_lipschitz_gronwall_bound_random_pairs():
    m = _heat()
    lip = gronwall_lipschitz_bound(m)
    assert lip == pytest.approx(np.exp(0.5))  # sup|f'| = 1, T = 0.5, s = 0
    worst = 0.0
    for i in range(30):
        w1 = _random_trajectory(8, 32, 0.5, seed=100 + i)
        w2 = _random_trajectory(8, 32, 0.5, seed=200 + i)
        num = sup_distance(ito_map(m, w1), ito_map(m, w2), 0.0)
        den = sup_distance(w1, w2, 0.0)
        worst = max(worst, num / den)
        assert num <= lip * den * (1 + 1e-9)
    assert worst > 0.5  # the panel actually exercises the bound


def test_step_halving_stability_of_mean_statistic():
    # halving dt moves the ensemble mean sup-norm by far less than 10%
    m = _heat()
    n = 8
    stats = []
    for m_steps in (64, 128):
        vals = []
        for seed in range(200):
            path = sample_noise_path(seed, n, m_steps, m.horizon)
            u = integrate_galerkin(m, n, path)
            vals.append(sup_norm_trajectory(u, 0.0))
        stats.append(np.mean(vals))
    assert abs(stats[1] - stats[0]) < 0.1 * max(stats)
