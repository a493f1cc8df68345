"""Spectral core: norms, semigroup/group action, projections, transforms."""

import numpy as np
import pytest

from specpde.basis import (
    DIRICHLET_SINE, FOURIER_TORUS,
    apply_group_wave, apply_semigroup, basis_vector, field, from_collocation,
    hs_norm, phase_field, project, project_complement, sup_norm_trajectory,
    to_collocation, trajectory_from_values,
)


def _random_sine(n, seed=0, decay=1.0):
    g = np.random.default_rng(seed)
    k = np.arange(1, n + 1)
    return field(DIRICHLET_SINE, g.standard_normal(n) / k**decay)


def _random_torus(n, seed=0, decay=1.0):
    g = np.random.default_rng(seed)
    half = (g.standard_normal(n + 1) + 1j * g.standard_normal(n + 1))
    half[0] = half[0].real
    half /= np.maximum(1, np.arange(n + 1)) ** decay
    coeffs = np.empty(2 * n + 1, dtype=complex)
    coeffs[0] = half[0]
    coeffs[1::2] = half[1:]
    coeffs[2::2] = np.conj(half[1:])
    return field(FOURIER_TORUS, coeffs)


def _loop_norm(u, s):
    # independent scalar-loop oracle for the interpolation norm
    lam = u.basis.eigenvalues(u.dimension)
    total = 0.0
    for j in range(u.coeffs.size):
        total += lam[j] ** s * abs(u.coeffs[j]) ** 2
    return np.sqrt(total)


# ---------------------------------------------------------------------------
# hs_norm
# ---------------------------------------------------------------------------


def test_hs_norm_single_mode():
    e1 = basis_vector(DIRICHLET_SINE, 1, 4)
    assert hs_norm(e1, 1.0) == pytest.approx(np.pi, rel=1e-14)
    assert hs_norm(e1, 0.0) == pytest.approx(1.0, rel=1e-14)


def test_hs_norm_matches_loop_oracle():
    u = _random_sine(64, seed=1)
    assert hs_norm(u, 0.5) == pytest.approx(_loop_norm(u, 0.5), rel=1e-12)
    v = _random_torus(32, seed=2)
    assert hs_norm(v, 0.5) == pytest.approx(_loop_norm(v, 0.5), rel=1e-12)


def test_hs_norm_empty_field():
    u = field(DIRICHLET_SINE, np.zeros(0))
    assert hs_norm(u, 1.0) == 0.0


def test_hs_norm_rejects_out_of_range_exponent():
    u = _random_sine(4)
    with pytest.raises(ValueError):
        hs_norm(u, 2.5)
    with pytest.raises(ValueError):
        hs_norm(u, -2.5)


def test_phase_norm_decomposition():
    u = _random_sine(16, seed=3)
    v = _random_sine(16, seed=4)
    x = phase_field(u, v)
    for s in (0.0, 0.25, 0.5):
        expected = np.sqrt(hs_norm(u, s) ** 2 + hs_norm(v, s - 1.0) ** 2)
        assert hs_norm(x, s) == pytest.approx(expected, rel=1e-13)


# ---------------------------------------------------------------------------
# semigroup
# ---------------------------------------------------------------------------


def test_semigroup_single_mode():
    e1 = basis_vector(DIRICHLET_SINE, 1, 4)
    out = apply_semigroup(e1, 1.0)
    assert out.coeffs[0] == pytest.approx(np.exp(-np.pi**2), rel=1e-14)
    assert np.all(out.coeffs[1:] == 0.0)


def test_semigroup_identity_at_zero():
    u = _random_sine(32, seed=5)
    assert np.array_equal(apply_semigroup(u, 0.0).coeffs, u.coeffs)


def test_semigroup_rejects_negative_time():
    with pytest.raises(ValueError):
        apply_semigroup(_random_sine(4), -0.1)


def test_semigroup_law():
    u = _random_sine(32, seed=6)
    a = apply_semigroup(apply_semigroup(u, 0.3), 0.45)
    b = apply_semigroup(u, 0.75)
    assert np.allclose(a.coeffs, b.coeffs, rtol=1e-12, atol=1e-15)


def test_semigroup_contraction():
    u = _random_sine(32, seed=7)
    lam1 = np.pi**2
    for t in (0.01, 0.1, 1.0):
        for s in (0.0, 0.5, 1.0):
            assert hs_norm(apply_semigroup(u, t), s) <= np.exp(-lam1 * t) * hs_norm(u, s) * (1 + 1e-12)


def _sharp_constant(s1, s2, t):
    a = (s2 - s1) / 2.0
    if a == 0.0:
        return 1.0
    return (a / (np.e * t)) ** a


def test_smoothing_bound_with_sharp_constant():
    # oracle: the constant is the max of lambda^{(s2-s1)/2} e^{-t lambda} over
    # lambda > 0, computed here by dense numerical maximization
    for (s1, s2) in [(0.0, 1.0), (0.0, 0.5), (0.5, 1.5), (0.0, 2.0)]:
        for t in (0.01, 0.1, 1.0):
            grid = np.exp(np.linspace(np.log(1e-6), np.log(1e8), 400001))
            numeric = np.max(grid ** ((s2 - s1) / 2.0) * np.exp(-t * grid))
            assert _sharp_constant(s1, s2, t) == pytest.approx(numeric, rel=1e-8)
            for seed in (8, 9):
                u = _random_sine(64, seed=seed)
                lhs = hs_norm(apply_semigroup(u, t), s2)
                rhs = _sharp_constant(s1, s2, t) * hs_norm(u, s1)
                assert lhs <= rhs * (1 + 1e-12)


def test_smoothing_bound_torus():
    u = _random_torus(32, seed=10)
    for t in (0.01, 0.1, 1.0):
        lhs = hs_norm(apply_semigroup(u, t), 1.0)
        rhs = _sharp_constant(0.0, 1.0, t) * hs_norm(u, 0.0)
        assert lhs <= rhs * (1 + 1e-12)


# ---------------------------------------------------------------------------
# wave group
# ---------------------------------------------------------------------------


def _random_phase(n, seed=0):
    return phase_field(_random_sine(n, seed=seed), _random_sine(n, seed=seed + 1000))


def test_group_identity_at_zero():
    x = _random_phase(16, seed=11)
    y = apply_group_wave(x, 0.0)
    assert np.allclose(y.position.coeffs, x.position.coeffs, atol=1e-15)
    assert np.allclose(y.velocity.coeffs, x.velocity.coeffs, atol=1e-15)


def test_group_inverse():
    x = _random_phase(16, seed=12)
    y = apply_group_wave(apply_group_wave(x, 0.7), -0.7)
    assert np.allclose(y.position.coeffs, x.position.coeffs, rtol=1e-12, atol=1e-14)
    assert np.allclose(y.velocity.coeffs, x.velocity.coeffs, rtol=1e-12, atol=1e-14)


def test_group_composition():
    x = _random_phase(8, seed=13)
    a = apply_group_wave(apply_group_wave(x, 0.2), 0.5)
    b = apply_group_wave(x, 0.7)
    assert np.allclose(a.position.coeffs, b.position.coeffs, rtol=1e-11, atol=1e-13)
    assert np.allclose(a.velocity.coeffs, b.velocity.coeffs, rtol=1e-11, atol=1e-13)


def test_group_isometry():
    x = _random_phase(32, seed=14)
    for s in (0.0, 0.25, 0.5):
        n0 = hs_norm(x, s)
        for t in (-2.0, 0.3, 1.7):
            assert hs_norm(apply_group_wave(x, t), s) == pytest.approx(n0, rel=1e-12)


# ---------------------------------------------------------------------------
# projections
# ---------------------------------------------------------------------------


def test_projection_single_mode():
    e1 = basis_vector(DIRICHLET_SINE, 1, 4)
    assert np.array_equal(project(e1, 1).coeffs, e1.coeffs)
    assert np.all(project_complement(e1, 1).coeffs == 0.0)


def test_projection_partition_and_idempotence():
    for u in (_random_sine(32, seed=15), _random_torus(16, seed=16)):
        n = 5
        p = project(u, n)
        q = project_complement(u, n)
        assert np.allclose(p.coeffs + q.coeffs, u.coeffs, atol=1e-15)
        assert np.array_equal(project(p, n).coeffs, p.coeffs)


def test_projection_pythagoras():
    for u in (_random_sine(32, seed=17), _random_torus(16, seed=18)):
        for s in (0.0, 0.5, 1.0):
            total = hs_norm(u, s) ** 2
            split = hs_norm(project(u, 5), s) ** 2 + hs_norm(project_complement(u, 5), s) ** 2
            assert split == pytest.approx(total, rel=1e-12)


def test_projection_orthogonality():
    u = _random_sine(32, seed=19)
    lam = u.basis.eigenvalues(u.dimension)
    p = project(u, 7).coeffs
    q = project_complement(u, 7).coeffs
    for s in (0.0, 1.0):
        assert abs(np.sum(lam**s * p * q)) < 1e-12


def test_projection_tail_bound():
    # per-mode bound: lambda_k^{s1} <= lambda_{N+1}^{s1-s2} lambda_k^{s2} for k > N
    u = _random_sine(64, seed=20)
    lam = u.basis.eigenvalues(u.dimension)
    for (s1, s2) in [(0.0, 1.0), (0.5, 1.5)]:
        for n in (4, 16, 32):
            lhs = hs_norm(project_complement(u, n), s1)
            rhs = lam[n] ** (-(s2 - s1) / 2.0) * hs_norm(u, s2)
            assert lhs <= rhs * (1 + 1e-12)


def test_projection_rejects_oversized_level():
    with pytest.raises(ValueError):
        project(_random_sine(8), 9)


# ---------------------------------------------------------------------------
# collocation transforms
# ---------------------------------------------------------------------------


def test_sine_mode_values():
    e1 = basis_vector(DIRICHLET_SINE, 1, 3)
    vals = to_collocation(e1, 8)
    xi = np.arange(1, 8) / 8.0
    assert np.allclose(vals, np.sqrt(2) * np.sin(np.pi * xi), atol=1e-14)


def test_sine_round_trip():
    u = _random_sine(16, seed=21, decay=0.0)
    vals = to_collocation(u, 64)
    back = from_collocation(vals, DIRICHLET_SINE, 16)
    assert np.allclose(back.coeffs, u.coeffs, rtol=1e-12, atol=1e-14)


def test_torus_round_trip():
    u = _random_torus(16, seed=22, decay=0.0)
    vals = to_collocation(u, 64)
    assert np.all(np.abs(np.imag(vals)) == 0.0)  # real-valued by construction
    back = from_collocation(vals, FOURIER_TORUS, 16)
    assert np.allclose(back.coeffs, u.coeffs, rtol=1e-12, atol=1e-14)


def test_torus_parseval():
    u = _random_torus(12, seed=23, decay=0.0)
    m = 64
    vals = to_collocation(u, m)
    assert hs_norm(u, 0.0) ** 2 == pytest.approx(np.sum(vals**2) / m, rel=1e-12)


def test_transform_rejects_undersampled_grid():
    u = _random_sine(16, seed=24)
    with pytest.raises(ValueError):
        to_collocation(u, 2 * (16 + 1) - 1)
    to_collocation(u, 2 * (16 + 1))  # boundary accepted


def test_torus_point_values():
    # e_1 direction (cos): (e_1 + e_{-1})/sqrt(2) has values sqrt(2) cos(2 pi x)
    u = basis_vector(FOURIER_TORUS, 1, 4)
    m = 16
    vals = to_collocation(u, m)
    x = np.arange(m) / m
    assert np.allclose(vals, np.sqrt(2) * np.cos(2 * np.pi * x), atol=1e-13)


# ---------------------------------------------------------------------------
# trajectories
# ---------------------------------------------------------------------------


def test_sup_norm_constant_trajectory():
    e1 = basis_vector(DIRICHLET_SINE, 1, 4)
    times = np.linspace(0.0, 1.0, 11)
    vals = np.tile(e1.coeffs, (11, 1))
    traj = trajectory_from_values(times, DIRICHLET_SINE, vals)
    assert sup_norm_trajectory(traj, 0.0) == pytest.approx(1.0, rel=1e-14)


def test_sup_norm_decaying_trajectory_attained_at_zero():
    e1 = basis_vector(DIRICHLET_SINE, 1, 4)
    times = np.linspace(0.0, 1.0, 33)
    vals = np.stack([apply_semigroup(e1, t).coeffs for t in times])
    traj = trajectory_from_values(times, DIRICHLET_SINE, vals)
    assert sup_norm_trajectory(traj, 0.0) == pytest.approx(1.0, rel=1e-14)


def test_sup_norm_matches_loop_oracle():
    g = np.random.default_rng(25)
    times = np.linspace(0.0, 0.5, 17)
    vals = g.standard_normal((17, 8))
    traj = trajectory_from_values(times, DIRICHLET_SINE, vals)
    oracle = max(hs_norm(traj.state(i), 0.5) for i in range(17))
    assert sup_norm_trajectory(traj, 0.5) == oracle


def test_trajectory_rejects_nonuniform_grid():
    with pytest.raises(ValueError):
        trajectory_from_values(np.array([0.0, 0.1, 0.3]), DIRICHLET_SINE, np.zeros((3, 4)))
