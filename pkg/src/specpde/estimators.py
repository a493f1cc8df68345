"""Coupled Monte Carlo error estimation and convergence-rate regression.

Strong and weak errors are estimated against a reference resolution with
common random numbers: every resolution of a path is driven by the same
increment rows, so the per-path difference of a bounded functional has
variance on the order of the squared strong error and second-order weak
signals are statistically resolvable at practical path counts.

All resolutions of one path chunk are integrated simultaneously in a fused
step loop; chunks distribute over processes, and per-path results are
reduced in a fixed order so estimates are identical for any worker count.
"""

import math
from dataclasses import dataclass

import numpy as np
from joblib import Parallel, delayed
from scipy import stats as sp_stats

from . import rng
from .basis import Trajectory
from .models import ModelSpec, predicted_rates
from .solvers import (
    DivergenceError, SolverConfig, add_trajectories, ito_map, make_stepper,
    noise_rows_for, project_trajectory,
)

__all__ = [
    "TestFunctional", "cosine_functional", "gaussian_bump_functional",
    "default_probe", "eval_test_functional", "functional_lipschitz_bound",
    "RateFit", "fit_rate", "ErrorReport",
    "strong_error_curve", "weak_error_curve", "run_error_experiment",
    "independence_diagnostic", "IndependenceReport",
]

MIN_PATHS_FOR_FIT = 100
CHUNK_BYTE_BUDGET = 1 << 30  # per-chunk increment storage (float32)


# ---------------------------------------------------------------------------
# Test functionals
# ---------------------------------------------------------------------------


def default_probe(model_or_basis, dim: int = 8) -> np.ndarray:
    """Probe field g = sum_{k<=8} k^{-1} e_k, normalized to |g|_0 = 1.

    On the torus the real cosine directions play the role of e_k so that
    <x, g> is real for real fields.  Mixing resolved and (for small n)
    unresolved modes keeps weak errors nontrivial at every benchmark size.
    """
    basis = model_or_basis.basis if isinstance(model_or_basis, ModelSpec) else model_or_basis
    w = 1.0 / np.arange(1, dim + 1)
    if basis.kind == "fourier-torus":
        coeffs = np.zeros(2 * dim + 1, dtype=np.complex128)
        coeffs[1::2] = w / np.sqrt(2.0)
        coeffs[2::2] = w / np.sqrt(2.0)
    else:
        coeffs = w.astype(np.float64)
    return coeffs / np.sqrt(float(np.sum(np.abs(coeffs) ** 2)))


@dataclass(frozen=True, eq=False)
class TestFunctional:
    """Bounded C^2 trajectory functional from the built-in catalog.

    kind 'fixed-time' evaluates phi at the grid node nearest t; kind
    'time-integral' integrates phi over [t1, t2] with the trapezoid rule on
    the grid; 'composed' applies a bounded scalar map to the time integral.
    phi is 'cosine-functional' (cos <x, g> for the probe g) or
    'gaussian-bump' (exp(-|x|_0^2)); phase-space states are probed through
    their position component.
    """

    __test__ = False  # not a pytest class

    kind: str
    phi: str
    t: float | None = None
    window: tuple | None = None
    outer: str | None = None
    outer_alpha: float = 1.0
    probe: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in ("fixed-time", "time-integral", "composed"):
            raise ValueError(f"unknown functional kind {self.kind!r}")
        if self.phi not in ("cosine-functional", "gaussian-bump"):
            raise ValueError(f"unknown inner map {self.phi!r}")
        if self.kind == "fixed-time" and self.t is None:
            raise ValueError("fixed-time functional needs a time t")
        if self.kind in ("time-integral", "composed") and self.window is None:
            raise ValueError("time-integral functional needs a window (t1, t2)")
        if self.kind == "composed" and self.outer not in ("tanh", "scaled-sine"):
            raise ValueError("composed functional needs outer in {'tanh', 'scaled-sine'}")

    def describe(self) -> dict:
        d = {"kind": self.kind, "phi": self.phi}
        if self.t is not None:
            d["t"] = self.t
        if self.window is not None:
            d["window"] = list(self.window)
        if self.outer is not None:
            d["outer"] = self.outer
            d["outer_alpha"] = self.outer_alpha
        return d


def cosine_functional(kind: str, model: ModelSpec, t=None, window=None,
                      outer=None, outer_alpha: float = 1.0) -> TestFunctional:
    return TestFunctional(kind, "cosine-functional", t=t, window=window,
                          outer=outer, outer_alpha=outer_alpha,
                          probe=default_probe(model))


def gaussian_bump_functional(kind: str, t=None, window=None, outer=None,
                             outer_alpha: float = 1.0) -> TestFunctional:
    return TestFunctional(kind, "gaussian-bump", t=t, window=window,
                          outer=outer, outer_alpha=outer_alpha)


class _FunctionalAccumulator:
    """Streams phi over the grid for a batch of paths."""

    def __init__(self, func: TestFunctional, times: np.ndarray, n_paths: int,
                 is_phase: bool):
        self.func = func
        self.is_phase = is_phase
        dt = float(times[1] - times[0])
        m = times.size - 1
        if func.kind == "fixed-time":
            idx = int(round(func.t / dt))
            if not (0 <= idx <= m):
                raise ValueError(f"fixed time {func.t} outside the grid")
            self.weights = None
            self.index = idx
        else:
            t1, t2 = func.window
            i1, i2 = int(round(t1 / dt)), int(round(t2 / dt))
            if not (0 <= i1 < i2 <= m):
                raise ValueError(f"window {func.window} outside the grid")
            w = np.zeros(m + 1)
            w[i1:i2 + 1] = dt
            w[i1] = w[i2] = dt / 2.0
            self.weights = w
            self.index = None
        self.acc = np.zeros(n_paths)

    def phi_of(self, state: np.ndarray) -> np.ndarray:
        u = state[:, 0, :] if self.is_phase else state
        if self.func.phi == "cosine-functional":
            g = self.func.probe
            k = min(u.shape[-1], g.shape[-1])
            inner = u[:, :k] @ np.conj(g[:k])
            return np.cos(np.real(inner))
        mag2 = np.real(u * np.conj(u)) if np.iscomplexobj(u) else u * u
        return np.exp(-np.sum(mag2, axis=-1))

    def collect(self, i: int, state: np.ndarray):
        if self.weights is None:
            if i == self.index:
                self.acc += self.phi_of(state)
        else:
            w = self.weights[i]
            if w != 0.0:
                self.acc += w * self.phi_of(state)

    def finish(self) -> np.ndarray:
        if self.func.kind == "composed":
            if self.func.outer == "tanh":
                return np.tanh(self.acc)
            return self.func.outer_alpha * np.sin(self.acc)
        return self.acc.copy()


def eval_test_functional(func: TestFunctional, traj: Trajectory) -> float:
    """Evaluate one catalog functional on one trajectory."""
    acc = _FunctionalAccumulator(func, traj.times, 1, traj.is_phase)
    for i in range(traj.times.size):
        acc.collect(i, traj.values[i][None, ...])
    return float(acc.finish()[0])


def functional_lipschitz_bound(func: TestFunctional, horizon: float) -> float:
    """Crude Lipschitz constant of the functional in the sup H^0 norm."""
    if func.phi == "cosine-functional":
        inner = 1.0  # |grad cos<x,g>| <= |g|_0 = 1
    else:
        inner = math.sqrt(2.0 / math.e)  # sup 2|x| e^{-|x|^2}
    if func.kind == "fixed-time":
        scale = 1.0
    else:
        scale = func.window[1] - func.window[0]
    if func.kind == "composed":
        scale *= 1.0 if func.outer == "tanh" else abs(func.outer_alpha)
    return inner * scale


# ---------------------------------------------------------------------------
# Rate regression
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RateFit:
    slope: float
    intercept: float
    residual: float  # sum of squared log-residuals
    stderr: float
    ci_low: float
    ci_high: float
    n_points: int


def fit_rate(points) -> RateFit:
    """Ordinary least squares of log(value) on log(N).

    The confidence interval is slope +/- t_{0.975, n-2} times the
    residual-based standard error; with a perfect power law the residual is
    zero and the interval collapses onto the slope.
    """
    pts = [(float(n), float(v)) for (n, v) in points]
    if len(pts) < 3:
        raise ValueError("rate fitting needs at least 3 uncensored points")
    if any(v <= 0 for (_, v) in pts):
        raise ValueError("rate fitting needs positive values")
    x = np.log([p[0] for p in pts])
    y = np.log([p[1] for p in pts])
    n = len(pts)
    xbar = x.mean()
    sxx = float(np.sum((x - xbar) ** 2))
    slope = float(np.sum((x - xbar) * (y - y.mean())) / sxx)
    intercept = float(y.mean() - slope * xbar)
    resid = y - (intercept + slope * x)
    rss = float(np.sum(resid**2))
    if n > 2:
        se = math.sqrt(rss / (n - 2) / sxx)
        tq = float(sp_stats.t.ppf(0.975, n - 2))
    else:  # pragma: no cover
        se, tq = math.inf, math.inf
    return RateFit(slope, intercept, rss, se, slope - tq * se, slope + tq * se, n)


# ---------------------------------------------------------------------------
# Error reports
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ErrorReport:
    quantity: str  # 'strong' | 'weak'
    resolutions: tuple
    estimates: tuple
    stderrs: tuple
    n_paths: tuple
    censored: tuple
    n_ref: int
    slope: RateFit | None
    predicted_exponent: float
    epsilon: float
    seed: int
    functional: dict | None = None

    def point_rows(self):
        for i, n in enumerate(self.resolutions):
            yield {"N": int(n), "estimate": self.estimates[i],
                   "stderr": self.stderrs[i], "paths": int(self.n_paths[i]),
                   "censored": bool(self.censored[i])}


def _validate_grid_args(resolutions, n_ref):
    res = [int(n) for n in resolutions]
    if sorted(set(res)) != res:
        raise ValueError("resolutions must be strictly increasing")
    if n_ref < 4 * max(res):
        raise ValueError("reference resolution must be at least 4x the largest resolution")
    return res


# ---------------------------------------------------------------------------
# Fused coupled engine
# ---------------------------------------------------------------------------


def _chunk_spans(total: int, chunk: int):
    return [(lo, min(lo + chunk, total)) for lo in range(0, total, chunk)]


def _run_chunk(model: ModelSpec, resolutions, n_ref: int, seeds,
               m_steps: int, m_nodes, functionals, collect_strong: bool,
               finite_window: int):
    """Integrate one chunk of coupled paths; returns per-path statistics."""
    batch = len(seeds)
    dt = model.horizon / m_steps
    rows = noise_rows_for(model, n_ref)
    all_n = list(resolutions) + [n_ref]
    steppers = {n: make_stepper(model, n, dt, m_nodes) for n in all_n}
    ref = steppers[n_ref]
    is_phase = model.family == "wave"
    s = model.s

    # increments: float32 storage for memory, upcast on use; values are
    # deterministic functions of (seed, row, step) regardless of layout
    xi = np.empty((batch, rows, m_steps), dtype=np.float32)
    for i, seed in enumerate(seeds):
        xi[i] = rng.normal_rows(seed, rows, m_steps, dtype=np.float32)

    from .solvers import initial_state_array
    states = {n: steppers[n].init_state(batch, initial_state_array(model, n))
              for n in all_n}

    lam_ref = ref.basis.eigenvalues(n_ref)
    w_s = lam_ref**s if s != 0.0 else np.ones_like(lam_ref)
    if is_phase:
        w_v = lam_ref ** (s - 1.0)

    strong_max = {n: np.zeros(batch) for n in resolutions} if collect_strong else None
    times = np.linspace(0.0, model.horizon, m_steps + 1)
    accs = {}
    for fi, func in enumerate(functionals):
        for n in all_n:
            accs[(fi, n)] = _FunctionalAccumulator(func, times, batch, is_phase)

    def collect(i):
        if collect_strong:
            ref_state = states[n_ref]
            for n in resolutions:
                k = steppers[n].k
                if is_phase:
                    du = ref_state[:, 0, :k] - states[n][:, 0, :]
                    dv = ref_state[:, 1, :k] - states[n][:, 1, :]
                    d2 = (du * du) @ w_s[:k] + (dv * dv) @ w_v[:k]
                    d2 += (ref_state[:, 0, k:] ** 2) @ w_s[k:]
                    d2 += (ref_state[:, 1, k:] ** 2) @ w_v[k:]
                else:
                    diff = ref_state[:, :k] - states[n]
                    tail = ref_state[:, k:]
                    if np.iscomplexobj(diff):
                        d2 = (diff.real**2 + diff.imag**2) @ w_s[:k]
                        d2 += (tail.real**2 + tail.imag**2) @ w_s[k:]
                    else:
                        d2 = (diff * diff) @ w_s[:k] + (tail * tail) @ w_s[k:]
                np.maximum(strong_max[n], d2, out=strong_max[n])
        for (fi, n), acc in accs.items():
            acc.collect(i, states[n])

    collect(0)
    for m in range(m_steps):
        xi_m = xi[:, :, m].astype(np.float64)
        noise = ref.noise_increment(xi_m)
        for n in all_n:
            states[n] = steppers[n].step(states[n], noise)
        if (m + 1) % finite_window == 0 or m + 1 == m_steps:
            probe = states[n_ref]
            flat = probe.view(np.float64) if np.iscomplexobj(probe) else probe
            bad = ~np.isfinite(flat).all(axis=tuple(range(1, flat.ndim)))
            if bad.any():
                raise DivergenceError(seeds[int(np.argmax(bad))], m + 1)
        collect(m + 1)

    out = {"phi": {key: acc.finish() for key, acc in accs.items()}}
    if collect_strong:
        out["strong"] = {n: np.sqrt(strong_max[n]) for n in resolutions}
    return out


def run_error_experiment(model: ModelSpec, resolutions, n_ref: int, seed: int,
                         config: SolverConfig | None = None,
                         strong_paths: int = 0, weak_paths: int = 0,
                         functionals=(), workers: int = 1,
                         epsilon: float = 0.05,
                         chunk_bytes: int = CHUNK_BYTE_BUDGET):
    """One coupled pass producing a strong report and/or weak reports.

    Paths are indexed 0..max(strong_paths, weak_paths)-1 with per-path seeds
    offset from `seed`; strong statistics use the first `strong_paths` of
    them, weak statistics the first `weak_paths`.
    """
    config = config or SolverConfig()
    res = _validate_grid_args(resolutions, n_ref)
    if strong_paths == 0 and weak_paths == 0:
        raise ValueError("nothing to estimate")
    for count, what in ((strong_paths, "strong"), (weak_paths, "weak")):
        if count and count < MIN_PATHS_FOR_FIT:
            raise ValueError(f"{what} estimation needs at least {MIN_PATHS_FOR_FIT} paths "
                             f"for a stable fit (got {count})")
    if weak_paths and not functionals:
        raise ValueError("weak estimation needs at least one test functional")

    total = max(strong_paths, weak_paths)
    m_steps = config.m_steps
    rows = noise_rows_for(model, n_ref)
    chunk = max(16, min(total, int(chunk_bytes // (rows * m_steps * 4)) or 16))
    spans = _chunk_spans(total, chunk)

    def job(lo, hi):
        seeds = [rng.path_seed(seed, i) for i in range(lo, hi)]
        collect_strong = strong_paths > lo
        return _run_chunk(model, res, n_ref, seeds, m_steps, config.m_nodes,
                          functionals if weak_paths > lo else (),
                          collect_strong, config.finite_check_window)

    if workers > 1 and len(spans) > 1:
        results = Parallel(n_jobs=workers)(delayed(job)(lo, hi) for lo, hi in spans)
    else:
        results = [job(lo, hi) for lo, hi in spans]

    strong_report = None
    if strong_paths:
        ests, ses = [], []
        for n in res:
            vals = np.concatenate([r["strong"][n] for r in results if "strong" in r])
            vals = vals[:strong_paths]
            ests.append(float(np.mean(vals)))
            ses.append(float(np.std(vals, ddof=1) / np.sqrt(vals.size)))
        fit = fit_rate(list(zip(res, ests))) if len(res) >= 3 else None
        strong_report = ErrorReport(
            "strong", tuple(res), tuple(ests), tuple(ses),
            tuple([strong_paths] * len(res)), tuple([False] * len(res)),
            n_ref, fit, predicted_rates(model).strong_N_exponent, epsilon, seed)

    weak_reports = []
    for fi, func in enumerate(functionals):
        if not weak_paths:
            break
        ests, ses, censored = [], [], []
        ref_vals = np.concatenate([r["phi"][(fi, n_ref)] for r in results
                                   if (fi, n_ref) in r["phi"]])[:weak_paths]
        for n in res:
            vals = np.concatenate([r["phi"][(fi, n)] for r in results
                                   if (fi, n) in r["phi"]])[:weak_paths]
            d = ref_vals - vals
            est = float(np.mean(d))
            se = float(np.std(d, ddof=1) / np.sqrt(d.size))
            ests.append(est)
            ses.append(se)
            censored.append(abs(est) <= 2.0 * se)
        fit_pts = [(n, abs(e)) for n, e, c in zip(res, ests, censored) if not c]
        fit = fit_rate(fit_pts) if len(fit_pts) >= 3 else None
        weak_reports.append(ErrorReport(
            "weak", tuple(res), tuple(ests), tuple(ses),
            tuple([weak_paths] * len(res)), tuple(censored),
            n_ref, fit, predicted_rates(model).weak_N_exponent, epsilon, seed,
            functional=func.describe()))
    return strong_report, weak_reports


def strong_error_curve(model: ModelSpec, resolutions, n_ref: int, m_paths: int,
                       seed: int, config: SolverConfig | None = None,
                       workers: int = 1, epsilon: float = 0.05) -> ErrorReport:
    """Strong error E sup_t |u_ref - u_N|_s against a coupled reference run."""
    report, _ = run_error_experiment(model, resolutions, n_ref, seed, config,
                                     strong_paths=m_paths, workers=workers,
                                     epsilon=epsilon)
    return report


def weak_error_curve(model: ModelSpec, functional: TestFunctional, resolutions,
                     n_ref: int, m_paths: int, seed: int,
                     config: SolverConfig | None = None, workers: int = 1,
                     epsilon: float = 0.05) -> ErrorReport:
    """Coupled-difference weak error E[Phi(u_ref) - Phi(u_N)] per resolution."""
    _, reports = run_error_experiment(model, resolutions, n_ref, seed, config,
                                      weak_paths=m_paths, functionals=[functional],
                                      workers=workers, epsilon=epsilon)
    return reports[0]


# ---------------------------------------------------------------------------
# Independence diagnostic
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class IndependenceReport:
    estimate: float
    stderr: float
    n_paths: int
    fd_epsilon: float
    null_expected: bool

    @property
    def within(self) -> float:
        return abs(self.estimate) / self.stderr if self.stderr > 0 else math.inf


def independence_diagnostic(model: ModelSpec, n: int, m_paths: int, seed: int,
                            functional: TestFunctional | None = None,
                            config: SolverConfig | None = None,
                            k_full: int | None = None,
                            fd_epsilon: float = 1e-3) -> IndependenceReport:
    """First-order term of the weak expansion along the realized tail path.

    Estimates E[ D(Phi o map)(P_n W) . (P_n^perp W) ] by a centered finite
    difference along each sampled tail; for commuting covariances the band
    and tail are independent and the tail is centered Gaussian, so the
    estimate must vanish within noise (the estimator is even exactly
    unbiased for 0, since the tail's sign flip leaves the law invariant).
    For the non-commuting torus model the number is reported without a null
    assertion.
    """
    from .noise import (sample_convolution_diagonal,
                        sample_convolution_multiplicative)
    config = config or SolverConfig(m_steps=256)
    functional = functional or gaussian_bump_functional(
        "time-integral", window=(0.0, model.horizon))
    k_full = k_full or 4 * n
    vals = np.empty(m_paths)
    commuting = model.covariance.kind == "diagonal"
    for i in range(m_paths):
        path_seed = rng.path_seed(seed, i)
        if commuting:
            conv = sample_convolution_diagonal(
                path_seed, model.covariance, model.basis, k_full,
                config.m_steps, model.horizon).trajectory
        else:
            conv = sample_convolution_multiplicative(
                path_seed, model.covariance, k_full, config.m_steps,
                model.horizon).trajectory
        band = project_trajectory(conv, n)
        tail = add_trajectories(conv, band, -1.0)
        plus = ito_map(model, add_trajectories(band, tail, fd_epsilon), config)
        minus = ito_map(model, add_trajectories(band, tail, -fd_epsilon), config)
        vals[i] = (eval_test_functional(functional, plus)
                   - eval_test_functional(functional, minus)) / (2.0 * fd_epsilon)
    est = float(np.mean(vals))
    se = float(np.std(vals, ddof=1) / np.sqrt(m_paths))
    return IndependenceReport(est, se, m_paths, fd_epsilon, commuting)
