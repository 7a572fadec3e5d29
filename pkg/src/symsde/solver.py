"""Pathwise solution of the scaled and averaged systems on one noise path.

The state equation is the random ODE
    dY/ds = dH/dx(mu_s, F(mu_s, Y_s)) * b(F(mu_s, Y_s), s/epsilon),
integrated with classical RK4; the solution is reconstructed as
X = F(mu, Y).  By the inverse-function theorem dH/dx at F(mu_s, Y_s) equals
1 / dF/dx at (mu_s, Y_s), so the right-hand side needs no Newton inversion:
one augmented flow integration per stage supplies both F and the derivative.

The fast drift is integrated with step capped at epsilon/8; undersampling the
oscillation would silently destroy the averaging effect being measured.
Between grid nodes mu is linearly interpolated.

The internal engine is vectorized over a batch of paths (lanes); failures
(non-finite states, a-priori bound violations) poison only their own lane,
which is how the Monte Carlo layer isolates failed replicates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .averaging import DriftSpec, averaged_drift, averaged_drift_fn
from .errors import ConfigurationError, NumericalError
from .flow import DiffusionSpec, FlowMap, _flow_core, flow_inverse
from .noise import NoiseGrid, NoisePath, downsample as _downsample_path, same_grid

_SLACK = 1e-9


@dataclass(frozen=True, eq=False)
class ModelSpec:
    """Coefficient pair and deterministic initial value for one model."""

    diffusion: DiffusionSpec
    drift: DriftSpec
    x0: float

    def __post_init__(self):
        if not np.isfinite(self.x0):
            raise ConfigurationError(f"x0 must be finite, got {self.x0}")


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Grid-aligned Y and X = F(mu, Y) values for one path and one epsilon.

    epsilon is None for the averaged system.  path_ref identifies the noise
    realization (driver, seed) the trajectory was solved on.
    """

    grid: NoiseGrid
    y: np.ndarray
    x: np.ndarray
    epsilon: Optional[float]
    path_ref: tuple

    @property
    def is_averaged(self) -> bool:
        return self.epsilon is None

    def label(self) -> str:
        return "averaged" if self.epsilon is None else f"eps={self.epsilon:g}"


def _substeps_per_cell(dt: float, epsilon: Optional[float], substeps: int) -> int:
    if epsilon is None:
        return substeps
    return max(substeps, int(math.ceil(8.0 * dt / epsilon)))


def _solve_batch(model: ModelSpec, fm: FlowMap, times: np.ndarray, mu: np.ndarray,
                 epsilon: Optional[float], substeps: int):
    """Solve the Y-ODE for a batch of paths (rows of mu) in lockstep.

    Returns (y, x, bad, first_bad_time): per-lane outputs plus a failure mask
    with the first non-finite node time (nan when not applicable).
    """
    spec = model.diffusion
    drift = model.drift
    rspu = fm.r_substeps_per_unit
    b_bar = averaged_drift_fn(drift) if epsilon is None else None

    n_lanes, n_pts = mu.shape
    n = n_pts - 1
    y_out = np.empty((n_lanes, n_pts))
    x_out = np.empty((n_lanes, n_pts))
    if drift.sup_bound == 0.0:
        # |b| <= 0 declared: Y never moves, X is the flow of x0 along mu
        y_out[:] = float(model.x0)
        x_out[:], _ = _flow_core(spec, mu, y_out, rspu, False)
        bad = ~np.isfinite(x_out).all(axis=1)
        return y_out, x_out, bad, np.full(n_lanes, np.nan)
    # Y(0) = H(0, x0) = x0 since F(0, .) is the identity
    y = np.full(n_lanes, float(model.x0))
    y_out[:, 0] = y

    def rhs(s, mu_s, y_state):
        forward, log_dx = _flow_core(spec, mu_s, y_state, rspu, True)
        if epsilon is None:
            bval = b_bar(forward)
        else:
            bval = drift.eval(forward, s / epsilon)
        return bval * np.exp(-log_dx), forward

    for k in range(n):
        t_lo = times[k]
        dt = times[k + 1] - t_lo
        mu_lo = mu[:, k]
        mu_hi = mu[:, k + 1]
        slope = (mu_hi - mu_lo) / dt
        nsub = _substeps_per_cell(dt, epsilon, substeps)
        h = dt / nsub
        for j in range(nsub):
            off = j * h
            s0 = t_lo + off
            mu_s0 = mu_lo + off * slope
            mu_sm = mu_lo + (off + 0.5 * h) * slope
            mu_s1 = mu_hi if j == nsub - 1 else mu_lo + (off + h) * slope
            k1, forward = rhs(s0, mu_s0, y)
            if j == 0:
                x_out[:, k] = forward
            k2, _ = rhs(s0 + 0.5 * h, mu_sm, y + (0.5 * h) * k1)
            k3, _ = rhs(s0 + 0.5 * h, mu_sm, y + (0.5 * h) * k2)
            k4, _ = rhs(s0 + h, mu_s1, y + h * k3)
            y = y + (h / 6.0) * (k1 + 2.0 * (k2 + k3) + k4)
        y_out[:, k + 1] = y
    x_out[:, n], _ = _flow_core(spec, mu[:, n], y, rspu, False)

    finite = np.isfinite(y_out) & np.isfinite(x_out)
    bad = ~finite.all(axis=1)
    first_bad_time = np.full(n_lanes, np.nan)
    if bad.any():
        first_idx = np.argmax(~finite, axis=1)
        first_bad_time[bad] = times[first_idx[bad]]

    # a-priori bounds: |dY/ds| <= sup|b| * exp(deriv_bound * max|mu|), hence
    # the per-cell Lipschitz bound and the global envelope on |Y|
    lane_c = (np.exp(spec.deriv_bound * np.max(np.abs(mu), axis=1))
              * drift.sup_bound)
    dt_cells = np.diff(times)
    lip_ok = (np.abs(np.diff(y_out, axis=1))
              <= lane_c[:, None] * dt_cells[None, :] * (1.0 + _SLACK) + 1e-12)
    horizon = times[-1] - times[0]
    env_ok = (np.max(np.abs(y_out), axis=1)
              <= abs(model.x0) + horizon * lane_c * (1.0 + _SLACK) + 1e-12)
    bad |= ~(lip_ok.all(axis=1) & env_ok)
    return y_out, x_out, bad, first_bad_time


def _check_solve_args(path: NoisePath, substeps: int):
    if not isinstance(path, NoisePath):
        raise ConfigurationError("path must be a NoisePath")
    if substeps < 1:
        raise ConfigurationError(f"substeps must be >= 1, got {substeps}")


def solve_scaled(model: ModelSpec, fm: FlowMap, path: NoisePath, epsilon: float,
                 substeps: int = 1) -> Trajectory:
    """Solve the system with fast drift time s/epsilon on the given path."""
    if not (np.isfinite(epsilon) and epsilon > 0.0):
        raise ConfigurationError(f"epsilon must be positive, got {epsilon}")
    _check_solve_args(path, substeps)
    y, x, bad, when = _solve_batch(model, fm, path.grid.times,
                                   path.values[None, :], epsilon, substeps)
    if bad[0]:
        raise NumericalError(
            "scaled solve failed (non-finite state or a-priori bound violation)"
            + ("" if np.isnan(when[0]) else f" near t={when[0]:.6g}")
        )
    return Trajectory(path.grid, y[0], x[0], float(epsilon), path.path_ref())


def solve_averaged(model: ModelSpec, fm: FlowMap, path: NoisePath,
                   substeps: int = 1) -> Trajectory:
    """Solve the averaged system (drift replaced by its long-run time mean)."""
    _check_solve_args(path, substeps)
    y, x, bad, when = _solve_batch(model, fm, path.grid.times,
                                   path.values[None, :], None, substeps)
    if bad[0]:
        raise NumericalError(
            "averaged solve failed (non-finite state or a-priori bound violation)"
            + ("" if np.isnan(when[0]) else f" near t={when[0]:.6g}")
        )
    return Trajectory(path.grid, y[0], x[0], None, path.path_ref())


def sup_distance(a: Trajectory, b: Trajectory) -> float:
    """Max over grid nodes of |a.x - b.x|; both must share one grid and path."""
    if not same_grid(a.grid, b.grid):
        raise ConfigurationError("sup_distance requires identical grids")
    if a.path_ref != b.path_ref:
        raise ConfigurationError(
            "sup_distance requires trajectories on the same noise realization"
        )
    return float(np.max(np.abs(a.x - b.x)))


def _em_batch(model: ModelSpec, times: np.ndarray, mu: np.ndarray, epsilon: float):
    """Euler-Maruyama for the equivalent drift-corrected equation (Wiener only)."""
    spec = model.diffusion
    drift = model.drift
    n = mu.shape[1] - 1
    x = np.full(mu.shape[0], float(model.x0))
    out = np.empty_like(mu)
    out[:, 0] = x
    for k in range(n):
        dt = times[k + 1] - times[k]
        dw = mu[:, k + 1] - mu[:, k]
        sig = np.asarray(spec.sigma(x), dtype=float)
        corrected = (drift.eval(x, times[k] / epsilon)
                     + 0.5 * sig * np.asarray(spec.sigma_prime(x), dtype=float))
        x = x + sig * dw + corrected * dt
        out[:, k + 1] = x
    return out


def ito_reference_solve(model: ModelSpec, path: NoisePath,
                        epsilon: float) -> Trajectory:
    """Euler-Maruyama solution with drift corrected by sigma*sigma'/2.

    Valid only for the Wiener driver, where the symmetric-integral equation
    is equivalent to the corrected Ito equation; used as a cross-validation
    oracle against solve_scaled, never inside the solution pipeline.
    """
    if path.driver.kind != "wiener":
        raise ConfigurationError(
            f"ito_reference_solve supports only the Wiener driver, "
            f"got {path.driver.kind!r}"
        )
    if not (np.isfinite(epsilon) and epsilon > 0.0):
        raise ConfigurationError(f"epsilon must be positive, got {epsilon}")
    x = _em_batch(model, path.grid.times, path.values[None, :], epsilon)[0]
    if not np.isfinite(x).all():
        raise NumericalError("Euler-Maruyama reference solve produced non-finite values")
    fm = FlowMap(model.diffusion)
    y = flow_inverse(fm, path.values, x)
    return Trajectory(path.grid, y, x, float(epsilon), path.path_ref())


def downsample_trajectory(traj: Trajectory, n_target: int) -> Trajectory:
    """Restrict a trajectory to a coarser dyadic grid (shared nodes only)."""
    n = traj.grid.n_steps
    if not (1 <= n_target <= n) or n % n_target != 0:
        raise ConfigurationError(f"cannot downsample grid {n} to {n_target}")
    stride = n // n_target
    coarse = NoiseGrid(traj.grid.horizon, n_target)
    return replace(traj, grid=coarse, y=traj.y[::stride].copy(),
                   x=traj.x[::stride].copy())


def write_trajectory_csv(traj: Trajectory, path: NoisePath, file) -> None:
    """Write `t,mu,y,x` rows at full precision with `# key=value` metadata."""
    if not same_grid(traj.grid, path.grid) or traj.path_ref != path.path_ref():
        raise ConfigurationError("trajectory was not produced on this path")
    close = False
    if isinstance(file, (str, bytes)) or hasattr(file, "__fspath__"):
        file = open(file, "w", encoding="utf-8", newline="\n")
        close = True
    try:
        file.write(f"# epsilon={'averaged' if traj.epsilon is None else format(traj.epsilon, '.17g')}\n")
        file.write(f"# driver={path.driver.kind}\n")
        hurst = "" if path.driver.hurst is None else f"{path.driver.hurst:.17g}"
        file.write(f"# hurst={hurst}\n")
        file.write(f"# seed={path.seed}\n")
        file.write("t,mu,y,x\n")
        for t, m, yv, xv in zip(traj.grid.times, path.values, traj.y, traj.x):
            file.write(f"{t:.17g},{m:.17g},{yv:.17g},{xv:.17g}\n")
    finally:
        if close:
            file.close()
