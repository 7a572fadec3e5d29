"""Midpoint (symmetric) Riemann sums and the integral-form residual.

The symmetric sum of grid samples xi against eta is
sum_k (xi[k-1] + xi[k])/2 * (eta[k] - eta[k-1]); for Wiener integrators this
discretizes the Stratonovich integral.  `residual` measures how well a solver
trajectory satisfies the integral form of its equation; it is a verification
diagnostic only, the solver never iterates on it.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable

import numpy as np

from .averaging import averaged_drift
from .errors import ConfigurationError
from .noise import NoisePath, downsample, same_grid
from .solver import ModelSpec, Trajectory
from .flow import FlowMap


@dataclass(frozen=True)
class PartitionSum:
    """Value of a midpoint Riemann sum on a partition with n_points nodes."""

    n_points: int
    value: float

    def __post_init__(self):
        if self.n_points < 1:
            raise ConfigurationError("n_points must be >= 1")


def symmetric_integral(xi, eta) -> float:
    """Midpoint Riemann sum of xi against increments of eta (aligned grids)."""
    xi = np.asarray(xi, dtype=float)
    eta = np.asarray(eta, dtype=float)
    if xi.ndim != 1 or eta.ndim != 1 or xi.shape != eta.shape:
        raise ConfigurationError(
            f"xi and eta must be equal-length vectors, got {xi.shape} and {eta.shape}"
        )
    if xi.size < 2:
        raise ConfigurationError("need at least two grid points")
    return float(np.sum(0.5 * (xi[:-1] + xi[1:]) * np.diff(eta)))


def refinement_sums(f: Callable, path: NoisePath,
                    n_values: Iterable[int]) -> list[PartitionSum]:
    """Symmetric sums of f(mu) against mu on nested coarsenings of one path."""
    out = []
    for n in n_values:
        coarse = downsample(path, n)
        value = symmetric_integral(np.asarray(f(coarse.values), dtype=float),
                                   coarse.values)
        out.append(PartitionSum(n + 1, value))
    return out


def residual(model: ModelSpec, fm: FlowMap, traj: Trajectory,
             path: NoisePath) -> float:
    """Max over grid prefixes of the integral-form defect of a trajectory.

    For each node t the defect is
        X_t - X_0 - sum(sigma(X) o dmu)|_0^t - integral_0^t b(X_s, s/eps) ds,
    with the symmetric sum for the noise term, trapezoid quadrature for the
    ds term, and the averaged drift for averaged trajectories.
    """
    if not same_grid(traj.grid, path.grid) or traj.path_ref != path.path_ref():
        raise ConfigurationError("trajectory was not produced on this path")
    x = traj.x
    times = traj.grid.times
    sig = np.asarray(model.diffusion.sigma(x), dtype=float)
    sym_cum = np.concatenate(
        ([0.0], np.cumsum(0.5 * (sig[:-1] + sig[1:]) * np.diff(path.values)))
    )
    if traj.epsilon is None:
        bvals = np.asarray(averaged_drift(model.drift, x), dtype=float)
    else:
        bvals = model.drift.eval(x, times / traj.epsilon)
    ds_cum = np.concatenate(
        ([0.0], np.cumsum(0.5 * (bvals[:-1] + bvals[1:]) * np.diff(times)))
    )
    defect = x - x[0] - sym_cum - ds_cum
    return float(np.max(np.abs(defect)))
