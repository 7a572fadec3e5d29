"""Flow transformation for a scalar diffusion coefficient.

`flow_forward` integrates dF/dr = sigma(F), F(0, x) = x with classical
4th-order Runge-Kutta steps; `flow_dx` integrates log dF/dx = integral of
sigma'(F) alongside, which keeps the derivative strictly positive by
construction.  The inverse in x is found by Newton iteration initialized at
the backward flow, so it only polishes integrator error.

All operations accept scalars or numpy arrays (broadcast together) and are
pure: a FlowMap is immutable and safe to share across concurrent solves.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import (
    BoundViolationError,
    ConfigurationError,
    InversionError,
    NumericalError,
)

_PROBES = np.linspace(-2.5, 2.5, 13)
_FD_STEP = 1e-6
_BOUND_SLACK = 1e-12


@dataclass(frozen=True, eq=False)
class DiffusionSpec:
    """A C^2 diffusion coefficient with declared derivative bound.

    `deriv_bound` must dominate |sigma'| and |sigma''| everywhere; it is
    verified at construction probes and enforced opportunistically during
    integration.  All three callables must accept numpy arrays.
    """

    sigma: Callable
    sigma_prime: Callable
    sigma_second: Callable
    deriv_bound: float

    def __post_init__(self):
        if not (np.isfinite(self.deriv_bound) and self.deriv_bound >= 0.0):
            raise ConfigurationError(
                f"deriv_bound must be a finite non-negative real, got {self.deriv_bound}"
            )
        d1 = np.asarray(self.sigma_prime(_PROBES), dtype=float)
        d2 = np.asarray(self.sigma_second(_PROBES), dtype=float)
        limit = self.deriv_bound * (1.0 + _BOUND_SLACK) + 1e-15
        if np.any(np.abs(d1) > limit) or np.any(np.abs(d2) > limit):
            raise BoundViolationError(
                "sigma derivatives exceed declared deriv_bound at probe points"
            )
        fd = (
            np.asarray(self.sigma(_PROBES + _FD_STEP), dtype=float)
            - np.asarray(self.sigma(_PROBES - _FD_STEP), dtype=float)
        ) / (2.0 * _FD_STEP)
        scale = np.maximum(1.0, np.abs(d1))
        if np.any(np.abs(fd - d1) > 1e-5 * scale):
            raise ConfigurationError(
                "sigma_prime disagrees with finite differences of sigma "
                "(relative mismatch above 1e-5 at probe points)"
            )


@dataclass(frozen=True, eq=False)
class FlowMap:
    """Evaluation settings for the flow of one DiffusionSpec."""

    spec: DiffusionSpec
    r_substeps_per_unit: int = 64
    newton_tol: float = 1e-10
    newton_max_iter: int = 50

    def __post_init__(self):
        if self.r_substeps_per_unit < 1:
            raise ConfigurationError("r_substeps_per_unit must be >= 1")
        if not (0.0 < self.newton_tol < 1.0):
            raise ConfigurationError("newton_tol must lie in (0, 1)")
        if self.newton_max_iter < 1:
            raise ConfigurationError("newton_max_iter must be >= 1")


def _flow_core(spec: DiffusionSpec, r: np.ndarray, x: np.ndarray,
               substeps_per_unit: int, need_log_dx: bool):
    """RK4 integration of the flow (and its log x-derivative) to parameter r.

    r must be finite; non-finite entries of x propagate lane-wise.  Returns
    (F, log_dx) where log_dx is None unless requested.  Each element takes
    exactly ceil(|r| * substeps_per_unit) substeps of size r/m, independent of
    how evaluation points are batched; finished elements continue with zero
    step, which leaves them bit-unchanged.
    """
    if not np.isfinite(r).all():
        raise ConfigurationError("flow parameter r must be finite")
    sigma = spec.sigma
    if spec.deriv_bound == 0.0:
        # |sigma'| <= 0 declared: sigma is constant, the flow is exactly linear
        F = x + np.asarray(sigma(x), dtype=float) * r
        return F, (np.zeros_like(F) if need_log_dx else None)
    dsigma = spec.sigma_prime
    m = np.ceil(np.abs(r) * substeps_per_unit).astype(np.int64)
    m_max = int(m.max()) if m.size else 0
    F = np.array(x, dtype=float, copy=True)
    A = np.zeros_like(F) if need_log_dx else None
    if m_max == 0:
        return F, A
    h_full = np.where(m > 0, r / np.maximum(m, 1), 0.0)
    for j in range(m_max):
        h = np.where(j < m, h_full, 0.0)
        half_h = 0.5 * h
        sixth_h = h / 6.0
        k1 = sigma(F)
        s2 = F + half_h * k1
        k2 = sigma(s2)
        s3 = F + half_h * k2
        k3 = sigma(s3)
        s4 = F + h * k3
        k4 = sigma(s4)
        if need_log_dx:
            A = A + sixth_h * (dsigma(F) + 2.0 * (dsigma(s2) + dsigma(s3))
                               + dsigma(s4))
        F = F + sixth_h * (k1 + 2.0 * (k2 + k3) + k4)
    if need_log_dx:
        # necessary consequence of |sigma'| <= deriv_bound along the flow
        envelope = spec.deriv_bound * np.abs(r) * (1.0 + _BOUND_SLACK) + 1e-14
        bad = np.isfinite(A) & (np.abs(A) > envelope)
        if np.any(bad):
            raise BoundViolationError(
                "sigma' exceeded deriv_bound along the flow "
                f"(|log dF/dx| above {spec.deriv_bound} * |r|)"
            )
    return F, A


def _prepare(r, x):
    scalar = np.ndim(r) == 0 and np.ndim(x) == 0
    r_arr, x_arr = np.broadcast_arrays(np.asarray(r, dtype=float),
                                       np.asarray(x, dtype=float))
    return scalar, r_arr, x_arr


def _finish(scalar: bool, out: np.ndarray, what: str):
    if not np.isfinite(out).all():
        raise NumericalError(f"non-finite value while evaluating {what}")
    return float(out[()]) if scalar else out


def flow_forward(fm: FlowMap, r, x):
    """F(r, x): the flow of dF/ds = sigma(F) at parameter r, started at x."""
    scalar, r_arr, x_arr = _prepare(r, x)
    F, _ = _flow_core(fm.spec, r_arr, x_arr, fm.r_substeps_per_unit, False)
    return _finish(scalar, F, "flow_forward")


def flow_dx(fm: FlowMap, r, x):
    """dF/dx at (r, x), computed as exp(integral of sigma'(F)); always > 0."""
    scalar, r_arr, x_arr = _prepare(r, x)
    _, A = _flow_core(fm.spec, r_arr, x_arr, fm.r_substeps_per_unit, True)
    return _finish(scalar, np.exp(A), "flow_dx")


def _newton_inverse(fm: FlowMap, r_arr: np.ndarray, z_arr: np.ndarray):
    """Solve F(r, x) = z for x; returns x with residual far below newton_tol."""
    spec, rspu = fm.spec, fm.r_substeps_per_unit
    x, _ = _flow_core(spec, -r_arr, z_arr, rspu, False)
    target = fm.newton_tol * 1e-3  # polish well below the contract tolerance
    resid = None
    for it in range(fm.newton_max_iter + 1):
        F, A = _flow_core(spec, r_arr, x, rspu, True)
        resid = np.abs(F - z_arr)
        done = resid <= target
        if np.all(done) or it == fm.newton_max_iter:
            break
        x = np.where(done, x, x - (F - z_arr) * np.exp(-A))
    bad = ~(resid <= fm.newton_tol)
    if np.any(bad):
        idx = np.unravel_index(np.argmax(bad), bad.shape)
        raise InversionError(
            f"flow inversion did not converge at r={r_arr[idx]:.6g}, "
            f"z={z_arr[idx]:.6g} (residual {resid[idx]:.3g} after "
            f"{fm.newton_max_iter} iterations)"
        )
    return x


def flow_inverse(fm: FlowMap, r, z):
    """H(r, z): the x-inverse of the flow, i.e. F(r, H(r, z)) = z."""
    scalar, r_arr, z_arr = _prepare(r, z)
    x = _newton_inverse(fm, r_arr, z_arr)
    return _finish(scalar, x, "flow_inverse")


def flow_inverse_dx(fm: FlowMap, r, z):
    """dH/dx at (r, z): reciprocal of flow_dx at the preimage; always > 0."""
    scalar, r_arr, z_arr = _prepare(r, z)
    x = _newton_inverse(fm, r_arr, z_arr)
    _, A = _flow_core(fm.spec, r_arr, x, fm.r_substeps_per_unit, True)
    return _finish(scalar, np.exp(-A), "flow_inverse_dx")
