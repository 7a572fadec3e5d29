"""Averaged drift and boundedness diagnostics for time-oscillating drifts.

The averaged drift is the long-run time mean of b(y, .); it is evaluated
analytically when supplied, or by composite Simpson quadrature over one
period.  Aperiodic drifts without an analytic average are refused: a wrong
average would silently invalidate every downstream rate measurement.

`check_a4` probes whether the centered integral
G(y, r) = integral_0^r (b(y, s) - b_bar(y)) ds stays bounded, which is the
quantitative hypothesis behind the measured convergence rates.  Its verdict
is advisory metadata, not a proof.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import BoundViolationError, ConfigurationError, UnsupportedDriftError

_BOUND_SLACK = 1e-12
_MEAN_PANELS = 2**10        # Simpson panels per period for the averaged drift
_G_PANELS_PER_PERIOD = 2**10
_APERIODIC_WIDTH = 1.0 / 256.0
_MAX_PANELS = 2**22


@dataclass(frozen=True, eq=False)
class DriftSpec:
    """A bounded drift b(x, s), locally Lipschitz in x, with declared bounds.

    `lipschitz_const` maps c to a Lipschitz constant valid on |x|, |y| <= c.
    `b_bar` is the analytic averaged drift when known; otherwise `period`
    enables the numeric route.  All callables must broadcast over arrays.
    """

    b: Callable
    lipschitz_const: Callable
    sup_bound: float
    period: Optional[float] = None
    b_bar: Optional[Callable] = None

    def __post_init__(self):
        if not (np.isfinite(self.sup_bound) and self.sup_bound >= 0.0):
            raise ConfigurationError(
                f"sup_bound must be a finite non-negative real, got {self.sup_bound}"
            )
        if self.period is not None:
            if not (np.isfinite(self.period) and self.period > 0.0):
                raise ConfigurationError(f"period must be positive, got {self.period}")
            xs = np.linspace(-2.0, 2.0, 5)[:, None]
            ss = np.linspace(0.0, 3.0 * self.period, 7)[None, :]
            gap = np.abs(np.asarray(self.b(xs, ss + self.period), dtype=float)
                         - np.asarray(self.b(xs, ss), dtype=float))
            if np.max(gap) > 1e-12:
                raise ConfigurationError(
                    "drift is not periodic with the declared period at probe points"
                )

    def eval(self, x, s):
        """Evaluate b with the declared sup bound enforced."""
        val = np.asarray(self.b(x, s), dtype=float)
        limit = self.sup_bound * (1.0 + _BOUND_SLACK) + 1e-15
        if np.any(np.isfinite(val) & (np.abs(val) > limit)):
            raise BoundViolationError(
                f"|b| exceeded declared sup_bound {self.sup_bound} at an evaluated point"
            )
        return val


def _simpson_nodes_weights(length: float, n_panels: int):
    # composite Simpson over [0, length]; n_panels must be even
    h = length / n_panels
    nodes = np.linspace(0.0, length, n_panels + 1)
    weights = np.full(n_panels + 1, 2.0)
    weights[1::2] = 4.0
    weights[0] = weights[-1] = 1.0
    return nodes, weights * (h / 3.0)


def averaged_drift(d: DriftSpec, y):
    """The long-run time average of b(y, .).

    Returns b_bar(y) when analytic, else the period mean by composite Simpson
    with 2^10 panels.  Raises UnsupportedDriftError when neither route exists.
    """
    scalar = np.ndim(y) == 0
    y_arr = np.asarray(y, dtype=float)
    if d.b_bar is not None:
        val = np.asarray(d.b_bar(y_arr), dtype=float)
        limit = d.sup_bound * (1.0 + _BOUND_SLACK) + 1e-15
        if np.any(np.isfinite(val) & (np.abs(val) > limit)):
            raise BoundViolationError(
                "averaged drift exceeded the declared sup_bound"
            )
    elif d.period is not None:
        nodes, weights = _simpson_nodes_weights(d.period, _MEAN_PANELS)
        val = d.eval(y_arr[..., None], nodes) @ weights / d.period
    else:
        raise UnsupportedDriftError(
            "drift has neither an analytic average (b_bar) nor a period; "
            "the long-run mean cannot be certified numerically, so the "
            "averaged system and the A4 boundedness diagnostic are unavailable"
        )
    return float(val[()]) if scalar else val


def averaged_drift_fn(d: DriftSpec) -> Callable:
    """The averaged drift as a reusable vectorized function of y."""
    if d.b_bar is None and d.period is None:
        raise UnsupportedDriftError(
            "drift has neither an analytic average (b_bar) nor a period "
            "(required for the averaged system and the A4 diagnostic)"
        )
    return lambda y: averaged_drift(d, y)


def g_function(d: DriftSpec, y, r: float):
    """G(y, r) = integral over [0, r] of b(y, s) - b_bar(y), by Simpson."""
    if not (np.isfinite(r) and r >= 0.0):
        raise ConfigurationError(f"r must be a finite non-negative time, got {r}")
    scalar = np.ndim(y) == 0
    y_arr = np.asarray(y, dtype=float)
    bbar = averaged_drift(d, y_arr)
    if r == 0.0:
        out = np.zeros_like(y_arr)
        return float(out[()]) if scalar else out
    width = (d.period / _G_PANELS_PER_PERIOD if d.period is not None
             else _APERIODIC_WIDTH)
    n_panels = int(min(max(np.ceil(r / width), 2), _MAX_PANELS))
    n_panels += n_panels % 2
    nodes, weights = _simpson_nodes_weights(r, n_panels)
    out = (d.eval(y_arr[..., None], nodes) - np.asarray(bbar)[..., None]) @ weights
    return float(out[()]) if scalar else out


@dataclass(frozen=True)
class A4Report:
    """Verdict of the centered-integral boundedness scan."""

    passed: bool
    sup_abs_g: float
    last_decade_growth: float
    threshold: float
    r_max: float
    periodic: bool
    table: tuple  # (r, running sup |G|) pairs

    def as_dict(self) -> dict:
        return {
            "verdict": "PASS" if self.passed else "FAIL",
            "sup_abs_g": self.sup_abs_g,
            "last_decade_growth": self.last_decade_growth,
            "threshold": self.threshold,
            "r_max": self.r_max,
            "periodic": self.periodic,
            "running_sup": [[r, s] for r, s in self.table],
        }

    def as_text(self) -> str:
        lines = [
            f"a4_check: {'PASS' if self.passed else 'FAIL'}",
            f"periodic: {'yes' if self.periodic else 'no'}",
            f"sup_abs_g: {self.sup_abs_g:.6g}",
            f"last_decade_growth: {self.last_decade_growth:.6g}",
            f"threshold: {self.threshold:.6g}",
            f"r_max: {self.r_max:.6g}",
        ]
        for r, s in self.table:
            lines.append(f"running_sup[r={r:.6g}]: {s:.6g}")
        return "\n".join(lines)


def _running_sup_abs_g(d: DriftSpec, y_probes: np.ndarray, r_end: float):
    """|G| on a fine uniform grid up to r_end via cumulative trapezoid."""
    width = (d.period / 2**8 if d.period is not None else _APERIODIC_WIDTH)
    n = int(min(max(np.ceil(r_end / width), 64), _MAX_PANELS))
    s = np.linspace(0.0, r_end, n + 1)
    bbar = np.asarray(averaged_drift(d, y_probes))
    centered = d.eval(y_probes[:, None], s[None, :]) - bbar[:, None]
    h = r_end / n
    increments = 0.5 * h * (centered[:, 1:] + centered[:, :-1])
    g = np.concatenate([np.zeros((len(y_probes), 1)), np.cumsum(increments, axis=1)],
                       axis=1)
    return s, np.max(np.abs(g), axis=0)


def check_a4(d: DriftSpec, y_probes, r_max: float, threshold: float = 0.01) -> A4Report:
    """Scan sup over probes of |G(y, r)| up to r_max and test for stabilization.

    PASS when the running sup grows by less than `threshold` (relative) over
    the last decade of r; drifts with a declared exact period always PASS,
    with the sup taken over one period.  Heuristic: the verdict is advisory
    metadata for experiment reports, not a proof of boundedness.
    """
    if not (np.isfinite(r_max) and r_max > 0.0):
        raise ConfigurationError(f"r_max must be positive, got {r_max}")
    y_arr = np.atleast_1d(np.asarray(y_probes, dtype=float))
    if d.period is not None:
        # G is periodic in r with the drift's period, so one period is global
        s, sup_g = _running_sup_abs_g(d, y_arr, d.period)
        sup = float(np.max(sup_g))
        table = ((d.period, sup),)
        return A4Report(True, sup, 1.0, threshold, r_max, True, table)
    s, sup_g = _running_sup_abs_g(d, y_arr, r_max)
    running = np.maximum.accumulate(sup_g)
    sup_end = float(running[-1])
    table = []
    for r in (r_max / 1000.0, r_max / 100.0, r_max / 10.0, r_max):
        table.append((r, float(running[np.searchsorted(s, r, side="right") - 1])))
    sup_pre = table[-2][1]
    passed = sup_end <= sup_pre * (1.0 + threshold) + 1e-12
    if sup_pre > 1e-300:
        growth = sup_end / sup_pre
    else:
        growth = 1.0 if sup_end <= 1e-300 else np.inf
    return A4Report(passed, sup_end, growth, threshold, r_max, False, tuple(table))
