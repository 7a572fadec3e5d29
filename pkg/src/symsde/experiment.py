"""Monte Carlo harness for sup-error decay and convergence-rate estimation.

Every replicate draws ONE noise realization at the finest grid and reuses it,
downsampled, for every epsilon: the comparison against the averaged system is
a statement per realization, so all epsilons must see the same one.  This is
why Wiener paths are bridge-generated (coarser grids are exact restrictions)
and fractional paths are generated once at the finest grid.

The scaled system for each epsilon is solved on the coarsest dyadic
restriction of the finest grid whose step still resolves the fast scale
(step <= eps/8), so large epsilons run cheaply while the sup distance is
taken over a dense node set.

Replicates are independent lanes of the vectorized solver; aggregation uses
numpy's pairwise reductions, so a fixed configuration reproduces bit-identical
results.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .averaging import averaged_drift_fn
from .errors import ConfigurationError, ExperimentError
from .flow import FlowMap
from .noise import WIENER, DriverSpec, NoiseGrid
from .solver import ModelSpec, _em_batch, _solve_batch

_QUANTILES = (0.5, 0.9, 0.99)


def _is_pow2(n: int) -> bool:
    return isinstance(n, (int, np.integer)) and n >= 1 and n & (n - 1) == 0


@dataclass(frozen=True, eq=False)
class ExperimentConfig:
    """Everything needed to reproduce one rate experiment."""

    model: ModelSpec
    driver: DriverSpec
    horizon: float
    finest_n: int
    epsilons: tuple
    replicates: int
    base_seed: int
    rate_exponent_hypothesis: float = 1.0 / 3.0
    substeps: int = 1
    min_n: int = 512
    flow: Optional[FlowMap] = None

    def __post_init__(self):
        if not (np.isfinite(self.horizon) and self.horizon > 0.0):
            raise ConfigurationError(f"horizon must be positive, got {self.horizon}")
        eps = tuple(float(e) for e in self.epsilons)
        if len(eps) < 1 or any(not (0.0 < e <= 1.0) for e in eps):
            raise ConfigurationError("epsilons must lie in (0, 1]")
        if any(a <= b for a, b in zip(eps, eps[1:])):
            raise ConfigurationError("epsilons must be strictly decreasing")
        object.__setattr__(self, "epsilons", eps)
        if not _is_pow2(self.finest_n) or not _is_pow2(self.min_n):
            raise ConfigurationError("finest_n and min_n must be powers of two")
        if self.min_n > self.finest_n:
            raise ConfigurationError("min_n cannot exceed finest_n")
        if self.horizon / self.finest_n > min(eps) / 8.0:
            raise ConfigurationError(
                "finest grid does not resolve min(epsilon): need step <= min(eps)/8"
            )
        if self.replicates < 1:
            raise ConfigurationError("replicates must be >= 1")
        if self.substeps < 1:
            raise ConfigurationError("substeps must be >= 1")
        if not (np.isfinite(self.rate_exponent_hypothesis)
                and self.rate_exponent_hypothesis > 0.0):
            raise ConfigurationError("rate_exponent_hypothesis must be positive")

    def flow_map(self) -> FlowMap:
        return self.flow if self.flow is not None else FlowMap(self.model.diffusion)

    def grid_for(self, epsilon: float) -> int:
        """Coarsest dyadic grid whose step resolves epsilon (step <= eps/8)."""
        need = int(2 ** math.ceil(math.log2(max(8.0 * self.horizon / epsilon, 1.0))))
        return min(max(need, self.min_n), self.finest_n)


@dataclass(frozen=True)
class EpsilonStats:
    epsilon: float
    n_grid: int
    mean: float
    q50: float
    q90: float
    q99: float
    norm_q50: float
    norm_q90: float
    norm_q99: float


@dataclass(frozen=True, eq=False)
class RateFit:
    """Per-epsilon sup-error statistics and the fitted log-log slope."""

    per_eps: tuple
    slope: float
    slope_stderr: float
    hypothesis: float
    sup_errors: np.ndarray      # shape (n_eps, surviving replicates)
    replicate_ids: np.ndarray   # original replicate indices of the columns
    failed_replicates: int

    def as_dict(self) -> dict:
        return {
            "slope": self.slope,
            "slope_stderr": self.slope_stderr,
            "hypothesis": self.hypothesis,
            "failed_replicates": int(self.failed_replicates),
            "per_epsilon": [
                {
                    "epsilon": s.epsilon,
                    "n_grid": s.n_grid,
                    "mean_sup_error": s.mean,
                    "q50": s.q50,
                    "q90": s.q90,
                    "q99": s.q99,
                    "norm_q50": s.norm_q50,
                    "norm_q90": s.norm_q90,
                    "norm_q99": s.norm_q99,
                }
                for s in self.per_eps
            ],
        }


def fit_rate(pairs) -> tuple:
    """Least squares of log(error) on log(epsilon): (slope, stderr)."""
    arr = np.asarray(pairs, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 2 or arr.shape[0] < 3:
        raise ConfigurationError("fit_rate needs >= 3 (epsilon, error) pairs")
    if not np.isfinite(arr).all() or np.any(arr <= 0.0):
        raise ConfigurationError("fit_rate entries must be positive and finite")
    lx = np.log(arr[:, 0])
    ly = np.log(arr[:, 1])
    n = len(lx)
    xc = lx - lx.mean()
    sxx = float(np.sum(xc * xc))
    slope = float(np.sum(xc * ly) / sxx)
    fitted = ly.mean() + slope * xc
    ssr = float(np.sum((ly - fitted) ** 2))
    stderr = math.sqrt(ssr / (n - 2) / sxx)
    return slope, stderr


def _solve_lanes(model, fm, times, mu, epsilon, substeps, jobs):
    """Dispatch _solve_batch over replicate chunks (jobs concurrent workers)."""
    n_lanes = mu.shape[0]
    if jobs <= 1 or n_lanes == 1:
        return _solve_batch(model, fm, times, mu, epsilon, substeps)
    bounds = np.linspace(0, n_lanes, min(jobs, n_lanes) + 1).astype(int)
    chunks = [(int(lo), int(hi)) for lo, hi in zip(bounds[:-1], bounds[1:]) if hi > lo]
    with ThreadPoolExecutor(max_workers=len(chunks)) as pool:
        parts = list(pool.map(
            lambda span: _solve_batch(model, fm, times, mu[span[0]:span[1]],
                                      epsilon, substeps),
            chunks,
        ))
    y = np.concatenate([p[0] for p in parts])
    x = np.concatenate([p[1] for p in parts])
    bad = np.concatenate([p[2] for p in parts])
    when = np.concatenate([p[3] for p in parts])
    return y, x, bad, when


def run_averaging_experiment(cfg: ExperimentConfig, jobs: int = 1) -> RateFit:
    """Measure sup |X^eps - X_averaged| over the epsilon ladder by Monte Carlo.

    Per replicate r: one path with seed base_seed + r at the finest grid, one
    averaged solve, then one scaled solve per epsilon on the same (downsampled)
    path.  A failed solve aborts the whole replicate; the run fails when more
    than 1% of replicates abort.
    """
    model, fm = cfg.model, cfg.flow_map()
    averaged_drift_fn(model.drift)  # fail fast when no averaged form exists
    grid = NoiseGrid(cfg.horizon, cfg.finest_n)
    mu = np.stack([
        cfg.driver.make(grid, cfg.base_seed + r).values
        for r in range(cfg.replicates)
    ])
    _, x_avg, bad, _ = _solve_lanes(model, fm, grid.times, mu, None,
                                    cfg.substeps, jobs)
    sups = np.empty((len(cfg.epsilons), cfg.replicates))
    for i, eps in enumerate(cfg.epsilons):
        stride = cfg.finest_n // cfg.grid_for(eps)
        _, x_eps, bad_eps, _ = _solve_lanes(
            model, fm, grid.times[::stride], mu[:, ::stride], eps,
            cfg.substeps, jobs,
        )
        bad |= bad_eps
        sups[i] = np.max(np.abs(x_eps - x_avg[:, ::stride]), axis=1)
    ok = ~bad & np.isfinite(sups).all(axis=0)
    failed = int(cfg.replicates - np.count_nonzero(ok))
    if failed > 0.01 * cfg.replicates:
        raise ExperimentError(
            f"{failed} of {cfg.replicates} replicates failed (limit is 1%)"
        )
    sups = sups[:, ok]
    hyp = cfg.rate_exponent_hypothesis
    per_eps = []
    means = []
    for i, eps in enumerate(cfg.epsilons):
        row = sups[i]
        q = np.quantile(row, _QUANTILES)
        nq = np.quantile(row / eps**hyp, _QUANTILES)
        means.append(float(np.mean(row)))
        per_eps.append(EpsilonStats(eps, cfg.grid_for(eps), means[-1],
                                    float(q[0]), float(q[1]), float(q[2]),
                                    float(nq[0]), float(nq[1]), float(nq[2])))
    slope, stderr = fit_rate(list(zip(cfg.epsilons, means)))
    return RateFit(tuple(per_eps), slope, stderr, hyp, sups,
                   np.flatnonzero(ok), failed)


@dataclass(frozen=True)
class BoundednessReport:
    """Non-growth verdict for the 0.99-quantile of sup-error / eps^hypothesis."""

    passed: bool
    hypothesis: float
    quantiles: tuple          # (epsilon, norm_q99) pairs
    max_over_median: float
    growth_limit: float

    def as_dict(self) -> dict:
        return {
            "verdict": "PASS" if self.passed else "FAIL",
            "hypothesis": self.hypothesis,
            "norm_q99": [[e, q] for e, q in self.quantiles],
            "max_over_median": self.max_over_median,
            "growth_limit": self.growth_limit,
        }


def boundedness_diagnostic(fit: RateFit, growth_limit: float = 0.5) -> BoundednessReport:
    """Non-growth check for the normalized 0.99-quantiles toward eps -> 0.

    Desk-scale surrogate for tightness of sup-error / eps^hypothesis: if the
    hypothesis exponent is not exceeded, the quantile sequence stays flat or
    shrinks along the descending ladder.  Growth is measured where it would
    signal unboundedness, at the small-epsilon half: PASS when no quantile
    there exceeds the ladder median by more than growth_limit (a sequence
    that merely decays from large epsilons over-performs and passes).
    """
    if len(fit.per_eps) < 4:
        raise ConfigurationError("boundedness_diagnostic needs >= 4 epsilon values")
    q = np.array([s.norm_q99 for s in fit.per_eps])  # descending-epsilon order
    med = float(np.median(q))
    tail = float(np.max(q[len(q) // 2:]))
    passed = tail <= med * (1.0 + growth_limit) + 1e-12
    ratio = tail / med if med > 0 else (1.0 if tail <= 0 else np.inf)
    return BoundednessReport(passed, fit.hypothesis,
                             tuple((s.epsilon, s.norm_q99) for s in fit.per_eps),
                             ratio, growth_limit)


@dataclass(frozen=True)
class CrosscheckReport:
    """Grid-refinement agreement between the flow solver and the EM oracle."""

    epsilon: float
    n_values: tuple
    mean_sup_diffs: tuple
    failed_replicates: int
    passed: bool

    def as_dict(self) -> dict:
        return {
            "verdict": "PASS" if self.passed else "FAIL",
            "epsilon": self.epsilon,
            "n_values": list(self.n_values),
            "mean_sup_diffs": list(self.mean_sup_diffs),
            "failed_replicates": int(self.failed_replicates),
        }


def ito_crosscheck_experiment(cfg: ExperimentConfig,
                              n_values: Sequence[int] = (512, 1024, 2048, 4096),
                              epsilon: Optional[float] = None,
                              jobs: int = 1) -> CrosscheckReport:
    """Compare solve_scaled with the corrected Euler-Maruyama oracle.

    On nested Wiener paths, the mean sup difference must decrease at every
    grid doubling; both schemes converge to the same solution.
    """
    if cfg.driver.kind != WIENER:
        raise ConfigurationError("ito_crosscheck_experiment requires the Wiener driver")
    ns = tuple(int(n) for n in n_values)
    if len(ns) < 2 or any(not _is_pow2(n) for n in ns) or any(
            b != 2 * a for a, b in zip(ns, ns[1:])):
        raise ConfigurationError("n_values must be successive doublings of powers of two")
    eps = cfg.epsilons[0] if epsilon is None else float(epsilon)
    model, fm = cfg.model, cfg.flow_map()
    grid = NoiseGrid(cfg.horizon, ns[-1])
    mu = np.stack([
        cfg.driver.make(grid, cfg.base_seed + r).values
        for r in range(cfg.replicates)
    ])
    diffs = np.empty((len(ns), cfg.replicates))
    bad = np.zeros(cfg.replicates, dtype=bool)
    for i, n in enumerate(ns):
        stride = ns[-1] // n
        times = grid.times[::stride]
        mu_n = mu[:, ::stride]
        _, x_flow, bad_n, _ = _solve_lanes(model, fm, times, mu_n, eps,
                                           cfg.substeps, jobs)
        x_em = _em_batch(model, times, mu_n, eps)
        bad |= bad_n | ~np.isfinite(x_em).all(axis=1)
        diffs[i] = np.max(np.abs(x_flow - x_em), axis=1)
    ok = ~bad
    failed = int(cfg.replicates - np.count_nonzero(ok))
    if failed > 0.01 * cfg.replicates:
        raise ExperimentError(
            f"{failed} of {cfg.replicates} replicates failed (limit is 1%)"
        )
    means = tuple(float(np.mean(diffs[i, ok])) for i in range(len(ns)))
    passed = all(b < a for a, b in zip(means, means[1:]))
    return CrosscheckReport(eps, ns, means, failed, passed)


def write_rates_csv(fit: RateFit, file) -> None:
    """Per-replicate sup errors: epsilon, replicate, sup_error, normalized_error."""
    close = False
    if isinstance(file, (str, bytes)) or hasattr(file, "__fspath__"):
        file = open(file, "w", encoding="utf-8", newline="\n")
        close = True
    try:
        file.write("epsilon,replicate,sup_error,normalized_error\n")
        for i, stats in enumerate(fit.per_eps):
            scale = stats.epsilon ** fit.hypothesis
            for j, rep in enumerate(fit.replicate_ids):
                err = fit.sup_errors[i, j]
                file.write(f"{stats.epsilon:.17g},{int(rep)},{err:.17g},"
                           f"{err / scale:.17g}\n")
    finally:
        if close:
            file.close()


def build_summary(fit: RateFit, a4_report=None, boundedness=None, crosscheck=None,
                  config_echo: Optional[dict] = None,
                  expected_rate: Optional[float] = None) -> dict:
    """Assemble the structured run summary (stable key order when dumped sorted)."""
    summary = {"ratefit": fit.as_dict()}
    summary["expected_rate"] = expected_rate
    summary["a4"] = a4_report.as_dict() if a4_report is not None else None
    summary["boundedness"] = boundedness.as_dict() if boundedness is not None else None
    summary["crosscheck"] = crosscheck.as_dict() if crosscheck is not None else None
    summary["config"] = config_echo
    return summary


def write_rates_svg(fit: RateFit, file) -> None:
    """Log-log scatter of per-replicate sup errors with the fitted line."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6.0, 4.5))
    for i, stats in enumerate(fit.per_eps):
        eps = np.full(fit.sup_errors.shape[1], stats.epsilon)
        ax.plot(eps, fit.sup_errors[i], ".", color="#888888", alpha=0.4,
                markersize=3)
    eps_arr = np.array([s.epsilon for s in fit.per_eps])
    means = np.array([s.mean for s in fit.per_eps])
    ax.plot(eps_arr, means, "o-", color="#d62728", label="mean sup error")
    anchor = means[0] / eps_arr[0] ** fit.slope
    ax.plot(eps_arr, anchor * eps_arr ** fit.slope, "--", color="#1f77b4",
            label=f"slope {fit.slope:.3f}")
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("epsilon")
    ax.set_ylabel("sup error")
    ax.legend()
    fig.tight_layout()
    fig.savefig(file, format="svg")
    plt.close(fig)
