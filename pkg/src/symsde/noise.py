"""Grid-sampled realizations of continuous-path stochastic measures.

Every generator is a pure function of (parameters, seed): identical inputs
give bit-identical paths.  Wiener paths are built by recursive midpoint
(bridge) refinement so that the path on a grid of n steps coincides exactly,
at shared times, with the path on 2n steps generated from the same seed.
Fractional and sub-fractional paths are exact-in-distribution Gaussian draws
via Cholesky factorization of the grid covariance; they do not nest across
grids, so experiments generate once at the finest grid and downsample.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Optional

import numpy as np

from .errors import ConfigurationError

_SEED_MASK = (1 << 64) - 1

# stream tags keeping the per-driver RNG streams disjoint for a shared seed;
# wiener uses tags 0..63 for its bridge levels
_FBM_STREAM = 101
_SUBFBM_STREAM = 102

WIENER = "wiener"
FBM = "fbm"
SUBFBM = "subfbm"
DETERMINISTIC = "deterministic"
COMPOSITE = "composite"

_KINDS = (WIENER, FBM, SUBFBM, DETERMINISTIC, COMPOSITE)

# paths of a standard Wiener process are Hölder for every exponent < 1/2
WIENER_HOLDER_GAMMA = 0.49


@dataclass(frozen=True)
class DriverSpec:
    """Identifies a noise driver: its kind and, for (sub-)fBm, the Hurst index."""

    kind: str
    hurst: Optional[float] = None

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ConfigurationError(f"unknown driver kind {self.kind!r}")
        if self.kind in (FBM, SUBFBM):
            _check_hurst(self.hurst)
        elif self.hurst is not None:
            raise ConfigurationError(f"driver {self.kind!r} takes no Hurst index")

    def label(self) -> str:
        if self.hurst is None:
            return self.kind
        return f"{self.kind}(H={self.hurst:g})"

    def holder_gamma(self) -> Optional[float]:
        """Declared Hölder exponent of this driver's paths (None if unknown)."""
        if self.kind == WIENER:
            return WIENER_HOLDER_GAMMA
        if self.kind in (FBM, SUBFBM):
            return self.hurst - 0.01
        if self.kind == DETERMINISTIC:
            return 1.0
        return None

    def make(self, grid: "NoiseGrid", seed: int) -> "NoisePath":
        """Generate a path of this driver on `grid` from `seed`."""
        if self.kind == WIENER:
            return generate_wiener(grid, seed)
        if self.kind == FBM:
            return generate_fbm(grid, self.hurst, seed)
        if self.kind == SUBFBM:
            return generate_subfbm(grid, self.hurst, seed)
        if self.kind == DETERMINISTIC:
            return generate_deterministic(grid, seed)
        raise ConfigurationError(
            "composite paths need a kernel; call generate_composite directly"
        )


@dataclass(frozen=True, eq=False)
class NoiseGrid:
    """Uniform grid t_k = k*T/n_steps on [0, T]; n_steps is a power of two."""

    horizon: float
    n_steps: int
    times: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if not (np.isfinite(self.horizon) and self.horizon > 0.0):
            raise ConfigurationError(f"horizon must be positive, got {self.horizon}")
        n = self.n_steps
        if not (isinstance(n, (int, np.integer)) and n >= 1 and n & (n - 1) == 0):
            raise ConfigurationError(f"n_steps must be a power of two >= 1, got {n}")
        times = np.linspace(0.0, self.horizon, n + 1)
        times.setflags(write=False)
        object.__setattr__(self, "times", times)

    @property
    def dt(self) -> float:
        return self.horizon / self.n_steps


def same_grid(a: NoiseGrid, b: NoiseGrid) -> bool:
    return a.n_steps == b.n_steps and a.horizon == b.horizon


@dataclass(frozen=True, eq=False)
class NoisePath:
    """One realization of mu_t = mu((0, t]) sampled at the grid times.

    `holder_gamma` is the declared Hölder exponent of the paths (None when
    unknown); it is used downstream only to tag the expected convergence rate
    in reports.
    """

    grid: NoiseGrid
    values: np.ndarray
    driver: DriverSpec
    seed: int
    holder_gamma: Optional[float] = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.shape != (self.grid.n_steps + 1,):
            raise ConfigurationError(
                f"values shape {values.shape} does not match grid "
                f"({self.grid.n_steps + 1} points)"
            )
        if values[0] != 0.0:
            raise ConfigurationError("values[0] must be 0 (mu((0,0]) = 0)")
        if not np.isfinite(values).all():
            raise ConfigurationError("path values must be finite")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    def path_ref(self) -> tuple:
        return (self.driver, self.seed)


def same_path_ref(a: NoisePath, b: NoisePath) -> bool:
    return a.path_ref() == b.path_ref() and same_grid(a.grid, b.grid)


def _check_hurst(hurst) -> None:
    if hurst is None or not (0.5 < hurst < 1.0):
        raise ConfigurationError(f"hurst must lie in (1/2, 1), got {hurst}")


def _stream_rng(seed: int, tag: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence((seed & _SEED_MASK, tag)))


def generate_wiener(grid: NoiseGrid, seed: int) -> NoisePath:
    """Sample a standard Wiener path by recursive midpoint (bridge) refinement.

    Level 0 draws W_T; level L refines all midpoints of the level-(L-1) grid.
    Each level consumes its own seed-keyed stream, so coarser grids are exact
    restrictions of finer ones for the same seed.
    """
    n, T = grid.n_steps, grid.horizon
    rng = _stream_rng(seed, 0)
    w = np.array([0.0, np.sqrt(T) * rng.standard_normal()])
    length = T  # current interval length
    level = 1
    while w.size - 1 < n:
        z = _stream_rng(seed, level).standard_normal(w.size - 1)
        mids = 0.5 * (w[:-1] + w[1:]) + 0.5 * np.sqrt(length) * z
        merged = np.empty(2 * w.size - 1)
        merged[::2] = w
        merged[1::2] = mids
        w = merged
        length *= 0.5
        level += 1
    driver = DriverSpec(WIENER)
    return NoisePath(grid, w, driver, seed, driver.holder_gamma())


def fbm_covariance(times: np.ndarray, hurst: float) -> np.ndarray:
    """Covariance matrix 0.5*(t^2H + s^2H - |t-s|^2H) on the given times."""
    t = np.asarray(times, dtype=float)
    two_h = 2.0 * hurst
    s, u = np.meshgrid(t, t, indexing="ij")
    return 0.5 * (s**two_h + u**two_h - np.abs(s - u) ** two_h)


def subfbm_covariance(times: np.ndarray, hurst: float) -> np.ndarray:
    """Covariance s^2H + t^2H - 0.5*((s+t)^2H + |t-s|^2H) of sub-fractional BM."""
    t = np.asarray(times, dtype=float)
    two_h = 2.0 * hurst
    s, u = np.meshgrid(t, t, indexing="ij")
    return s**two_h + u**two_h - 0.5 * ((s + u) ** two_h + np.abs(s - u) ** two_h)


@lru_cache(maxsize=4)
def _cholesky_factor(kind: str, n_steps: int, horizon: float, hurst: float) -> np.ndarray:
    # factor of the law of values[1:] (t = 0 is pinned at zero)
    times = np.linspace(0.0, horizon, n_steps + 1)[1:]
    if kind == FBM:
        cov = fbm_covariance(times, hurst)
    else:
        cov = subfbm_covariance(times, hurst)
    factor = np.linalg.cholesky(cov)
    factor.setflags(write=False)
    return factor


def _gaussian_path(kind: str, grid: NoiseGrid, hurst: float, seed: int,
                   stream: int) -> NoisePath:
    _check_hurst(hurst)
    factor = _cholesky_factor(kind, grid.n_steps, grid.horizon, hurst)
    z = _stream_rng(seed, stream).standard_normal(grid.n_steps)
    values = np.concatenate(([0.0], factor @ z))
    driver = DriverSpec(kind, hurst)
    return NoisePath(grid, values, driver, seed, driver.holder_gamma())


def generate_fbm(grid: NoiseGrid, hurst: float, seed: int) -> NoisePath:
    """Sample fractional Brownian motion with Hurst index in (1/2, 1).

    Exact in distribution: Cholesky factor of the grid covariance (cached per
    grid and H), applied to a seed-keyed standard normal vector.  Paths are
    Hölder for every exponent below H; holder_gamma records H - 0.01.
    """
    return _gaussian_path(FBM, grid, hurst, seed, _FBM_STREAM)


def generate_subfbm(grid: NoiseGrid, hurst: float, seed: int) -> NoisePath:
    """Sample sub-fractional Brownian motion, Hurst index in (1/2, 1)."""
    return _gaussian_path(SUBFBM, grid, hurst, seed, _SUBFBM_STREAM)


def generate_deterministic(grid: NoiseGrid, seed: int = 0) -> NoisePath:
    """The deterministic driver mu_t = t (Lipschitz, so holder_gamma = 1)."""
    return NoisePath(grid, grid.times.copy(), DriverSpec(DETERMINISTIC), seed, 1.0)


def generate_composite(
    grid: NoiseGrid,
    kernel: Callable[[np.ndarray, np.ndarray], np.ndarray],
    base_seed: int,
    base_points: int,
    support: tuple[float, float] = (0.0, 1.0),
) -> NoisePath:
    """Discrete surrogate for mu_t = integral of f(t, x) against a base measure.

    Realizes mu_t = sum_j f(t, x_j) * eta_j where the eta_j are Wiener
    increments over a partition of `support` into `base_points` cells and the
    x_j are the cell midpoints.  The base path is bridge-generated, so
    doubling base_points refines the same realization and the outputs
    converge.  `kernel` must broadcast over numpy arrays and satisfy
    f(0, x) = 0.
    """
    a, b = support
    if not (np.isfinite(a) and np.isfinite(b) and b > a):
        raise ConfigurationError(f"invalid support interval {support}")
    base_grid = NoiseGrid(b - a, base_points)  # validates power of two
    eta = np.diff(generate_wiener(base_grid, base_seed).values)
    xs = a + (np.arange(base_points) + 0.5) * (b - a) / base_points
    f0 = np.asarray(kernel(np.float64(0.0), xs), dtype=float)
    if np.max(np.abs(f0)) > 1e-12:
        raise ConfigurationError("kernel must satisfy f(0, x) = 0 at sampled points")
    values = np.asarray(kernel(grid.times[:, None], xs[None, :]), dtype=float) @ eta
    values[0] = 0.0
    return NoisePath(grid, values, DriverSpec(COMPOSITE), base_seed, 1.0)


def downsample(path: NoisePath, n_target: int) -> NoisePath:
    """Restrict a path to a coarser dyadic grid (exact values at shared times)."""
    n = path.grid.n_steps
    if not (1 <= n_target <= n):
        raise ConfigurationError(f"n_target {n_target} out of range for grid {n}")
    coarse = NoiseGrid(path.grid.horizon, n_target)  # validates power of two
    stride = n // n_target
    if not np.array_equal(path.grid.times[::stride], coarse.times):
        raise ConfigurationError("downsampled times do not align")
    return NoisePath(coarse, path.values[::stride].copy(), path.driver,
                     path.seed, path.holder_gamma)


def write_path_csv(path: NoisePath, file) -> None:
    """Write `t,mu` rows at full precision, with `# key=value` metadata lines."""
    close = False
    if isinstance(file, (str, bytes)) or hasattr(file, "__fspath__"):
        file = open(file, "w", encoding="utf-8", newline="\n")
        close = True
    try:
        meta = {
            "driver": path.driver.kind,
            "hurst": "" if path.driver.hurst is None else f"{path.driver.hurst:.17g}",
            "seed": str(path.seed),
            "n_steps": str(path.grid.n_steps),
            "T": f"{path.grid.horizon:.17g}",
            "holder_gamma": "" if path.holder_gamma is None
            else f"{path.holder_gamma:.17g}",
        }
        for key, value in meta.items():
            file.write(f"# {key}={value}\n")
        file.write("t,mu\n")
        for t, v in zip(path.grid.times, path.values):
            file.write(f"{t:.17g},{v:.17g}\n")
    finally:
        if close:
            file.close()


def read_path_csv(file) -> NoisePath:
    """Inverse of write_path_csv."""
    close = False
    if isinstance(file, (str, bytes)) or hasattr(file, "__fspath__"):
        file = open(file, "r", encoding="utf-8")
        close = True
    try:
        meta = {}
        values = []
        for line in file:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                key, _, value = line[1:].strip().partition("=")
                meta[key.strip()] = value
            elif line[0].isdigit() or line[0] in "+-.":
                _, _, v = line.partition(",")
                values.append(float(v))
    finally:
        if close:
            file.close()
    grid = NoiseGrid(float(meta["T"]), int(meta["n_steps"]))
    hurst = float(meta["hurst"]) if meta.get("hurst") else None
    gamma = float(meta["holder_gamma"]) if meta.get("holder_gamma") else None
    driver = DriverSpec(meta["driver"], hurst)
    return NoisePath(grid, np.array(values), driver, int(meta["seed"]), gamma)
