"""CSR simulation, theoretical reference curves and pointwise envelopes."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import partial
from typing import Optional, Sequence

import numpy as np

from . import ppstats
from ._parallel import pmap
from .features import csr_cdf
from .geometry import ObservationWindow, PointPattern
from .ppstats import CurveEstimate, EdgeCorrection

FUNCTIONS = ("L", "g", "G", "F")

DEFAULT_CORRECTIONS = {
    "L": EdgeCorrection.ISOTROPIC,
    "g": EdgeCorrection.ISOTROPIC,
    "G": EdgeCorrection.KAPLAN_MEIER,
    "F": EdgeCorrection.KAPLAN_MEIER,
}


class SimulationError(ValueError):
    pass


@dataclass(frozen=True)
class CsrConfig:
    lam: float = 1e-3
    base_window: tuple = (5000.0, 5000.0)
    sub_window: tuple = (1000.0, 1000.0)
    n_samples: int = 299
    seed: int = 0

    def __post_init__(self):
        if not self.lam > 0:
            raise SimulationError("intensity must be positive")
        bw, bh = self.base_window
        sw, sh = self.sub_window
        if min(bw, bh, sw, sh) <= 0:
            raise SimulationError("window sides must be positive")
        if sw > bw or sh > bh:
            raise SimulationError("sub-window must fit inside the base window")
        if self.n_samples < 1:
            raise SimulationError("n_samples must be >= 1")


@dataclass(frozen=True)
class Envelope:
    function_id: str
    radii: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    theoretical: np.ndarray
    level: float = 0.95

    def contains(self, values) -> np.ndarray:
        v = np.asarray(values, dtype=float)
        return (v >= self.lower) & (v <= self.upper)

    def coverage(self, curves) -> float:
        """Fraction of (curve, radius) values inside the band."""
        arr = np.atleast_2d(np.asarray(curves, dtype=float))
        return float(np.mean(self.contains(arr)))


@dataclass
class ValidationResult:
    config: CsrConfig
    radii: np.ndarray
    curves: dict  # function id -> (n_used, n_radii) array
    envelopes: dict
    coverage: dict
    skipped: int
    n_points: list = field(default_factory=list)


def generate_csr(lam: float, window, seed) -> PointPattern:
    """Homogeneous Poisson pattern in a rectangle given as (width, height) or (x0, y0, x1, y1)."""
    if not lam > 0:
        raise SimulationError("intensity must be positive")
    x0, y0, x1, y1 = _rect(window)
    area = (x1 - x0) * (y1 - y0)
    if not area > 0:
        raise SimulationError("window must have positive area")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    n = rng.poisson(lam * area)
    pts = np.column_stack([rng.uniform(x0, x1, n), rng.uniform(y0, y1, n)])
    return PointPattern(pts, slide_id="csr", object_type="csr")


def _rect(window) -> tuple:
    if len(window) == 2:
        return 0.0, 0.0, float(window[0]), float(window[1])
    x0, y0, x1, y1 = map(float, window)
    return x0, y0, x1, y1


def theoretical_curve(function_id: str, lam: float, radii) -> CurveEstimate:
    """Values of each summary function under CSR with intensity ``lam``."""
    if not lam > 0:
        raise SimulationError("intensity must be positive")
    r = ppstats.check_grid(radii)
    if function_id == "K":
        v = np.pi * r * r
    elif function_id == "L":
        v = np.zeros_like(r)
    elif function_id in ("g", "J"):
        v = np.ones_like(r)
    elif function_id in ("G", "F"):
        v = csr_cdf(lam, r)
    else:
        raise SimulationError(f"unknown function {function_id!r}")
    return CurveEstimate(function_id, r, v, EdgeCorrection.NONE, 0, lam)


def pointwise_envelope(function_id: str, curves, radii, theoretical, level: float = 0.95) -> Envelope:
    """Per-radius empirical percentiles across simulated curves."""
    if not 0 < level < 1:
        raise SimulationError("level must be in (0, 1)")
    arr = np.asarray(curves, dtype=float)
    tail = 100.0 * (1.0 - level) / 2.0
    lower, upper = np.percentile(arr, [tail, 100.0 - tail], axis=0)
    return Envelope(function_id, np.asarray(radii, dtype=float), lower, upper,
                    np.asarray(theoretical, dtype=float), level)


def _sample_curves(task, radii, corrections, functions):
    """Curves for one sub-window; None when it holds fewer than 2 points."""
    points, rect, seed = task
    window = ObservationWindow.rectangle(*rect)
    pattern = PointPattern(points, slide_id="sample", object_type="csr")
    if len(pattern) < 2:
        return None, len(pattern)
    lam = ppstats.global_density(pattern, window)
    out = {}
    pair_corr = corrections.get("L", corrections.get("g", EdgeCorrection.ISOTROPIC))
    if "L" in functions or "g" in functions:
        bw = ppstats.default_bandwidth(lam)
        pairs = ppstats.weighted_pairs(pattern, window, radii[-1] + bw, pair_corr)
        if "L" in functions:
            k = ppstats.k_function(pattern, window, radii, corrections["L"], pairs=pairs)
            out["L"] = ppstats.l_function(k).values
        if "g" in functions:
            out["g"] = ppstats.g_function(pattern, window, radii, corrections["g"], bw, pairs=pairs).values
    if "G" in functions:
        out["G"] = ppstats.g_empirical_cdf(pattern, window, radii, corrections["G"]).values
    if "F" in functions:
        out["F"] = ppstats.f_function(pattern, window, radii, corrections["F"], seed=seed).values
    return out, len(pattern)


def sample_subwindows(config: CsrConfig, n_samples: Optional[int] = None, stream: int = 0) -> list:
    """Cut one base CSR pattern into sub-windows at uniform offsets.

    The base pattern depends only on ``config.seed``; ``stream`` selects an
    independent set of offsets (stream 0 builds envelopes, others give
    held-out samples). Each task is (points, (x0, y0, x1, y1), quadrat seed),
    with per-sample seeds so results do not depend on evaluation order.
    """
    n_samples = config.n_samples if n_samples is None else n_samples
    base = generate_csr(config.lam, config.base_window, np.random.default_rng([config.seed, 0]))
    offset_ss, *sample_ss = np.random.SeedSequence([config.seed, 1, stream]).spawn(n_samples + 1)
    bw, bh = config.base_window
    sw, sh = config.sub_window
    rng = np.random.default_rng(offset_ss)
    xs = rng.uniform(0.0, bw - sw, n_samples)
    ys = rng.uniform(0.0, bh - sh, n_samples)
    pts = base.points
    tasks = []
    for k in range(n_samples):
        x0, y0 = float(xs[k]), float(ys[k])
        rect = (x0, y0, x0 + sw, y0 + sh)
        m = (pts[:, 0] >= x0) & (pts[:, 0] <= x0 + sw) & (pts[:, 1] >= y0) & (pts[:, 1] <= y0 + sh)
        tasks.append((pts[m], rect, int(sample_ss[k].generate_state(1)[0])))
    return tasks


def simulate_curves(config: CsrConfig, radii, corrections=None, functions: Sequence[str] = FUNCTIONS,
                    n_samples: Optional[int] = None, stream: int = 0, workers: Optional[int] = None):
    """Per-sample curves; returns (dict of arrays, skipped count, per-sample point counts)."""
    radii = ppstats.check_grid(radii)
    corrections = {**DEFAULT_CORRECTIONS, **{k: EdgeCorrection.parse(v) for k, v in (corrections or {}).items()}}
    tasks = sample_subwindows(config, n_samples, stream)
    fn = partial(_sample_curves, radii=radii, corrections=corrections, functions=tuple(functions))
    results = pmap(fn, tasks, workers)
    curves = {f: [] for f in functions}
    skipped = 0
    counts = []
    for res, n in results:
        counts.append(n)
        if res is None:
            skipped += 1
            continue
        for f in functions:
            curves[f].append(res[f])
    arrays = {f: np.array(v).reshape(-1, len(radii)) for f, v in curves.items()}
    return arrays, skipped, counts


def default_radii(config: CsrConfig) -> np.ndarray:
    sw, sh = config.sub_window
    return ppstats.default_grid(ObservationWindow.rectangle(0, 0, sw, sh))


def run_validation(config: CsrConfig, radii=None, corrections=None, functions: Sequence[str] = FUNCTIONS,
                   level: float = 0.95, workers: Optional[int] = None) -> ValidationResult:
    """Sample sub-windows of one CSR base pattern and build pointwise envelopes."""
    radii = default_radii(config) if radii is None else ppstats.check_grid(radii)
    curves, skipped, counts = simulate_curves(config, radii, corrections, functions, workers=workers)
    envelopes = {}
    coverage = {}
    for f in functions:
        if len(curves[f]) == 0:
            raise SimulationError("every sample was skipped")
        theo = theoretical_curve(f, config.lam, radii).values
        env = pointwise_envelope(f, curves[f], radii, theo, level)
        envelopes[f] = env
        coverage[f] = env.coverage(curves[f])
    return ValidationResult(config, radii, curves, envelopes, coverage, skipped, counts)
