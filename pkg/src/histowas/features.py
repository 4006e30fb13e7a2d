"""Curve centring, curve summaries and the 30-feature spatial dictionary."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from . import ppstats
from .geometry import GeometryError, ObservationWindow, PointPattern
from .ppstats import CurveEstimate, EdgeCorrection

log = logging.getLogger(__name__)

DENSITY = "Density"
SPACING = "Spacing"
CORRELATION = "Correlation"

SUMMARY_FIELDS = ("auc", "max", "min", "dist_at_max", "dist_at_min", "mean", "std")


@dataclass(frozen=True)
class CurveSummary:
    auc: float
    max: float
    min: float
    dist_at_max: float
    dist_at_min: float
    mean: float
    std: float

    def get(self, name: str) -> float:
        return getattr(self, name)


@dataclass(frozen=True)
class FeatureDescriptor:
    name: str
    category: str
    source_function: str


def _curve_features(func: str, stats: Sequence[str], category: str) -> list:
    return [FeatureDescriptor(f"{func}.{s}", category, func) for s in stats]


_EXTREMA = ("auc", "max", "min", "dist_at_max", "dist_at_min")

DEFAULT_ROSTER: tuple = tuple(
    [FeatureDescriptor("GlobalDensity", DENSITY, "density"),
     FeatureDescriptor("ANN", DENSITY, "ANN")]
    + _curve_features("L", _EXTREMA, CORRELATION)
    + _curve_features("g", _EXTREMA, CORRELATION)
    + _curve_features("G", _EXTREMA + ("mean",), SPACING)
    + _curve_features("F", _EXTREMA + ("mean",), SPACING)
    + _curve_features("J", _EXTREMA + ("mean",), SPACING)
)


@dataclass
class FeatureConfig:
    """Estimator settings for spatial feature extraction.

    ``radii=None`` uses the default grid of the pattern's window. ``g_bandwidth``
    and ``n_quadrats`` default to Stoyan's rule and max(n, 1000).
    """

    radii: Optional[Sequence[float]] = None
    pair_correction: EdgeCorrection = EdgeCorrection.ISOTROPIC
    nn_correction: EdgeCorrection = EdgeCorrection.KAPLAN_MEIER
    g_bandwidth: Optional[float] = None
    n_quadrats: Optional[int] = None
    seed: int = 0
    roster: tuple = DEFAULT_ROSTER


@dataclass
class FeatureVector:
    observation_id: str
    values: dict
    diagnostics: list = field(default_factory=list)

    def as_row(self, roster=DEFAULT_ROSTER) -> list:
        return [self.values[d.name] for d in roster]


def csr_cdf(lam: float, radii) -> np.ndarray:
    """Nearest-neighbour and empty-space CDF of a Poisson process: 1 - exp(-λπr²)."""
    r = np.asarray(radii, dtype=float)
    return -np.expm1(-lam * np.pi * r * r)


def center_curve(curve: CurveEstimate) -> CurveEstimate:
    """Subtract the CSR baseline; undefined radii are dropped."""
    keep = curve.defined
    r = curve.radii[keep]
    v = curve.values[keep]
    fid = curve.function_id
    if fid == "L":
        centered = v
    elif fid in ("g", "J"):
        centered = v - 1.0
    elif fid in ("G", "F"):
        centered = v - csr_cdf(curve.intensity, r)
    elif fid == "K":
        centered = v - np.pi * r * r
    else:
        raise ValueError(f"cannot center function {fid!r}")
    return replace(curve, radii=r, values=centered)


def summarize_curve(centered: CurveEstimate) -> Optional[CurveSummary]:
    """Trapezoid AUC, extrema with their (first) radii, mean and sample std.

    Returns None when fewer than two radii are defined.
    """
    keep = centered.defined
    r = centered.radii[keep]
    v = centered.values[keep]
    if len(v) < 2:
        return None
    auc = float(np.sum(0.5 * (v[1:] + v[:-1]) * np.diff(r)))
    imax = int(np.argmax(v))
    imin = int(np.argmin(v))
    # shift by the first value so a constant curve has mean c and std 0 exactly
    dev = v - v[0]
    shift = float(np.mean(dev))
    return CurveSummary(
        auc=auc,
        max=float(v[imax]),
        min=float(v[imin]),
        dist_at_max=float(r[imax]),
        dist_at_min=float(r[imin]),
        mean=float(v[0]) + shift,
        std=float(np.std(dev, ddof=1)),
    )


def compute_curves(pattern: PointPattern, window: ObservationWindow, config: FeatureConfig) -> dict:
    """The five curves (L, g, G, F, J) for one pattern."""
    radii = ppstats.default_grid(window) if config.radii is None else ppstats.check_grid(config.radii)
    lam = ppstats.global_density(pattern, window)
    bw = config.g_bandwidth if config.g_bandwidth is not None else ppstats.default_bandwidth(lam)
    pairs = ppstats.weighted_pairs(pattern, window, radii[-1] + bw, config.pair_correction)
    k = ppstats.k_function(pattern, window, radii, config.pair_correction, pairs=pairs)
    g = ppstats.g_function(pattern, window, radii, config.pair_correction, bw, pairs=pairs)
    G = ppstats.g_empirical_cdf(pattern, window, radii, config.nn_correction)
    F = ppstats.f_function(pattern, window, radii, config.nn_correction, config.n_quadrats, config.seed)
    return {"L": ppstats.l_function(k), "g": g, "G": G, "F": F, "J": ppstats.j_function(G, F)}


def _missing(roster) -> dict:
    return {d.name: math.nan for d in roster}


def extract_spatial_features(pattern: PointPattern, window: Optional[ObservationWindow],
                             config: Optional[FeatureConfig] = None,
                             observation_id: Optional[str] = None) -> FeatureVector:
    """Feature vector for one observation.

    Estimator failures never raise here; the affected features are NaN and the
    reason is kept in ``diagnostics``.
    """
    config = config or FeatureConfig()
    obs = observation_id if observation_id is not None else pattern.slide_id
    values = _missing(config.roster)
    diagnostics = []
    if window is None:
        return FeatureVector(obs, values, ["no observable window"])

    scalars = {}
    try:
        scalars["density"] = ppstats.global_density(pattern, window)
    except ppstats.EstimatorError as exc:
        diagnostics.append(f"density: {exc}")
    try:
        scalars["ANN"] = ppstats.ann(pattern)
    except ppstats.EstimatorError as exc:
        diagnostics.append(f"ANN: {exc}")

    summaries = {}
    try:
        curves = compute_curves(pattern, window, config)
    except (ppstats.EstimatorError, GeometryError) as exc:
        diagnostics.append(f"curves: {exc}")
        curves = {}
    for fid, curve in curves.items():
        s = summarize_curve(center_curve(curve))
        if s is None:
            diagnostics.append(f"{fid}: fewer than two defined radii")
        summaries[fid] = s

    for d in config.roster:
        if d.source_function in scalars:
            values[d.name] = scalars[d.source_function]
        elif summaries.get(d.source_function) is not None:
            values[d.name] = summaries[d.source_function].get(d.name.split(".", 1)[1])
    for msg in diagnostics:
        log.warning("%s: %s", obs, msg)
    return FeatureVector(obs, values, diagnostics)
