"""Distance-based point process estimators: K, L, g, G, F, J and ANN.

Pair-counting functions (K, L, g) accept Ripley's isotropic correction;
nearest-neighbour functions (G, F, J) accept the Kaplan-Meier correction.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree

from .geometry import BOUNDARY_TOL, ObservationWindow, PointPattern

N_ARCS = 256
MAX_WEIGHT = 16.0
N_GRID = 64
J_UNDEFINED_EPS = 1e-9
STOYAN = 0.15

_ARC_ANGLES = (np.arange(N_ARCS) + 0.5) * (2.0 * np.pi / N_ARCS)
_ARC_DIRS = np.column_stack([np.cos(_ARC_ANGLES), np.sin(_ARC_ANGLES)])


class EstimatorError(ValueError):
    pass


class InsufficientPointsError(EstimatorError):
    pass


class EdgeCorrection(str, enum.Enum):
    NONE = "none"
    ISOTROPIC = "ripley_isotropic"
    KAPLAN_MEIER = "kaplan_meier"

    @classmethod
    def parse(cls, value) -> "EdgeCorrection":
        if isinstance(value, cls):
            return value
        aliases = {"isotropic": cls.ISOTROPIC, "km": cls.KAPLAN_MEIER, "none": cls.NONE}
        if value in aliases:
            return aliases[value]
        return cls(value)


_PAIR_CORRECTIONS = (EdgeCorrection.NONE, EdgeCorrection.ISOTROPIC)
_NN_CORRECTIONS = (EdgeCorrection.NONE, EdgeCorrection.KAPLAN_MEIER)


@dataclass(frozen=True)
class CurveEstimate:
    """A function sampled on a grid of radii. Undefined values are NaN."""

    function_id: str
    radii: np.ndarray
    values: np.ndarray
    correction: EdgeCorrection = EdgeCorrection.NONE
    n_points: int = 0
    intensity: float = float("nan")

    def __post_init__(self):
        r = np.asarray(self.radii, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if r.shape != v.shape:
            raise EstimatorError("values and radii must have the same length")
        object.__setattr__(self, "radii", r)
        object.__setattr__(self, "values", v)

    @property
    def defined(self) -> np.ndarray:
        return ~np.isnan(self.values)


def check_grid(radii) -> np.ndarray:
    r = np.asarray(radii, dtype=float).ravel()
    if r.size == 0:
        raise EstimatorError("distance grid is empty")
    if not np.all(np.isfinite(r)) or np.any(r <= 0):
        raise EstimatorError("radii must be finite and positive")
    if np.any(np.diff(r) <= 0):
        raise EstimatorError("radii must be strictly increasing")
    return r


def default_grid(window: ObservationWindow, r_max: Optional[float] = None, n: int = N_GRID) -> np.ndarray:
    """``n`` equally spaced radii from r_max/n to r_max; r_max defaults to a quarter of sqrt(area)."""
    if r_max is None:
        r_max = 0.25 * math.sqrt(window.total_area)
    return r_max / n * np.arange(1, n + 1)


def global_density(pattern: PointPattern, window: ObservationWindow) -> float:
    """Points per unit area (λ = n / A)."""
    n = len(pattern)
    if n < 1 or not window.total_area > 0:
        raise EstimatorError("density undefined for an empty pattern or zero area")
    return n / window.total_area


def _require(pattern, n_min: int):
    if len(pattern) < n_min:
        raise InsufficientPointsError(f"need at least {n_min} points, got {len(pattern)}")


def _distances(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    dx = a[..., 0] - b[..., 0]
    dy = a[..., 1] - b[..., 1]
    return np.sqrt(dx * dx + dy * dy)


def ordered_pairs(points: np.ndarray, r_max: float):
    """All ordered pairs (i, j), i != j, with distance <= r_max, sorted by (d, i, j)."""
    tree = cKDTree(points)
    pairs = tree.query_pairs(r_max * (1 + 1e-9) + 1e-12, output_type="ndarray")
    if len(pairs) == 0:
        empty = np.empty(0, dtype=np.int64)
        return empty, empty, np.empty(0)
    i = np.concatenate([pairs[:, 0], pairs[:, 1]])
    j = np.concatenate([pairs[:, 1], pairs[:, 0]])
    d = _distances(points[i], points[j])
    keep = d <= r_max
    i, j, d = i[keep], j[keep], d[keep]
    order = np.lexsort((j, i, d))
    return i[order], j[order], d[order]


def isotropic_weights(
    window: ObservationWindow,
    centers,
    radii,
    *,
    boundary_distance: Optional[np.ndarray] = None,
    chunk: int = 4096,
) -> np.ndarray:
    """Inverse in-window fraction of circle circumference, discretised into 256 arcs.

    A circle that stays inside the window gets weight exactly 1. Weights are
    capped at ``MAX_WEIGHT``.
    """
    centers = np.asarray(centers, dtype=float).reshape(-1, 2)
    radii = np.broadcast_to(np.asarray(radii, dtype=float), (len(centers),))
    w = np.ones(len(centers))
    if boundary_distance is None:
        boundary_distance = window.distance_to_boundary(centers)
    todo = np.flatnonzero(radii > boundary_distance)
    if len(todo) == 0:
        return w

    own = window.hull_index(centers[todo])
    hull_data = []
    for hull in window.hulls:
        normals, offsets = hull.outward_normals()
        hull_data.append((hull.bbox, normals, offsets, _ARC_DIRS @ normals.T))

    for start in range(0, len(todo), chunk):
        sel = todo[start:start + chunk]
        c = centers[sel]
        r = radii[sel]
        own_k = own[start:start + chunk]
        inside = np.ones((len(sel), N_ARCS), dtype=bool)
        # Own hull: an arc midpoint leaves it only across edges closer than r.
        for h, (_, normals, offsets, proj) in enumerate(hull_data):
            rows = np.flatnonzero(own_k == h)
            if len(rows) == 0:
                continue
            slack = offsets[None, :] - c[rows] @ normals.T
            for e in range(len(offsets)):
                act = np.flatnonzero(slack[:, e] < r[rows])
                if len(act) == 0:
                    continue
                out = r[rows[act], None] * proj[None, :, e] > slack[act, e, None] + BOUNDARY_TOL
                inside[rows[act]] &= ~out
        # Other hulls can only add coverage.
        if len(hull_data) > 1:
            for h, ((x0, y0, x1, y1), normals, offsets, proj) in enumerate(hull_data):
                near = ((own_k != h) & (c[:, 0] + r >= x0) & (c[:, 0] - r <= x1)
                        & (c[:, 1] + r >= y0) & (c[:, 1] - r <= y1))
                if not near.any():
                    continue
                slack = offsets[None, :] - c[near] @ normals.T
                ok = np.all(r[near, None, None] * proj[None, :, :] <= slack[:, None, :] + BOUNDARY_TOL,
                            axis=2)
                inside[near] |= ok
        frac = inside.sum(axis=1) / N_ARCS
        with np.errstate(divide="ignore"):
            w[sel] = np.where(frac > 0, np.minimum(1.0 / frac, MAX_WEIGHT), MAX_WEIGHT)
    return w


def isotropic_weight(window: ObservationWindow, center, r: float) -> float:
    if not r > 0:
        raise EstimatorError("radius must be positive")
    if not window.contains(np.reshape(center, (1, 2)))[0]:
        raise EstimatorError("center must lie inside the window")
    return float(isotropic_weights(window, np.reshape(center, (1, 2)), [r])[0])


@dataclass(frozen=True)
class WeightedPairs:
    """Ordered pairs within ``r_max`` sorted by distance, with their edge weights."""

    r_max: float
    correction: EdgeCorrection
    i: np.ndarray
    d: np.ndarray
    w: np.ndarray

    def upto(self, r_max: float) -> tuple[np.ndarray, np.ndarray]:
        if r_max > self.r_max:
            raise EstimatorError("cached pairs do not reach the requested radius")
        m = np.searchsorted(self.d, r_max, side="right")
        return self.d[:m], self.w[:m]


def weighted_pairs(pattern: PointPattern, window: ObservationWindow, r_max: float,
                   correction=EdgeCorrection.ISOTROPIC) -> WeightedPairs:
    """Pair distances and weights, computed once and shareable between K and g."""
    correction = EdgeCorrection.parse(correction)
    if correction not in _PAIR_CORRECTIONS:
        raise EstimatorError(f"{correction.value} is not valid for pair-counting functions")
    i, _, d = ordered_pairs(pattern.points, r_max)
    if correction == EdgeCorrection.NONE:
        w = np.ones(len(d))
    else:
        c = window.distance_to_boundary(pattern.points)
        w = isotropic_weights(window, pattern.points[i], d, boundary_distance=c[i])
    return WeightedPairs(float(r_max), correction, i, d, w)


def _pairs_for(pattern, window, r_max, correction, pairs):
    if pairs is None:
        pairs = weighted_pairs(pattern, window, r_max, correction)
    elif pairs.correction != correction:
        raise EstimatorError("cached pairs were computed with a different correction")
    return pairs.upto(r_max)


def k_function(pattern: PointPattern, window: ObservationWindow, radii,
               correction=EdgeCorrection.ISOTROPIC, *, pairs: Optional[WeightedPairs] = None) -> CurveEstimate:
    """Ripley's K: (A / n²) Σ_i Σ_{j≠i} w_ij 1(d_ij <= r)."""
    correction = EdgeCorrection.parse(correction)
    if correction not in _PAIR_CORRECTIONS:
        raise EstimatorError(f"{correction.value} is not valid for K")
    _require(pattern, 2)
    radii = check_grid(radii)
    n = len(pattern)
    area = window.total_area
    d, w = _pairs_for(pattern, window, radii[-1], correction, pairs)
    cum = np.concatenate([[0.0], np.cumsum(w)])
    sums = cum[np.searchsorted(d, radii, side="right")]
    values = (area / n ** 2) * sums
    return CurveEstimate("K", radii, values, correction, n, n / area)


def l_function(k: CurveEstimate) -> CurveEstimate:
    """Besag's L = sqrt(K/π) - r."""
    if k.function_id != "K":
        raise EstimatorError("l_function expects a K curve")
    values = np.sqrt(np.maximum(k.values, 0.0) / np.pi) - k.radii
    return replace(k, function_id="L", values=values)


def default_bandwidth(intensity: float) -> float:
    """Stoyan's rule of thumb, 0.15 / sqrt(λ)."""
    return STOYAN / math.sqrt(intensity)


def epanechnikov(u, bandwidth: float) -> np.ndarray:
    t = np.asarray(u, dtype=float) / bandwidth
    return np.where(np.abs(t) <= 1.0, 0.75 * (1.0 - t * t) / bandwidth, 0.0)


def g_function(pattern: PointPattern, window: ObservationWindow, radii,
               correction=EdgeCorrection.ISOTROPIC, bandwidth: Optional[float] = None,
               *, pairs: Optional[WeightedPairs] = None) -> CurveEstimate:
    """Pair correlation from Epanechnikov-smoothed, weighted pair distances."""
    correction = EdgeCorrection.parse(correction)
    if correction not in _PAIR_CORRECTIONS:
        raise EstimatorError(f"{correction.value} is not valid for g")
    _require(pattern, 2)
    radii = check_grid(radii)
    n = len(pattern)
    area = window.total_area
    lam = n / area
    if bandwidth is None:
        bandwidth = default_bandwidth(lam)
    if not bandwidth > 0:
        raise EstimatorError("bandwidth must be positive")
    d, w = _pairs_for(pattern, window, radii[-1] + bandwidth, correction, pairs)
    values = np.empty(len(radii))
    for k, r in enumerate(radii):
        lo = np.searchsorted(d, r - bandwidth, side="left")
        hi = np.searchsorted(d, r + bandwidth, side="right")
        s = float(np.sum(w[lo:hi] * epanechnikov(r - d[lo:hi], bandwidth)))
        values[k] = s / (2.0 * np.pi * r * lam * lam * area)
    return CurveEstimate("g", radii, values, correction, n, lam)


def nearest_neighbor_distances(points) -> np.ndarray:
    """Distance from each point to its nearest other point (duplicates give 0)."""
    pts = np.asarray(points, dtype=float)
    n = len(pts)
    if n < 2:
        raise InsufficientPointsError("need at least 2 points")
    k = min(n, 5)
    _, idx = cKDTree(pts).query(pts, k=k)
    self_idx = np.arange(n)[:, None]
    d = _distances(pts[:, None, :], pts[idx])
    d = np.where(idx == self_idx, np.inf, d)
    return d.min(axis=1)


def empirical_cdf(values, radii) -> np.ndarray:
    v = np.sort(np.asarray(values, dtype=float))
    return np.searchsorted(v, radii, side="right") / len(v)


def kaplan_meier_cdf(observed, censoring, radii) -> np.ndarray:
    """Censored CDF estimate 1 - Π(1 - e(t)/Y(t)) over event times t <= r.

    ``observed`` is the distance of interest and ``censoring`` the distance to
    the boundary; an observation is an event when observed <= censoring. Ties
    share one factor and events precede censorings at equal times. Between
    censorings the product telescopes to a ratio of risk-set sizes, so
    uncensored data reproduce the empirical CDF exactly.
    """
    d = np.asarray(observed, dtype=float)
    c = np.asarray(censoring, dtype=float)
    n = len(d)
    event = d <= c
    t = np.where(event, d, c)
    times, inv = np.unique(t, return_inverse=True)
    n_event = np.bincount(inv, weights=event, minlength=len(times)).astype(np.int64)
    n_total = np.bincount(inv, minlength=len(times))

    cdf = np.empty(len(times))
    s_base = 1.0
    y_base = n
    since = 0
    at_risk = n
    g = 0.0
    for k in range(len(times)):
        e = int(n_event[k])
        if e:
            since += e
            if s_base == 1.0:
                g = since / y_base
            else:
                g = 1.0 - s_base * ((y_base - since) / y_base)
        cdf[k] = g
        at_risk -= int(n_total[k])
        if n_total[k] > e:  # censoring at this time: restart the telescoping product
            s_base = s_base * ((y_base - since) / y_base)
            y_base = at_risk
            since = 0
    pos = np.searchsorted(times, radii, side="right")
    return np.where(pos > 0, cdf[np.maximum(pos - 1, 0)], 0.0)


def g_empirical_cdf(pattern: PointPattern, window: ObservationWindow, radii,
                    correction=EdgeCorrection.KAPLAN_MEIER) -> CurveEstimate:
    """Nearest-neighbour distance distribution G(r)."""
    correction = EdgeCorrection.parse(correction)
    if correction not in _NN_CORRECTIONS:
        raise EstimatorError(f"{correction.value} is not valid for G")
    _require(pattern, 2)
    radii = check_grid(radii)
    nn = nearest_neighbor_distances(pattern.points)
    if correction == EdgeCorrection.NONE:
        values = empirical_cdf(nn, radii)
    else:
        values = kaplan_meier_cdf(nn, window.distance_to_boundary(pattern.points), radii)
    n = len(pattern)
    return CurveEstimate("G", radii, values, correction, n, n / window.total_area)


def sample_window(window: ObservationWindow, n: int, rng: np.random.Generator) -> np.ndarray:
    """``n`` uniform locations, allocated to hulls in proportion to their area."""
    areas = np.array([h.area for h in window.hulls])
    quota = areas / areas.sum() * n
    counts = np.floor(quota).astype(np.int64)
    short = n - counts.sum()
    if short:
        counts[np.argsort(-(quota - counts), kind="stable")[:short]] += 1
    out = []
    for hull, m in zip(window.hulls, counts):
        x0, y0, x1, y1 = hull.bbox
        got = []
        have = 0
        while have < m:
            batch = max(16, int(1.5 * (m - have)))
            cand = np.column_stack([rng.uniform(x0, x1, batch), rng.uniform(y0, y1, batch)])
            cand = cand[hull.contains(cand)]
            got.append(cand)
            have += len(cand)
        if got:
            out.append(np.concatenate(got)[:m])
    return np.concatenate(out) if out else np.empty((0, 2))


def f_function(pattern: PointPattern, window: ObservationWindow, radii,
               correction=EdgeCorrection.KAPLAN_MEIER, n_quadrats: Optional[int] = None,
               seed: int = 0, *, quadrats=None) -> CurveEstimate:
    """Empty-space function F(r) from in-window sample locations.

    ``quadrats`` overrides random sampling with explicit locations.
    """
    correction = EdgeCorrection.parse(correction)
    if correction not in _NN_CORRECTIONS:
        raise EstimatorError(f"{correction.value} is not valid for F")
    _require(pattern, 1)
    if not window.total_area > 0:
        raise EstimatorError("window has zero area")
    radii = check_grid(radii)
    if quadrats is None:
        if n_quadrats is None:
            n_quadrats = max(len(pattern), 1000)
        if n_quadrats < 1:
            raise EstimatorError("n_quadrats must be >= 1")
        quadrats = sample_window(window, n_quadrats, np.random.default_rng(seed))
    else:
        quadrats = np.asarray(quadrats, dtype=float).reshape(-1, 2)
    _, idx = cKDTree(pattern.points).query(quadrats, k=1)
    dist = _distances(quadrats, pattern.points[idx])
    if correction == EdgeCorrection.NONE:
        values = empirical_cdf(dist, radii)
    else:
        values = kaplan_meier_cdf(dist, window.distance_to_boundary(quadrats), radii)
    n = len(pattern)
    return CurveEstimate("F", radii, values, correction, n, n / window.total_area)


def j_function(g_curve: CurveEstimate, f_curve: CurveEstimate) -> CurveEstimate:
    """J = (1 - G) / (1 - F); NaN where F is within 1e-9 of 1."""
    if g_curve.function_id != "G" or f_curve.function_id != "F":
        raise EstimatorError("j_function expects a G curve and an F curve")
    if g_curve.radii.shape != f_curve.radii.shape or not np.array_equal(g_curve.radii, f_curve.radii):
        raise EstimatorError("G and F curves must share a grid")
    undefined = f_curve.values > 1.0 - J_UNDEFINED_EPS
    with np.errstate(divide="ignore", invalid="ignore"):
        values = np.where(undefined, np.nan, (1.0 - g_curve.values) / (1.0 - f_curve.values))
    return replace(g_curve, function_id="J", values=values)


def ann(pattern: PointPattern) -> float:
    """Average nearest-neighbour distance (no edge correction)."""
    _require(pattern, 2)
    return float(np.mean(nearest_neighbor_distances(pattern.points)))
