"""Point patterns, DBSCAN tissue clusters and convex-hull observation windows."""

from __future__ import annotations

import warnings
from collections import deque
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

# Tolerance (µm) for boundary-inclusive containment tests.
BOUNDARY_TOL = 1e-9

DEFAULT_EPS = 500.0
DEFAULT_MIN_SAMPLES = 10


class GeometryError(ValueError):
    pass


class NoWindowError(GeometryError):
    """Raised when no cluster yields a non-degenerate hull."""


class DuplicatePointsWarning(UserWarning):
    pass


class OverlappingHullsWarning(UserWarning):
    pass


def _as_points(points) -> np.ndarray:
    arr = np.asarray(points, dtype=float)
    if arr.size == 0:
        return np.empty((0, 2), dtype=float)
    arr = arr.reshape(-1, 2)
    return arr


@dataclass(frozen=True)
class PointPattern:
    """A set of 2D object centroids (µm) from one slide and object type."""

    points: np.ndarray
    slide_id: str = ""
    object_type: str = ""

    def __post_init__(self):
        pts = _as_points(self.points)
        if not np.all(np.isfinite(pts)):
            raise GeometryError("point coordinates must be finite")
        pts = np.ascontiguousarray(pts)
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)
        if len(pts) > 1:
            n_unique = len(np.unique(pts, axis=0))
            if n_unique < len(pts):
                warnings.warn(
                    f"pattern {self.slide_id!r}/{self.object_type!r} has "
                    f"{len(pts) - n_unique} duplicate coordinates",
                    DuplicatePointsWarning,
                    stacklevel=3,
                )

    def __len__(self) -> int:
        return len(self.points)

    @property
    def n(self) -> int:
        return len(self.points)

    def subset(self, mask) -> "PointPattern":
        return PointPattern(self.points[mask], self.slide_id, self.object_type)


@dataclass(frozen=True)
class ClusterLabeling:
    labels: np.ndarray
    eps: float
    min_samples: int

    @property
    def n_clusters(self) -> int:
        return int(self.labels.max()) + 1 if len(self.labels) else 0

    def members(self, label: int) -> np.ndarray:
        return np.flatnonzero(self.labels == label)


@dataclass(frozen=True)
class Polygon:
    """Convex polygon as a counter-clockwise vertex ring (no repeated closing vertex)."""

    vertices: np.ndarray

    def __post_init__(self):
        v = np.ascontiguousarray(np.asarray(self.vertices, dtype=float).reshape(-1, 2))
        v.setflags(write=False)
        object.__setattr__(self, "vertices", v)

    @property
    def area(self) -> float:
        return shoelace_area(self.vertices)

    @property
    def edges(self) -> tuple[np.ndarray, np.ndarray]:
        start = self.vertices
        end = np.roll(self.vertices, -1, axis=0)
        return start, end

    @property
    def bbox(self) -> tuple[float, float, float, float]:
        lo = self.vertices.min(axis=0)
        hi = self.vertices.max(axis=0)
        return float(lo[0]), float(lo[1]), float(hi[0]), float(hi[1])

    def outward_normals(self) -> tuple[np.ndarray, np.ndarray]:
        """Unit outward normals and their line offsets, so inside means n·p <= offset."""
        start, end = self.edges
        e = end - start
        length = np.hypot(e[:, 0], e[:, 1])
        # CCW ring: outward normal is the edge direction rotated clockwise.
        normals = np.column_stack([e[:, 1], -e[:, 0]]) / length[:, None]
        offsets = np.einsum("ij,ij->i", normals, start)
        return normals, offsets

    def contains(self, points) -> np.ndarray:
        pts = _as_points(points)
        start, end = self.edges
        e = end - start
        # cross(e, p - start) >= 0 for every edge of a CCW ring
        rel_x = pts[:, None, 0] - start[None, :, 0]
        rel_y = pts[:, None, 1] - start[None, :, 1]
        cross = e[None, :, 0] * rel_y - e[None, :, 1] * rel_x
        length = np.hypot(e[:, 0], e[:, 1])
        return np.all(cross >= -BOUNDARY_TOL * length[None, :], axis=1)

    def boundary_distance(self, points) -> np.ndarray:
        """Distance from each point to the nearest point on the polygon boundary."""
        pts = _as_points(points)
        start, end = self.edges
        e = end - start
        ee = np.einsum("ij,ij->i", e, e)
        rel = pts[:, None, :] - start[None, :, :]
        t = np.clip(np.einsum("pij,ij->pi", rel, e) / ee[None, :], 0.0, 1.0)
        closest = start[None, :, :] + t[..., None] * e[None, :, :]
        diff = pts[:, None, :] - closest
        return np.sqrt(np.min(diff[..., 0] ** 2 + diff[..., 1] ** 2, axis=1))


def shoelace_area(vertices) -> float:
    v = np.asarray(vertices, dtype=float)
    x, y = v[:, 0], v[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def convex_hull(points) -> Optional[Polygon]:
    """Andrew's monotone chain hull, CCW, collinear vertices dropped.

    Returns None when every point is collinear (or coincident).
    """
    pts = _as_points(points)
    if len(pts) < 3:
        raise GeometryError("convex hull needs at least 3 points")
    uniq = np.unique(pts, axis=0)  # lexicographic sort by (x, y)
    if len(uniq) < 3:
        return None

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    lower: list = []
    for p in uniq:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(tuple(p))
    upper: list = []
    for p in uniq[::-1]:
        while len(upper) >= 2 and cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(tuple(p))
    ring = lower[:-1] + upper[:-1]
    if len(ring) < 3:
        return None
    poly = Polygon(np.array(ring))
    if not poly.area > 0:
        return None
    return poly


class _GridIndex:
    """Uniform grid with cell size eps for fixed-radius neighbor queries."""

    def __init__(self, points: np.ndarray, eps: float):
        self.points = points
        self.eps = eps
        self.eps2 = eps * eps
        cells = np.floor(points / eps).astype(np.int64)
        self.cells = cells
        self.buckets: dict = {}
        for i, key in enumerate(map(tuple, cells)):
            self.buckets.setdefault(key, []).append(i)

    def neighbors(self, i: int) -> np.ndarray:
        cx, cy = self.cells[i]
        cand = []
        for dx in (-1, 0, 1):
            for dy in (-1, 0, 1):
                b = self.buckets.get((cx + dx, cy + dy))
                if b:
                    cand.extend(b)
        cand = np.array(sorted(cand), dtype=np.int64)
        d = self.points[cand] - self.points[i]
        return cand[d[:, 0] ** 2 + d[:, 1] ** 2 <= self.eps2]


class _BruteIndex:
    def __init__(self, points: np.ndarray, eps: float):
        self.points = points
        self.eps2 = eps * eps

    def neighbors(self, i: int) -> np.ndarray:
        d = self.points - self.points[i]
        return np.flatnonzero(d[:, 0] ** 2 + d[:, 1] ** 2 <= self.eps2)


def dbscan(pattern, eps: float, min_samples: int, *, index: str = "grid") -> ClusterLabeling:
    """Label points by DBSCAN; -1 marks noise.

    A point is core when at least ``min_samples`` points (itself included) lie
    within ``eps``. Points are scanned in input order and a border point
    reachable from several clusters joins the first one that reaches it.
    """
    if not eps > 0:
        raise GeometryError("eps must be positive")
    if min_samples < 1:
        raise GeometryError("min_samples must be >= 1")
    pts = pattern.points if isinstance(pattern, PointPattern) else _as_points(pattern)
    n = len(pts)
    labels = np.full(n, -1, dtype=np.int64)
    if n == 0:
        return ClusterLabeling(labels, float(eps), int(min_samples))

    idx = _GridIndex(pts, eps) if index == "grid" else _BruteIndex(pts, eps)
    visited = np.zeros(n, dtype=bool)
    cluster = 0
    for i in range(n):
        if visited[i]:
            continue
        visited[i] = True
        nbrs = idx.neighbors(i)
        if len(nbrs) < min_samples:
            continue
        labels[i] = cluster
        queue = deque(nbrs)
        while queue:
            j = queue.popleft()
            if labels[j] == -1:
                labels[j] = cluster
            if visited[j]:
                continue
            visited[j] = True
            jn = idx.neighbors(j)
            if len(jn) >= min_samples:
                queue.extend(jn)
        cluster += 1
    return ClusterLabeling(labels, float(eps), int(min_samples))


@dataclass(frozen=True)
class ObservationWindow:
    """Union of convex hulls; ``total_area`` is the plain sum of hull areas."""

    hulls: tuple
    total_area: float = field(init=False)

    def __post_init__(self):
        hulls = tuple(self.hulls)
        if not hulls:
            raise NoWindowError("no observable window")
        for h in hulls:
            if not h.area > 0:
                raise GeometryError("window polygons must have positive area")
        object.__setattr__(self, "hulls", hulls)
        object.__setattr__(self, "total_area", float(sum(h.area for h in hulls)))

    @classmethod
    def rectangle(cls, x0: float, y0: float, x1: float, y1: float) -> "ObservationWindow":
        return cls((Polygon([(x0, y0), (x1, y0), (x1, y1), (x0, y1)]),))

    @property
    def bbox(self) -> tuple[float, float, float, float]:
        boxes = np.array([h.bbox for h in self.hulls])
        return (float(boxes[:, 0].min()), float(boxes[:, 1].min()),
                float(boxes[:, 2].max()), float(boxes[:, 3].max()))

    @property
    def diameter(self) -> float:
        x0, y0, x1, y1 = self.bbox
        return float(np.hypot(x1 - x0, y1 - y0))

    def contains(self, points) -> np.ndarray:
        pts = _as_points(points)
        inside = np.zeros(len(pts), dtype=bool)
        for h in self.hulls:
            todo = ~inside
            if todo.any():
                inside[todo] = h.contains(pts[todo])
        return inside

    def hull_index(self, points) -> np.ndarray:
        """Index of the first hull containing each point, -1 if none."""
        pts = _as_points(points)
        out = np.full(len(pts), -1, dtype=np.int64)
        for k, h in enumerate(self.hulls):
            todo = out == -1
            if todo.any():
                hit = h.contains(pts[todo])
                sel = np.flatnonzero(todo)[hit]
                out[sel] = k
        return out

    def distance_to_boundary(self, points) -> np.ndarray:
        """Distance to the nearest boundary of the hulls containing each point.

        With overlapping hulls the largest per-hull distance is used, i.e. only
        each hull's own outer boundary counts.
        """
        pts = _as_points(points)
        dist = np.full(len(pts), -np.inf)
        for h in self.hulls:
            inside = h.contains(pts)
            if inside.any():
                d = h.boundary_distance(pts[inside])
                dist[inside] = np.maximum(dist[inside], d)
        if np.any(np.isinf(dist)):
            raise GeometryError("point lies outside the observation window")
        return dist


def contains(window: ObservationWindow, p) -> bool:
    return bool(window.contains(np.asarray(p, dtype=float).reshape(1, 2))[0])


def distance_to_boundary(window: ObservationWindow, p) -> float:
    return float(window.distance_to_boundary(np.asarray(p, dtype=float).reshape(1, 2))[0])


def _convex_overlap(a: Polygon, b: Polygon) -> bool:
    """Separating-axis test; touching polygons do not count as overlapping."""
    for poly in (a, b):
        normals, _ = poly.outward_normals()
        for nrm in normals:
            pa = a.vertices @ nrm
            pb = b.vertices @ nrm
            if pa.max() <= pb.min() + BOUNDARY_TOL or pb.max() <= pa.min() + BOUNDARY_TOL:
                return False
    return True


def estimate_window(
    pattern: PointPattern,
    eps: float = DEFAULT_EPS,
    min_samples: int = DEFAULT_MIN_SAMPLES,
    *,
    labeling: Optional[ClusterLabeling] = None,
) -> ObservationWindow:
    """Tissue area as the union of convex hulls of DBSCAN clusters with >= 3 points."""
    if labeling is None:
        labeling = dbscan(pattern, eps, min_samples)
    hulls = []
    for label in range(labeling.n_clusters):
        members = labeling.members(label)
        if len(members) < 3:
            continue
        hull = convex_hull(pattern.points[members])
        if hull is not None:
            hulls.append(hull)
    if not hulls:
        raise NoWindowError("no observable window")
    for i in range(len(hulls)):
        for j in range(i + 1, len(hulls)):
            if _convex_overlap(hulls[i], hulls[j]):
                warnings.warn(
                    f"hulls {i} and {j} overlap; total area counts the overlap twice",
                    OverlappingHullsWarning,
                    stacklevel=2,
                )
    return ObservationWindow(tuple(hulls))


def cluster_partition(labeling: ClusterLabeling, order: Sequence[int] | None = None) -> frozenset:
    """Clusters as a set of frozensets of original point indices (noise excluded)."""
    labels = labeling.labels
    ids = np.arange(len(labels)) if order is None else np.asarray(order)
    groups: dict = {}
    for pos, lab in enumerate(labels):
        if lab >= 0:
            groups.setdefault(int(lab), set()).add(int(ids[pos]))
    return frozenset(frozenset(g) for g in groups.values())
