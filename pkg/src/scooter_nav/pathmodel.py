"""Piecewise-linear paths with per-segment corridor widths.

The corridor test is the normalized quadratic signed distance
``(w^2 - dist^2) / w^2`` against each segment capsule, combined by a max
over segments.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path as FsPath
from typing import Sequence

import numpy as np

from . import kernels
from .geodesy import EnuFrame, EnuPoint, GeodeticPoint, to_enu

MIN_SEGMENT_LENGTH = 1e-6


class PathError(ValueError):
    pass


class TooFewWaypoints(PathError):
    pass


class DegenerateSegment(PathError):
    pass


class NonPositiveWidth(PathError):
    pass


@dataclass(frozen=True)
class Segment:
    a: np.ndarray
    b: np.ndarray
    w: float  # half width

    @property
    def length(self) -> float:
        return float(np.hypot(*(self.b - self.a)))

    @property
    def heading(self) -> float:
        d = self.b - self.a
        return math.atan2(d[1], d[0])


@dataclass(frozen=True)
class PathProjection:
    s: float
    seg_index: int  # 0-based
    closest: np.ndarray
    distance: float


class Path:
    """Immutable polyline with cumulative arc length per segment start."""

    def __init__(self, segments: Sequence[Segment]):
        self.segments = tuple(segments)
        self.a = np.array([s.a for s in self.segments], dtype=float)
        self.b = np.array([s.b for s in self.segments], dtype=float)
        self.w = np.array([s.w for s in self.segments], dtype=float)
        self.lengths = np.hypot(*(self.b - self.a).T)
        self.starts = np.concatenate([[0.0], np.cumsum(self.lengths)[:-1]])
        self.total_length = float(self.starts[-1] + self.lengths[-1])
        self.headings = np.arctan2(*(self.b - self.a).T[::-1])
        for arr in (self.a, self.b, self.w, self.lengths, self.starts, self.headings):
            arr.setflags(write=False)

    def __len__(self):
        return len(self.segments)

    @property
    def waypoints(self) -> np.ndarray:
        return np.vstack([self.a, self.b[-1:]])

    def __repr__(self):
        return f"Path({len(self)} segments, {self.total_length:.3f} m)"


def build_path(waypoints, widths) -> Path:
    pts = np.asarray([_planar(p) for p in waypoints], dtype=float)
    if len(pts) < 2:
        raise TooFewWaypoints(f"need at least 2 waypoints, got {len(pts)}")
    widths = np.broadcast_to(np.asarray(widths, dtype=float), (len(pts) - 1,)) \
        if np.ndim(widths) == 0 else np.asarray(widths, dtype=float)
    if len(widths) != len(pts) - 1:
        raise PathError(f"expected {len(pts) - 1} widths, got {len(widths)}")
    segments = []
    for i in range(len(pts) - 1):
        if not np.all(np.isfinite(pts[i])):
            raise PathError(f"waypoint {i} is not finite")
        if np.hypot(*(pts[i + 1] - pts[i])) < MIN_SEGMENT_LENGTH:
            raise DegenerateSegment(f"segment {i} between waypoints {i} and {i + 1} has zero length")
        if not widths[i] > 0:
            raise NonPositiveWidth(f"segment {i} has non-positive half width {widths[i]}")
        segments.append(Segment(pts[i].copy(), pts[i + 1].copy(), float(widths[i])))
    return Path(segments)


def _planar(p) -> np.ndarray:
    if isinstance(p, EnuPoint):
        return p.planar()
    arr = np.asarray(p, dtype=float)
    return arr[:2]


def segment_parameter(p, seg: Segment) -> float:
    p = _planar(p)
    d = seg.b - seg.a
    h = float(np.dot(p - seg.a, d) / np.dot(d, d))
    return max(min(h, 1.0), 0.0)


def segment_sdf(p, seg: Segment) -> float:
    p = _planar(p)
    h = segment_parameter(p, seg)
    q = (1.0 - h) * seg.a + h * seg.b
    r = p - q
    w2 = seg.w * seg.w
    return float((w2 - (r[0] * r[0] + r[1] * r[1])) / w2)


def path_sdf(p, path: Path) -> float:
    return float(path_sdf_batch(np.atleast_2d(_planar(p)), path)[0][0])


def path_sdf_batch(points, path: Path):
    """Vectorized corridor value for many points.

    Returns ``(value, gradient, active_segment)``. The gradient is that of the
    active segment; exact ties pick the larger segment index.
    """
    pts = np.ascontiguousarray(points, dtype=float).reshape(-1, 2)
    return kernels.path_sdf(pts, path.a, path.b, path.w)


def project(p, path: Path) -> PathProjection:
    p = _planar(p)
    d = path.b - path.a
    h = np.clip(np.einsum("ij,ij->i", p - path.a, d) / np.einsum("ij,ij->i", d, d), 0.0, 1.0)
    q = path.a + h[:, None] * d
    dist = np.hypot(*(p - q).T)
    s = path.starts + h * path.lengths
    best = 0
    for i in range(1, len(path)):
        # equidistant candidates resolve to the larger arc length
        if dist[i] < dist[best] or (dist[i] == dist[best] and s[i] > s[best]):
            best = i
    return PathProjection(float(s[best]), best, q[best].copy(), float(dist[best]))


def sample(path: Path, s: float):
    """Point and heading at arc length ``s`` (clamped to the path).

    At an interior waypoint the outgoing segment's heading is returned.
    """
    s = min(max(float(s), 0.0), path.total_length)
    i = int(np.searchsorted(path.starts, s, side="right")) - 1
    i = min(max(i, 0), len(path) - 1)
    if i == len(path) - 1 and s >= path.total_length:
        return path.b[-1].copy(), float(path.headings[-1])
    h = (s - path.starts[i]) / path.lengths[i]
    return path.a[i] + h * (path.b[i] - path.a[i]), float(path.headings[i])


def sample_many(path: Path, s) -> tuple[np.ndarray, np.ndarray]:
    s = np.clip(np.asarray(s, dtype=float), 0.0, path.total_length)
    idx = np.clip(np.searchsorted(path.starts, s, side="right") - 1, 0, len(path) - 1)
    h = (s - path.starts[idx]) / path.lengths[idx]
    pts = path.a[idx] + h[:, None] * (path.b[idx] - path.a[idx])
    end = s >= path.total_length
    pts[end] = path.b[-1]
    return pts, path.headings[idx].copy()


def load_path(file, frame: EnuFrame | None = None) -> tuple[Path, EnuFrame | None]:
    """Load a path JSON document.

    Geodetic form: ``{"origin": {...}, "waypoints": [{"lat", "lon"}...], "half_widths": [...]}``.
    When ``origin`` is absent the first waypoint anchors the ENU frame.
    Planar form: ``{"waypoints_enu": [[e, n], ...], "half_widths": [...]}``.
    """
    doc = json.loads(FsPath(file).read_text())
    return path_from_dict(doc, frame)


def path_from_dict(doc: dict, frame: EnuFrame | None = None) -> tuple[Path, EnuFrame | None]:
    if "half_widths" not in doc:
        raise PathError("path document lacks 'half_widths'")
    widths = doc["half_widths"]
    if "waypoints_enu" in doc:
        pts = [np.asarray(p, dtype=float)[:2] for p in doc["waypoints_enu"]]
        if np.ndim(widths) == 0:
            widths = [widths] * max(len(pts) - 1, 0)
        return build_path(pts, widths), frame
    if "waypoints" not in doc:
        raise PathError("path document needs 'waypoints' or 'waypoints_enu'")
    geo = [GeodeticPoint(w["lat"], w["lon"], w.get("alt", 0.0)) for w in doc["waypoints"]]
    if frame is None:
        o = doc.get("origin")
        if o is not None:
            frame = EnuFrame(GeodeticPoint(o["lat"], o["lon"], o.get("alt", 0.0)))
        elif geo:
            frame = EnuFrame(geo[0])
        else:
            raise TooFewWaypoints("need at least 2 waypoints, got 0")
    pts = [to_enu(frame, g).planar() for g in geo]
    if np.ndim(widths) == 0:
        widths = [widths] * max(len(pts) - 1, 0)
    return build_path(pts, widths), frame


def path_to_dict(path: Path) -> dict:
    return {
        "waypoints_enu": path.waypoints.tolist(),
        "half_widths": path.w.tolist(),
    }
