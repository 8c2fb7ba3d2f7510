"""
Planar primitives: polylines, nearest-point projection, tangent lines and
rotations.

Points are plain ``(2,)`` float arrays in projected kilometres; batches are
``(n, 2)`` arrays. A feature day is a list of :class:`Polyline`; the
projection routines flatten it into a :class:`SegmentSet` once and reuse it.
"""
from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence, Union

import numpy as np

from ._kernels import project_to_segments
from .errors import DataError, FeatureAbsentError

Point2 = np.ndarray


def as_point(p) -> Point2:
    arr = np.asarray(p, dtype=float).reshape(2)
    if not (math.isfinite(arr[0]) and math.isfinite(arr[1])):
        raise ValueError(f"non-finite point {p!r}")
    return arr


def rotation(theta: float) -> np.ndarray:
    """Counter-clockwise rotation matrix ``[[cos, -sin], [sin, cos]]``."""
    if not math.isfinite(theta):
        raise ValueError("rotation angle must be finite")
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


def normalize_line_angle(angle: float) -> float:
    """Map a direction angle to ``[0, pi)``; a line has no sign."""
    a = math.fmod(angle, math.pi)
    if a < 0.0:
        a += math.pi
    if a >= math.pi:
        a -= math.pi
    return a


def rigid_transform(points, angle: float, shift=(0.0, 0.0)) -> np.ndarray:
    """Rotate about the origin by ``angle`` then translate by ``shift``."""
    pts = np.asarray(points, dtype=float)
    return pts @ rotation(angle).T + np.asarray(shift, dtype=float)


@dataclass(frozen=True, eq=False)
class Polyline:
    vertices: np.ndarray

    def __post_init__(self):
        v = np.array(self.vertices, dtype=float)
        if v.ndim != 2 or v.shape[1] != 2 or len(v) < 2:
            raise ValueError("a polyline needs at least two (x, y) vertices")
        if not np.all(np.isfinite(v)):
            raise ValueError("polyline vertices must be finite")
        d = np.diff(v, axis=0)
        # squared length is what projection divides by; tiny segments underflow to zero
        if np.any(np.einsum("ij,ij->i", d, d) == 0.0):
            raise ValueError("polyline has a zero-length segment")
        v.setflags(write=False)
        object.__setattr__(self, "vertices", v)

    @property
    def closed(self) -> bool:
        return bool(np.array_equal(self.vertices[0], self.vertices[-1]))

    def transformed(self, angle: float, shift=(0.0, 0.0)) -> "Polyline":
        return Polyline(rigid_transform(self.vertices, angle, shift))

    def densify(self, n_per_segment: int) -> np.ndarray:
        """Evenly spaced samples along every segment, endpoints included."""
        t = np.linspace(0.0, 1.0, n_per_segment)[:, None]
        a, b = self.vertices[:-1], self.vertices[1:]
        pts = a[:, None, :] + t[None] * (b - a)[:, None, :]
        return pts.reshape(-1, 2)


@dataclass(frozen=True, eq=False)
class OrientedLine:
    anchor: Point2
    angle: float

    def __post_init__(self):
        object.__setattr__(self, "anchor", as_point(self.anchor))
        object.__setattr__(self, "angle", normalize_line_angle(float(self.angle)))

    @property
    def direction(self) -> np.ndarray:
        return np.array([math.cos(self.angle), math.sin(self.angle)])

    @property
    def normal(self) -> np.ndarray:
        return np.array([-math.sin(self.angle), math.cos(self.angle)])

    def distance(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        return np.abs((pts - self.anchor) @ self.normal)


class SegmentSet:
    """All segments of one feature day, flattened for vectorised queries.

    Segment ids run over the polylines in order, so the lowest id is the
    deterministic tie-break.
    """

    def __init__(self, polylines: Sequence[Polyline]):
        polylines = list(polylines)
        if not polylines:
            raise FeatureAbsentError("feature absent for day")
        starts, ends, tan_start, tan_end = [], [], [], []
        for pl in polylines:
            v = pl.vertices
            n = len(v)
            seg = v[1:] - v[:-1]
            # vertex tangents: chord between neighbours, one-sided at endpoints
            vt = np.empty_like(v)
            vt[1:-1] = v[2:] - v[:-2]
            if pl.closed and n > 3:
                vt[0] = vt[-1] = v[1] - v[-2]
            else:
                vt[0] = seg[0]
                vt[-1] = seg[-1]
            starts.append(v[:-1])
            ends.append(v[1:])
            tan_start.append(vt[:-1])
            tan_end.append(vt[1:])
        self.polylines = polylines
        self.start = np.concatenate(starts)
        self.end = np.concatenate(ends)
        self.vec = self.end - self.start
        self.len2 = np.einsum("ij,ij->i", self.vec, self.vec)
        self.tan_start = np.concatenate(tan_start)
        self.tan_end = np.concatenate(tan_end)
        self.lo = np.minimum(self.start, self.end)
        self.hi = np.maximum(self.start, self.end)

    def __len__(self):
        return len(self.start)


FeatureDay = Union[Sequence[Polyline], SegmentSet]


def _segments(feature_day: FeatureDay) -> SegmentSet:
    if isinstance(feature_day, SegmentSet):
        return feature_day
    return SegmentSet(feature_day)


class Projection(NamedTuple):
    point: np.ndarray
    segment: np.ndarray
    distance: np.ndarray
    param: np.ndarray


def project_points(feature_day: FeatureDay, points) -> Projection:
    """Nearest feature point for each row of ``points``."""
    segs = _segments(feature_day)
    pts = np.ascontiguousarray(np.atleast_2d(np.asarray(points, dtype=float)))
    n = len(pts)
    seg = np.empty(n, dtype=np.int64)
    u = np.empty(n)
    d2 = np.empty(n)
    project_to_segments(pts, segs.start, segs.vec, segs.len2, segs.lo, segs.hi, seg, u, d2)
    foot = segs.start[seg] + u[:, None] * segs.vec[seg]
    return Projection(foot, seg, np.sqrt(d2), u)


class NearestPoint(NamedTuple):
    point: np.ndarray
    segment: int
    distance: float


def nearest_point(feature_day: FeatureDay, p) -> NearestPoint:
    proj = project_points(feature_day, as_point(p)[None])
    return NearestPoint(proj.point[0], int(proj.segment[0]), float(proj.distance[0]))


def distance_to_feature(feature_day: FeatureDay, points) -> np.ndarray:
    return project_points(feature_day, points).distance


def tangent_directions(feature_day: FeatureDay, points):
    """Tangent anchors and unit directions of the feature nearest each point.

    Interior hits use the segment direction; a hit on a vertex uses the chord
    joining the vertex's neighbours (one-sided at open polyline ends).
    """
    segs = _segments(feature_day)
    proj = project_points(segs, points)
    s, u = proj.segment, proj.param
    d = np.where((u <= 0.0)[:, None], segs.tan_start[s],
                 np.where((u >= 1.0)[:, None], segs.tan_end[s], segs.vec[s]))
    d = d / np.linalg.norm(d, axis=1, keepdims=True)
    return proj.point, d


def tangent_at(feature_day: FeatureDay, p) -> OrientedLine:
    anchor, d = tangent_directions(feature_day, as_point(p)[None])
    return OrientedLine(anchor[0], math.atan2(d[0, 1], d[0, 0]))


@dataclass
class DynamicFeature:
    """A feature stored per integer day; no interpolation between days."""

    days: dict[int, list[Polyline]]
    crs_note: str | None = None
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __contains__(self, day) -> bool:
        return int(day) in self.days and len(self.days[int(day)]) > 0

    def day(self, t: int) -> list[Polyline]:
        lines = self.days.get(int(t))
        if not lines:
            raise FeatureAbsentError(f"feature absent for day {int(t)}")
        return lines

    def segments(self, t: int) -> SegmentSet:
        t = int(t)
        if t not in self._cache:
            self._cache[t] = SegmentSet(self.day(t))
        return self._cache[t]

    def transformed(self, angle: float, shift=(0.0, 0.0)) -> "DynamicFeature":
        return DynamicFeature(
            {t: [pl.transformed(angle, shift) for pl in lines] for t, lines in self.days.items()},
            self.crs_note,
        )


def _geometry_lines(geom: dict) -> list[Polyline]:
    kind = geom.get("type")
    if kind == "LineString":
        return [Polyline(geom["coordinates"])]
    if kind == "MultiLineString":
        return [Polyline(c) for c in geom["coordinates"]]
    raise DataError(f"unsupported geometry type {kind!r}")


def _read_collection(doc: dict, days: dict, default_day: int | None, source) -> str | None:
    if doc.get("type") != "FeatureCollection":
        raise DataError(f"{source}: expected a GeoJSON FeatureCollection")
    for i, feat in enumerate(doc.get("features", [])):
        props = feat.get("properties") or {}
        day = props.get("day", default_day)
        if day is None:
            raise DataError(f"{source}: feature {i} has no integer 'day' property")
        try:
            lines = _geometry_lines(feat.get("geometry") or {})
        except (ValueError, KeyError, TypeError) as exc:
            raise DataError(f"{source}: feature {i}: {exc}") from exc
        days.setdefault(int(day), []).extend(lines)
    return doc.get("crs_note")


def load_features(path) -> DynamicFeature:
    """Read a FeatureCollection file or a directory of ``feature_<day>.geojson``."""
    path = Path(path)
    days: dict[int, list[Polyline]] = {}
    note = None
    try:
        if path.is_dir():
            pattern = re.compile(r"feature_(-?\d+)\.geojson$")
            files = sorted((int(m.group(1)), f) for f in path.iterdir()
                           if (m := pattern.match(f.name)))
            for day, f in files:
                doc_note = _read_collection(json.loads(f.read_text()), days, day, f)
                note = note if note is not None else doc_note
        else:
            note = _read_collection(json.loads(path.read_text()), days, None, path)
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read features from {path}: {exc}") from exc
    return DynamicFeature(days, note)


def dump_features(feature: DynamicFeature, path) -> None:
    feats = []
    for day in sorted(feature.days):
        for pl in feature.days[day]:
            feats.append({
                "type": "Feature",
                "properties": {"day": int(day)},
                "geometry": {"type": "LineString",
                             "coordinates": [[round(float(x), 6), round(float(y), 6)]
                                             for x, y in pl.vertices]},
            })
    doc = {"type": "FeatureCollection", "features": feats}
    if feature.crs_note is not None:
        doc["crs_note"] = feature.crs_note
    Path(path).write_text(json.dumps(doc, separators=(",", ":")) + "\n")
