"""Closed planar shapes and defect descriptions.

Shapes answer two questions for arrays of points: closed-set membership and a
signed distance that never overestimates the true distance to the shape (used
to decide which elements need refinement).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from glocal.exceptions import ConfigurationError, GeometryError

#: Tolerance for closed-set membership tests.
BOUNDARY_TOL = 1e-12


class DefectKind(str, enum.Enum):
    WELL = "well"
    LSHAPE = "lshape"
    POROUS = "porous"
    CUSTOM = "custom"


@dataclass(frozen=True)
class Polygon:
    """Simple polygon given by its vertices in counterclockwise order."""

    vertices: tuple[tuple[float, float], ...]

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float)
        if v.ndim != 2 or v.shape[1] != 2 or len(v) < 3:
            raise GeometryError("polygon needs at least three 2D vertices")
        object.__setattr__(self, "vertices", tuple(map(tuple, v.tolist())))
        if self.signed_area() <= 0:
            raise GeometryError("polygon vertices must be counterclockwise")

    @classmethod
    def rectangle(cls, x0, y0, x1, y1):
        return cls(((x0, y0), (x1, y0), (x1, y1), (x0, y1)))

    @property
    def array(self):
        return np.asarray(self.vertices, dtype=float)

    def signed_area(self):
        v = self.array
        x, y = v[:, 0], v[:, 1]
        return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))

    def area(self):
        return abs(self.signed_area())

    def bbox(self):
        v = self.array
        return v[:, 0].min(), v[:, 1].min(), v[:, 0].max(), v[:, 1].max()

    def _segment_distance(self, pts):
        v = self.array
        a = v
        b = np.roll(v, -1, axis=0)
        d = np.full(len(pts), np.inf)
        for p, q in zip(a, b):
            e = q - p
            t = np.clip(((pts - p) @ e) / (e @ e), 0.0, 1.0)
            proj = p + t[:, None] * e
            d = np.minimum(d, np.hypot(*(pts - proj).T))
        return d

    def contains(self, points, tol=BOUNDARY_TOL):
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        v = self.array
        x, y = pts[:, 0], pts[:, 1]
        inside = np.zeros(len(pts), dtype=bool)
        for (xa, ya), (xb, yb) in zip(v, np.roll(v, -1, axis=0)):
            crosses = (ya > y) != (yb > y)
            with np.errstate(divide="ignore", invalid="ignore"):
                xint = xa + (y - ya) * (xb - xa) / (yb - ya)
            inside ^= crosses & (x < xint)
        return inside | (self._segment_distance(pts) <= tol)

    def signed_distance(self, points):
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        d = self._segment_distance(pts)
        return np.where(self.contains(pts, tol=0.0), -d, d)

    def boundary_samples(self, n=64):
        return self.array

    def scaled(self, factor):
        v = self.array
        c = v.mean(axis=0)
        return Polygon(tuple(map(tuple, c + factor * (v - c))))


@dataclass(frozen=True)
class Ellipse:
    """Axis-aligned ellipse with ``center`` and semi-axes ``axes = (ax, ay)``."""

    center: tuple[float, float]
    axes: tuple[float, float]

    def __post_init__(self):
        if min(self.axes) <= 0:
            raise GeometryError("ellipse semi-axes must be positive")
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))
        object.__setattr__(self, "axes", tuple(float(a) for a in self.axes))

    def area(self):
        return np.pi * self.axes[0] * self.axes[1]

    def bbox(self):
        (cx, cy), (ax, ay) = self.center, self.axes
        return cx - ax, cy - ay, cx + ax, cy + ay

    def _radius(self, pts):
        (cx, cy), (ax, ay) = self.center, self.axes
        return np.hypot((pts[:, 0] - cx) / ax, (pts[:, 1] - cy) / ay)

    def contains(self, points, tol=BOUNDARY_TOL):
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return self._radius(pts) <= 1.0 + tol

    def signed_distance(self, points):
        # (r - 1) * min axis is a lower bound of the distance outside the
        # ellipse: the annulus between level sets 1 and r has this width.
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return (self._radius(pts) - 1.0) * min(self.axes)

    def boundary_samples(self, n=256):
        th = np.linspace(0.0, 2 * np.pi, n, endpoint=False)
        (cx, cy), (ax, ay) = self.center, self.axes
        return np.column_stack([cx + ax * np.cos(th), cy + ay * np.sin(th)])

    def scaled(self, factor):
        return Ellipse(self.center, (self.axes[0] * factor, self.axes[1] * factor))


Shape = Polygon | Ellipse


def union_contains(shapes, points, tol=BOUNDARY_TOL):
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    out = np.zeros(len(pts), dtype=bool)
    for s in shapes:
        out |= s.contains(pts, tol=tol)
    return out


def union_distance(shapes, points):
    """Lower bound of the signed distance to the union of ``shapes``."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    d = np.full(len(pts), np.inf)
    for s in shapes:
        d = np.minimum(d, s.signed_distance(pts))
    return d


def _disjoint(s, t):
    if s.contains(t.boundary_samples()).any() or t.contains(s.boundary_samples()).any():
        return False
    return True


@dataclass(frozen=True)
class DefectGeometry:
    """Defect ``K0`` as a union of shapes, with an optional explicit ``K``.

    When ``k_shapes`` is ``None`` the region ``K`` is obtained from the mesh
    by a one-element-layer dilation of the ``K0`` elements.
    """

    kind: DefectKind
    k0_shapes: tuple = ()
    k_shapes: tuple | None = None
    diameter_d: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "kind", DefectKind(self.kind))
        object.__setattr__(self, "k0_shapes", tuple(self.k0_shapes))
        if self.k_shapes is not None:
            object.__setattr__(self, "k_shapes", tuple(self.k_shapes))
        if not self.k0_shapes:
            raise ConfigurationError("defect needs at least one K0 shape")
        for s in self.k0_shapes + (self.k_shapes or ()):
            x0, y0, x1, y1 = s.bbox()
            if not (x0 > 0 and y0 > 0 and x1 < 1 and y1 < 1):
                raise GeometryError(f"shape {s} does not lie strictly inside the unit square")
        if self.kind is DefectKind.POROUS:
            shapes = self.k0_shapes
            for i in range(len(shapes)):
                for j in range(i + 1, len(shapes)):
                    if not _disjoint(shapes[i], shapes[j]):
                        raise GeometryError(f"porous shapes {i} and {j} overlap")
        pts = np.vstack([s.boundary_samples() for s in self.k0_shapes])
        diff = pts[:, None, :] - pts[None, :, :]
        object.__setattr__(self, "diameter_d", float(np.sqrt((diff**2).sum(-1)).max()))

    @property
    def k0_area(self):
        return sum(s.area() for s in self.k0_shapes)

    def refinement_shapes(self):
        """Shapes that must be resolved at the fine mesh size."""
        return self.k_shapes if self.k_shapes is not None else self.k0_shapes

    def with_k_mode(self, mode):
        """Return a copy using explicit ``K`` shapes (``"explicit"``) or dilation."""
        if mode == "dilate":
            return DefectGeometry(self.kind, self.k0_shapes, None)
        if mode == "explicit":
            if self.k_shapes is None:
                raise ConfigurationError("explicit K requested but no K shapes given")
            return self
        raise ConfigurationError(f"unknown K mode {mode!r}")


def shape_from_dict(d):
    """Build a shape from its JSON description."""
    kind = d.get("type")
    if kind == "rectangle":
        return Polygon.rectangle(*d["bounds"])
    if kind == "polygon":
        return Polygon(tuple(map(tuple, d["vertices"])))
    if kind == "ellipse":
        return Ellipse(tuple(d["center"]), tuple(d["axes"]))
    raise ConfigurationError(f"unknown shape type {kind!r}")


def shape_to_dict(s):
    if isinstance(s, Ellipse):
        return {"type": "ellipse", "center": list(s.center), "axes": list(s.axes)}
    return {"type": "polygon", "vertices": [list(v) for v in s.vertices]}
