"""Triangulations of the unit square with local refinement near a defect.

Elements are stored as vertex triples ``(newest, b1, b2)`` in counterclockwise
order; ``b1 b2`` is the refinement edge used by newest-vertex bisection. All
meshes built here descend from a structured root grid, so a mesh whose element
sizes are pointwise no larger than another's is a refinement of it. The error
module relies on this to transfer coarse solutions exactly.

The mesh size of an element is ``sqrt(2 * area)``, which equals the grid
spacing ``1/n`` for the right triangles of a structured ``n x n`` grid.
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np

from glocal.exceptions import CapacityError, ConfigurationError, GeometryError, MeshError
from glocal.geometry import DefectGeometry, Ellipse, union_contains, union_distance

logger = logging.getLogger(__name__)

DEFAULT_ELEMENT_CAP = 4_000_000


class Region(enum.IntEnum):
    EXTERIOR = 0
    LAYER = 1
    DEFECT = 2


@dataclass(frozen=True, eq=False)
class Mesh:
    """Conforming triangulation of the unit square.

    Attributes
    ----------
    vertices : (nv, 2) float array
    elements : (ne, 3) int array, counterclockwise, newest vertex first
    boundary_vertices : sorted int array of vertex indices on the boundary
    element_region : (ne,) int8 array of :class:`Region` codes
    """

    vertices: np.ndarray
    elements: np.ndarray
    boundary_vertices: np.ndarray = None
    element_region: np.ndarray = None
    warnings: tuple = field(default=())

    def __post_init__(self):
        v = np.ascontiguousarray(self.vertices, dtype=float)
        e = np.ascontiguousarray(self.elements, dtype=np.int64)
        v.flags.writeable = False
        e.flags.writeable = False
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "elements", e)
        if self.boundary_vertices is None:
            object.__setattr__(self, "boundary_vertices", self._topological_boundary())
        if self.element_region is None:
            object.__setattr__(self, "element_region", np.zeros(len(e), dtype=np.int8))
        r = np.asarray(self.element_region, dtype=np.int8)
        b = np.asarray(self.boundary_vertices, dtype=np.int64)
        r.flags.writeable = False
        b.flags.writeable = False
        object.__setattr__(self, "element_region", r)
        object.__setattr__(self, "boundary_vertices", b)

    @property
    def nv(self):
        return len(self.vertices)

    @property
    def ne(self):
        return len(self.elements)

    @cached_property
    def corners(self):
        """(ne, 3, 2) array of element vertex coordinates."""
        return self.vertices[self.elements]

    @cached_property
    def signed_areas(self):
        p = self.corners
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    @property
    def areas(self):
        return np.abs(self.signed_areas)

    @cached_property
    def edge_lengths(self):
        p = self.corners
        return np.stack(
            [
                np.hypot(*(p[:, 2] - p[:, 1]).T),
                np.hypot(*(p[:, 0] - p[:, 2]).T),
                np.hypot(*(p[:, 1] - p[:, 0]).T),
            ],
            axis=1,
        )

    @cached_property
    def h_local(self):
        """Element diameters (longest edge)."""
        return self.edge_lengths.max(axis=1)

    @cached_property
    def sizes(self):
        """Element mesh sizes ``sqrt(2 * area)``."""
        return np.sqrt(2.0 * self.areas)

    @cached_property
    def inradii(self):
        return 2.0 * self.areas / self.edge_lengths.sum(axis=1)

    @cached_property
    def barycenters(self):
        return self.corners.mean(axis=1)

    @cached_property
    def edges(self):
        """Unique edges and the element-to-edge map.

        Returns ``(edge_vertices, element_edges)`` where ``element_edges[t, i]``
        is the edge opposite local vertex ``i`` of element ``t``.
        """
        e = self.elements
        pairs = np.stack([e[:, [1, 2]], e[:, [2, 0]], e[:, [0, 1]]], axis=1).reshape(-1, 2)
        pairs = np.sort(pairs, axis=1)
        keys = pairs[:, 0] * self.nv + pairs[:, 1]
        ukeys, inverse = np.unique(keys, return_inverse=True)
        edge_vertices = np.column_stack([ukeys // self.nv, ukeys % self.nv])
        return edge_vertices, inverse.reshape(-1, 3)

    @cached_property
    def edge_element_counts(self):
        _, ee = self.edges
        return np.bincount(ee.ravel(), minlength=len(self.edges[0]))

    @cached_property
    def edge_neighbors(self):
        """(n_interior_edges, 2) array of element pairs sharing an edge."""
        _, ee = self.edges
        flat = ee.ravel()
        owner = np.repeat(np.arange(self.ne), 3)
        order = np.argsort(flat, kind="stable")
        fs, os_ = flat[order], owner[order]
        same = fs[1:] == fs[:-1]
        return np.column_stack([os_[:-1][same], os_[1:][same]])

    def _topological_boundary(self):
        ev, _ = self.edges
        bedges = ev[self.edge_element_counts == 1]
        return np.unique(bedges)

    def region_mask(self, *regions):
        return np.isin(self.element_region, [int(r) for r in regions])

    @property
    def k_mask(self):
        return self.region_mask(Region.DEFECT, Region.LAYER)

    def with_regions(self, element_region, warnings=()):
        return replace(self, element_region=element_region, warnings=tuple(warnings))

    def size_stats(self):
        return {
            "nv": self.nv,
            "ne": self.ne,
            "h_min": float(self.sizes.min()),
            "h_max": float(self.sizes.max()),
            "area": float(self.areas.sum()),
        }


def validate_mesh(mesh, shape_bound=10.0):
    """Check the structural invariants of ``mesh``; return a list of problems."""
    problems = []
    if np.any(mesh.signed_areas <= 0):
        problems.append("non-positive element area")
    total = mesh.areas.sum()
    if abs(total - 1.0) > 1e-12:
        problems.append(f"total area {total!r} != 1")
    counts = mesh.edge_element_counts
    if np.any((counts < 1) | (counts > 2)):
        problems.append("edge shared by more than two elements")
    ev, _ = mesh.edges
    bedges = ev[counts == 1]
    mid = mesh.vertices[bedges].mean(axis=1)
    on_boundary = (
        np.isclose(mid[:, 0], 0) | np.isclose(mid[:, 0], 1)
        | np.isclose(mid[:, 1], 0) | np.isclose(mid[:, 1], 1)
    )
    if not on_boundary.all():
        problems.append("boundary edge inside the domain (non-conforming)")
    x = mesh.vertices
    geo = np.flatnonzero(np.isclose(x[:, 0], 0) | np.isclose(x[:, 0], 1)
                         | np.isclose(x[:, 1], 0) | np.isclose(x[:, 1], 1))
    if not np.array_equal(geo, np.asarray(mesh.boundary_vertices)):
        problems.append("boundary vertex flags do not match the geometric boundary")
    ratio = mesh.h_local / mesh.inradii
    if ratio.max() > shape_bound:
        problems.append(f"shape regularity ratio {ratio.max():.3g} exceeds {shape_bound}")
    return problems


def build_structured_mesh(n, element_cap=DEFAULT_ELEMENT_CAP):
    """Uniform grid of ``n x n`` squares, each split along the (0,0)-(1,1) diagonal.

    >>> build_structured_mesh(4).ne
    32
    """
    if n < 1:
        raise CapacityError(f"subdivision count must be >= 1, got {n}")
    if 2 * n * n > element_cap:
        raise CapacityError(f"{2 * n * n} elements exceed the cap {element_cap}")
    s = np.arange(n + 1) / n
    xx, yy = np.meshgrid(s, s)
    vertices = np.column_stack([xx.ravel(), yy.ravel()])
    i, j = np.meshgrid(np.arange(n), np.arange(n))
    i, j = i.ravel(), j.ravel()
    a = j * (n + 1) + i
    b = a + 1
    c = b + n + 1
    d = a + n + 1
    # Right angle first; the hypotenuse a-c is the refinement edge.
    lower = np.column_stack([b, c, a])
    upper = np.column_stack([d, a, c])
    elements = np.empty((2 * n * n, 3), dtype=np.int64)
    elements[0::2] = lower
    elements[1::2] = upper
    return Mesh(vertices, elements)


def bisect(mesh, marked):
    """Newest-vertex bisection of the ``marked`` elements plus conforming closure.

    Returns a new mesh without region tags.
    """
    marked = np.asarray(marked)
    if marked.dtype == bool:
        marked = np.flatnonzero(marked)
    if len(marked) == 0:
        return Mesh(mesh.vertices, mesh.elements)
    ev, ee = mesh.edges
    cut = np.zeros(len(ev), dtype=bool)
    cut[ee[marked, 0]] = True
    while True:
        touched = cut[ee].any(axis=1) & ~cut[ee[:, 0]]
        if not touched.any():
            break
        cut[ee[touched, 0]] = True

    nv = mesh.nv
    cut_ids = np.flatnonzero(cut)
    mid_of_edge = np.full(len(ev), -1, dtype=np.int64)
    mid_of_edge[cut_ids] = nv + np.arange(len(cut_ids))
    new_vertices = 0.5 * (mesh.vertices[ev[cut_ids, 0]] + mesh.vertices[ev[cut_ids, 1]])
    vertices = np.vstack([mesh.vertices, new_vertices])
    edge_keys = ev[:, 0] * nv + ev[:, 1]

    def midpoint(a, b):
        lo, hi = np.minimum(a, b), np.maximum(a, b)
        keys = lo * nv + hi
        valid = (lo < nv) & (hi < nv)
        pos = np.searchsorted(edge_keys, keys)
        pos = np.minimum(pos, len(edge_keys) - 1)
        found = valid & (edge_keys[pos] == keys)
        return np.where(found, mid_of_edge[pos], -1)

    elements = mesh.elements.copy()
    for _ in range(2):
        m = midpoint(elements[:, 1], elements[:, 2])
        sel = np.flatnonzero(m >= 0)
        if len(sel) == 0:
            break
        p1, p2, p3 = elements[sel].T
        p4 = m[sel]
        first = np.column_stack([p4, p1, p2])
        second = np.column_stack([p4, p3, p1])
        elements[sel] = first
        elements = np.vstack([elements, second])
    return Mesh(vertices, elements)


@dataclass(frozen=True)
class MeshSpec:
    """Parameters for :func:`build_locally_refined_mesh`.

    ``pad`` widens the fine zone around the refinement shapes (default
    ``4 * h_target``) so that a one-layer dilation of ``K0`` stays fine.
    """

    H_target: float
    h_target: float
    defect: DefectGeometry
    grading_ratio: float = 2.0
    root_n: int | None = None
    pad: float | None = None
    element_cap: int = DEFAULT_ELEMENT_CAP

    def __post_init__(self):
        if not (0 < self.h_target <= self.H_target <= 0.25 + 1e-15):
            raise ConfigurationError("need 0 < h_target <= H_target <= 1/4")
        if self.grading_ratio < 2:
            raise ConfigurationError("grading_ratio must be >= 2")

    @property
    def resolved_root(self):
        return self.root_n or math.ceil(1.0 / self.H_target - 1e-9)

    @property
    def resolved_pad(self):
        return 4.0 * self.h_target if self.pad is None else self.pad


def smallest_feature(shape):
    if isinstance(shape, Ellipse):
        return min(shape.axes)
    v = shape.array
    return float(np.hypot(*(np.roll(v, -1, axis=0) - v).T).min())


def refine_to_size(mesh, target_size, grading_ratio=2.0, element_cap=DEFAULT_ELEMENT_CAP):
    """Bisect until ``mesh.sizes <= target_size(mesh)`` elementwise and the
    size ratio between edge neighbors is at most ``grading_ratio``."""
    tol = 1 + 1e-9
    while True:
        sizes = mesh.sizes
        marked = sizes > target_size(mesh) * tol
        nb = mesh.edge_neighbors
        if len(nb):
            a, b = nb[:, 0], nb[:, 1]
            marked[a[sizes[a] > grading_ratio * sizes[b] * tol]] = True
            marked[b[sizes[b] > grading_ratio * sizes[a] * tol]] = True
        if not marked.any():
            return mesh
        mesh = bisect(mesh, marked)
        if mesh.ne > element_cap:
            raise CapacityError(f"refinement exceeds the element cap {element_cap}")


def zone_target(shapes, pad, h_fine, h_coarse):
    """Target-size function: ``h_fine`` on elements that may meet the padded shapes."""

    def target(mesh):
        c = mesh.barycenters
        reach = np.sqrt(((mesh.corners - c[:, None, :]) ** 2).sum(-1)).max(axis=1)
        near = union_distance(shapes, c) <= pad + reach
        return np.where(near, h_fine, h_coarse)

    return target


def build_locally_refined_mesh(spec):
    """Root grid refined to ``H_target`` globally and ``h_target`` near the defect,
    with regions tagged."""
    for s in spec.defect.k0_shapes:
        if smallest_feature(s) < 4 * spec.h_target * (1 - 1e-9):
            raise ConfigurationError(
                f"h_target={spec.h_target} does not resolve shape {s} with 4 elements"
            )
    root = build_structured_mesh(spec.resolved_root, element_cap=spec.element_cap)
    target = zone_target(
        spec.defect.refinement_shapes(), spec.resolved_pad, spec.h_target, spec.H_target
    )
    mesh = refine_to_size(root, target, spec.grading_ratio, spec.element_cap)
    return tag_regions(mesh, spec.defect)


def dilate_defect(mesh, defect_mask):
    """Elements of ``K``: the defect elements plus every element sharing a vertex
    with one. Returns a boolean element mask."""
    defect_mask = np.asarray(defect_mask, dtype=bool)
    if not defect_mask.any():
        raise GeometryError("defect unresolved: no element has its barycenter in K0")
    touched = np.zeros(mesh.nv, dtype=bool)
    touched[mesh.elements[defect_mask].ravel()] = True
    return touched[mesh.elements].any(axis=1)


def tag_regions(mesh, defect):
    """Tag elements as DEFECT (barycenter in closed K0), LAYER (in K minus K0),
    or EXTERIOR."""
    bc = mesh.barycenters
    in_k0 = union_contains(defect.k0_shapes, bc)
    if defect.k_shapes is None:
        in_k = dilate_defect(mesh, in_k0)
    else:
        if not in_k0.any():
            raise GeometryError("defect unresolved: no element has its barycenter in K0")
        in_k = union_contains(defect.k_shapes, bc) | in_k0
    region = np.full(mesh.ne, Region.EXTERIOR, dtype=np.int8)
    region[in_k] = Region.LAYER
    region[in_k0] = Region.DEFECT
    warnings = []
    bset = np.zeros(mesh.nv, dtype=bool)
    bset[mesh.boundary_vertices] = True
    if bset[mesh.elements[in_k]].any():
        msg = "region K reaches the domain boundary"
        logger.warning(msg)
        warnings.append(msg)
    return mesh.with_regions(region, warnings)


def write_mesh(mesh, path):
    """Plain-text export: ``nv ne``, then ``x y bflag`` rows, then ``i j k region``."""
    bflag = np.zeros(mesh.nv, dtype=int)
    bflag[mesh.boundary_vertices] = 1
    lines = [f"{mesh.nv} {mesh.ne}"]
    lines += [f"{x!r} {y!r} {b}" for (x, y), b in zip(mesh.vertices.tolist(), bflag.tolist())]
    lines += [
        f"{i} {j} {k} {r}"
        for (i, j, k), r in zip(mesh.elements.tolist(), mesh.element_region.tolist())
    ]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_mesh(path):
    with open(path) as fh:
        tokens = fh.read().split("\n")
    nv, ne = map(int, tokens[0].split())
    vrows = [t.split() for t in tokens[1 : 1 + nv]]
    erows = [t.split() for t in tokens[1 + nv : 1 + nv + ne]]
    if len(vrows) != nv or len(erows) != ne:
        raise MeshError(f"truncated mesh file {path}")
    vertices = np.array([[float(r[0]), float(r[1])] for r in vrows])
    bflag = np.array([int(r[2]) for r in vrows])
    elements = np.array([[int(r[0]), int(r[1]), int(r[2])] for r in erows], dtype=np.int64)
    region = np.array([int(r[3]) for r in erows], dtype=np.int8)
    return Mesh(vertices, elements, np.flatnonzero(bflag), region)


class PointLocator:
    """Bucket grid over element bounding boxes for point location.

    Among elements containing a point (within ``tol`` in barycentric
    coordinates) the lowest element id wins, which makes on-edge and on-vertex
    ties deterministic.
    """

    def __init__(self, mesh, max_bins=1024):
        self.mesh = mesh
        nb = int(min(max_bins, max(1, math.ceil(1.0 / np.median(mesh.sizes)))))
        self.nb = nb
        p = mesh.corners
        lo = np.clip(np.floor((p.min(axis=1) - 1e-9) * nb).astype(np.int64), 0, nb - 1)
        hi = np.clip(np.floor((p.max(axis=1) + 1e-9) * nb).astype(np.int64), 0, nb - 1)
        nx = hi[:, 0] - lo[:, 0] + 1
        ny = hi[:, 1] - lo[:, 1] + 1
        count = nx * ny
        elem = np.repeat(np.arange(mesh.ne), count)
        local = np.arange(count.sum()) - np.repeat(np.cumsum(count) - count, count)
        bx = lo[elem, 0] + local % nx[elem]
        by = lo[elem, 1] + local // nx[elem]
        bins = by * nb + bx
        order = np.lexsort((elem, bins))
        self.bin_elems = elem[order]
        self.bin_start = np.zeros(nb * nb + 1, dtype=np.int64)
        np.cumsum(np.bincount(bins, minlength=nb * nb), out=self.bin_start[1:])
        a = p[:, 0]
        t = np.stack([p[:, 1] - a, p[:, 2] - a], axis=-1)
        self.origin = a
        self.inv = np.linalg.inv(t)

    def barycentric(self, elems, points):
        rel = points - self.origin[elems]
        l12 = np.einsum("nij,nj->ni", self.inv[elems], rel)
        return np.column_stack([1.0 - l12.sum(axis=1), l12])

    def locate(self, points, tol=1e-12):
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        nb = self.nb
        ij = np.clip(np.floor(pts * nb).astype(np.int64), 0, nb - 1)
        b = ij[:, 1] * nb + ij[:, 0]
        start = self.bin_start[b]
        length = self.bin_start[b + 1] - start
        found = np.full(len(pts), -1, dtype=np.int64)
        for k in range(int(length.max(initial=0))):
            q = np.flatnonzero((found < 0) & (length > k))
            if len(q) == 0:
                break
            cand = self.bin_elems[start[q] + k]
            lam = self.barycentric(cand, pts[q])
            ok = lam.min(axis=1) >= -tol
            found[q[ok]] = cand[ok]
        if np.any(found < 0):
            bad = pts[found < 0][0]
            raise GeometryError(f"point {tuple(bad)} lies outside the mesh")
        return found


def get_locator(mesh):
    """Point locator cached on the (immutable) mesh."""
    loc = mesh.__dict__.get("_locator")
    if loc is None:
        loc = PointLocator(mesh)
        mesh.__dict__["_locator"] = loc
    return loc


def locate_points(mesh, points, tol=1e-12):
    """Containing element id for each point (lowest id on ties)."""
    return get_locator(mesh).locate(points, tol)
