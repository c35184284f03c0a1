"""Effective coefficients from cell problems (heterogeneous multiscale method).

For each sampling point ``x_T`` the cell problem is solved on the box
``x_T + delta * [-1/2, 1/2]^2`` with P1 elements on a structured cell mesh:
find ``w_j`` with ``(a (e_j + grad w_j), grad v) = 0``, either periodic (mean
fixed by pinning one node) or with ``w_j = 0`` on the box boundary. Column
``j`` of the effective tensor is the box average of ``a (e_j + grad w_j)``.
"""

from __future__ import annotations

import logging
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from glocal.coefficient import CoefficientField, element_ids
from glocal.exceptions import ConfigurationError, GeometryError, GlocalError, SolverError
from glocal.fem import basis_gradients, element_tensors
from glocal.linalg import SparseMatrix, cg_solve
from glocal.mesh import Mesh, Region, build_structured_mesh, locate_points

logger = logging.getLogger(__name__)

PERIODIC = "periodic"
DIRICHLET = "dirichlet"


@dataclass(frozen=True)
class CellProblemSpec:
    center: tuple[float, float]
    delta: float
    bc: str = PERIODIC
    cell_n: int = 32

    def __post_init__(self):
        if self.delta <= 0:
            raise ConfigurationError("cell size delta must be positive")
        if self.cell_n < 8:
            raise ConfigurationError("cell_n must be at least 8")
        if self.bc not in (PERIODIC, DIRICHLET):
            raise ConfigurationError(f"unknown cell boundary condition {self.bc!r}")

    def box(self):
        """Cell box clipped to the unit square: ``(x0, y0, x1, y1)``."""
        cx, cy = self.center
        r = 0.5 * self.delta
        x0, y0 = max(cx - r, 0.0), max(cy - r, 0.0)
        x1, y1 = min(cx + r, 1.0), min(cy + r, 1.0)
        if x1 - x0 < 1e-3 * self.delta or y1 - y0 < 1e-3 * self.delta:
            raise GeometryError(f"cell box around {self.center} is degenerate after clipping")
        return x0, y0, x1, y1


class _CellTemplate:
    """Structured unit-square cell mesh and its periodic/Dirichlet dof maps."""

    _cache: dict = {}

    def __init__(self, n):
        ref = build_structured_mesh(n)
        self.n = n
        self.ref = ref
        ij = np.rint(ref.vertices * n).astype(np.int64)
        self.periodic_dof = (ij[:, 1] % n) * n + (ij[:, 0] % n)
        self.boundary = np.asarray(ref.boundary_vertices)
        e = ref.elements
        self.rows = np.repeat(e, 3, axis=1)
        self.cols = np.tile(e, (1, 3))

    @classmethod
    def get(cls, n):
        if n not in cls._cache:
            cls._cache[n] = cls(n)
        return cls._cache[n]


def solve_cell_problem(spec, micro, tol=1e-10):
    """Effective tensor at ``spec.center`` from two cell problems.

    Returns a symmetric ``(2, 2)`` array.
    """
    eps = micro.epsilon
    if eps is not None and spec.cell_n < 8 * spec.delta / eps * (1 - 1e-9):
        raise ConfigurationError(
            f"cell_n={spec.cell_n} under-resolves eps={eps} on a cell of size {spec.delta}"
        )
    tpl = _CellTemplate.get(spec.cell_n)
    x0, y0, x1, y1 = spec.box()
    scale = np.array([x1 - x0, y1 - y0])
    verts = np.array([x0, y0]) + tpl.ref.vertices * scale
    cell = Mesh(verts, tpl.ref.elements, tpl.ref.boundary_vertices)
    g = basis_gradients(cell)
    abar = element_tensors(cell, micro)
    area = cell.areas
    local = area[:, None, None] * np.einsum("eia,eab,ejb->eij", g, abar, g)
    # rhs_j = -(a e_j, grad phi_i)
    flux_unit = area[:, None, None] * np.einsum("eia,eab->eib", g, abar)

    if spec.bc == PERIODIC:
        dof = tpl.periodic_dof
        ndof = spec.cell_n**2
        fixed = np.array([0])
    else:
        dof = np.arange(cell.nv)
        ndof = cell.nv
        fixed = tpl.boundary
    e = dof[cell.elements]
    K = SparseMatrix.from_triplets(
        ndof, np.repeat(e, 3, axis=1), np.tile(e, (1, 3)), local.reshape(-1, 9), symmetric=True
    )
    K = K.eliminate(fixed)
    total = area.sum()
    A = np.empty((2, 2))
    for j in range(2):
        rhs = -np.bincount(e.ravel(), weights=flux_unit[:, :, j].ravel(), minlength=ndof)
        rhs[fixed] = 0.0
        w, rep = cg_solve(K, rhs, tol=tol)
        if not rep.converged:
            raise SolverError(
                f"cell problem at {spec.center} did not converge (residual {rep.residual:.3e})",
                residual=rep.residual,
            )
        grad_w = np.einsum("eid,ei->ed", g, w[e])
        ev = np.zeros(2)
        ev[j] = 1.0
        flux = np.einsum("eab,eb->ea", abar, ev + grad_w)
        A[:, j] = (area[:, None] * flux).sum(axis=0) / total
    asym = abs(A[0, 1] - A[1, 0])
    if asym > 1e-8 * np.abs(A).max():
        warnings.warn(
            f"cell tensor at {spec.center} is asymmetric by {asym:.2e}; cell may be under-resolved",
            stacklevel=2,
        )
    return 0.5 * (A + A.T)


@dataclass(frozen=True)
class HmmPolicy:
    """How effective tensors are sampled on a macro mesh.

    ``sampling="element"`` solves one cell problem per element at its
    barycenter; ``sampling="patch"`` shares one sample among all elements
    whose barycenter falls in the same cell of a ``patch_n x patch_n`` grid.
    """

    delta: float
    bc: str = PERIODIC
    cell_n: int = 32
    sampling: str = "element"
    patch_n: int = 1

    def __post_init__(self):
        if self.sampling not in ("element", "patch"):
            raise ConfigurationError(f"unknown sampling policy {self.sampling!r}")

    def header(self, coefficient_id):
        return (f"# delta={self.delta!r} bc={self.bc} cell_n={self.cell_n} "
                f"sampling={self.sampling} patch_n={self.patch_n} coefficient={coefficient_id}")


def default_policy(micro, periodic=True, delta=None, cell_n=32):
    """Periodic cells of side ``eps`` for periodic media, Dirichlet cells of
    side ``5 eps`` otherwise. An explicit ``delta`` overrides either choice."""
    eps = micro.epsilon
    if eps is None and delta is None:
        raise ConfigurationError("delta is required when the microscale is unknown")
    if periodic and eps is not None:
        return HmmPolicy(delta or eps, PERIODIC, cell_n)
    return HmmPolicy(delta or 5 * eps, DIRICHLET, cell_n)


@dataclass(frozen=True, eq=False)
class EffectiveField(CoefficientField):
    """Piecewise-constant tensor field: one sample per element of ``mesh``.

    Unsampled elements hold NaN and raise if queried.
    """

    mesh: object
    samples: np.ndarray
    policy: HmmPolicy | None = None
    description: str = "effective"
    epsilon: float | None = None

    @property
    def sampled(self):
        return ~np.isnan(self.samples[:, 0, 0])

    @property
    def lambda_bound(self):
        return float(np.linalg.eigvalsh(self.samples[self.sampled]).min())

    @property
    def Lambda_bound(self):
        return float(np.linalg.eigvalsh(self.samples[self.sampled]).max())

    def at_quadrature(self, mesh, qpoints):
        ids = element_ids(mesh)
        if ids is None:
            if mesh.ne != self.mesh.ne:
                raise ConfigurationError("effective field evaluated on a foreign mesh")
            ids = np.arange(mesh.ne)
        vals = self.samples[ids]
        if np.isnan(vals[:, 0, 0]).any():
            bad = ids[np.isnan(vals[:, 0, 0])][0]
            raise GlocalError(f"effective tensor requested on unsampled element {bad}")
        return np.broadcast_to(vals[:, None], qpoints.shape[:-1] + (2, 2)).copy()

    def __call__(self, points):
        pts = np.asarray(points, dtype=float)
        flat = pts.reshape(-1, 2)
        vals = self.samples[locate_points(self.mesh, flat)]
        return vals.reshape(pts.shape[:-1] + (2, 2))


def effective_from_field(mesh, field, regions=(Region.EXTERIOR, Region.LAYER)):
    """Bypass mode: sample a known effective field at element barycenters."""
    samples = np.full((mesh.ne, 2, 2), np.nan)
    mask = mesh.region_mask(*regions)
    samples[mask] = field(mesh.barycenters[mask])
    return EffectiveField(mesh, samples, None, f"sampled({field.description})")


def assemble_effective_field(mesh, micro, policy, threads=1,
                             regions=(Region.EXTERIOR, Region.LAYER)):
    """Solve cell problems for the elements of ``mesh`` in ``regions``."""
    eps = micro.epsilon
    if eps is not None and policy.delta < eps * (1 - 1e-12):
        raise ConfigurationError(f"delta={policy.delta} is smaller than eps={eps}")
    mask = mesh.region_mask(*regions)
    elems = np.flatnonzero(mask)
    bc = mesh.barycenters
    if policy.sampling == "element":
        centers = bc[elems]
        keys = np.arange(len(elems))
    else:
        n = policy.patch_n
        cell = np.clip(np.floor(bc[elems] * n).astype(np.int64), 0, n - 1)
        keys = cell[:, 1] * n + cell[:, 0]
        uk, keys = np.unique(keys, return_inverse=True)
        centers = np.column_stack([(uk % n + 0.5) / n, (uk // n + 0.5) / n])
    results = [None] * len(centers)

    def work(i):
        spec = CellProblemSpec(tuple(centers[i]), policy.delta, policy.bc, policy.cell_n)
        try:
            results[i] = solve_cell_problem(spec, micro)
        except GlocalError as exc:
            owner = elems[np.flatnonzero(keys == i)[0]]
            raise type(exc)(f"element {owner}: {exc}") from exc

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            list(pool.map(work, range(len(centers))))
    else:
        for i in range(len(centers)):
            work(i)
    samples = np.full((mesh.ne, 2, 2), np.nan)
    if len(centers):
        samples[elems] = np.stack(results)[keys]
    return EffectiveField(mesh, samples, policy, f"hmm({micro.description})")


def e_hmm_report(A_H, A, mesh, region):
    """Largest spectral-norm gap ``|A - A_H|`` over sampled barycenters in ``region``."""
    mask = np.asarray(region, dtype=bool) & A_H.sampled
    if not mask.any():
        return 0.0
    diff = A(mesh.barycenters[mask]) - A_H.samples[mask]
    return float(np.linalg.norm(diff, ord=2, axis=(1, 2)).max())


def save_effective_field(field, path, coefficient_id):
    """Cache file: policy header then ``element_id a11 a12 a22`` rows."""
    header = field.policy.header(coefficient_id) if field.policy else f"# bypass coefficient={coefficient_id}"
    lines = [header, f"# ne={field.mesh.ne}"]
    for t in np.flatnonzero(field.sampled):
        a = field.samples[t]
        lines.append(f"{t} {float(a[0, 0])!r} {float(a[0, 1])!r} {float(a[1, 1])!r}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_effective_field(path, mesh, policy, coefficient_id):
    """Load a cached field, or return ``None`` when the header does not match."""
    try:
        with open(path) as fh:
            lines = fh.read().splitlines()
    except FileNotFoundError:
        return None
    if len(lines) < 2 or lines[0] != policy.header(coefficient_id) or lines[1] != f"# ne={mesh.ne}":
        return None
    samples = np.full((mesh.ne, 2, 2), np.nan)
    for row in lines[2:]:
        t, a11, a12, a22 = row.split()
        samples[int(t)] = [[float(a11), float(a12)], [float(a12), float(a22)]]
    return EffectiveField(mesh, samples, policy, f"hmm(cached {coefficient_id})")
