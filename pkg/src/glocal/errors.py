"""Mesh-to-mesh transfer, relative region errors and convergence orders."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from glocal.exceptions import DegenerateReferenceError, GlocalError
from glocal.fem import RULE7, FeFunction, basis_gradients, quadrature_points
from glocal.mesh import get_locator, locate_points

GLOBAL_MINUS_K = "global_minus_K"
DEFECT = "defect"


def transfer_to_fine(coarse, fine_mesh):
    """Evaluate the coarse P1 function at the fine vertices.

    Exact (up to rounding) when ``fine_mesh`` refines ``coarse.mesh``.
    """
    cm = coarse.mesh
    pts = fine_mesh.vertices
    loc = get_locator(cm)
    elem = loc.locate(pts)
    lam = loc.barycentric(elem, pts)
    vals = np.einsum("ni,ni->n", lam, coarse.values[cm.elements[elem]])
    return FeFunction(fine_mesh, vals, coarse.time)


def parent_elements(coarse_mesh, fine_mesh):
    """Coarse element containing each fine element's barycenter."""
    return locate_points(coarse_mesh, fine_mesh.barycenters)


def l2_squared(mesh, values):
    """Per-element ``||v||^2_{L2(T)}`` for a P1 function (exact)."""
    v = values[mesh.elements]
    return mesh.areas * ((v * v).sum(axis=1) + v.sum(axis=1) ** 2) / 12.0


def h1_squared(mesh, values):
    """Per-element ``||grad v||^2_{L2(T)}``."""
    g = np.einsum("eid,ei->ed", basis_gradients(mesh), values[mesh.elements])
    return mesh.areas * (g * g).sum(axis=1)


@dataclass
class RegionError:
    e0: float
    e1: float
    region: str
    H: float | None = None
    h: float | None = None
    dt: float | None = None


def region_relative_errors(u_ref, u_num, region, label=GLOBAL_MINUS_K, **level):
    """Relative L2 and H1-seminorm errors of ``u_num`` against ``u_ref`` on the
    elements selected by the boolean mask ``region``."""
    mesh = u_ref.mesh
    if u_num.mesh is not mesh and u_num.mesh.nv != mesh.nv:
        raise GlocalError("region errors need both functions on the same mesh")
    mask = np.asarray(region, dtype=bool)
    if not mask.any():
        raise GlocalError(f"region {label!r} is empty")
    diff = u_num.values - u_ref.values
    num0 = l2_squared(mesh, diff)[mask].sum()
    den0 = l2_squared(mesh, u_ref.values)[mask].sum()
    num1 = h1_squared(mesh, diff)[mask].sum()
    den1 = h1_squared(mesh, u_ref.values)[mask].sum()
    if den0 <= 0 or den1 <= 0:
        raise DegenerateReferenceError(f"reference has zero norm on region {label!r}")
    return RegionError(math.sqrt(num0 / den0), math.sqrt(num1 / den1), label, **level)


def exact_errors(fe, u, grad_u, rule=RULE7):
    """Absolute L2 and H1-seminorm errors against closed-form ``u`` and ``grad_u``."""
    mesh = fe.mesh
    q, w = quadrature_points(mesh, rule)
    lam = rule[0]
    uh = np.einsum("qi,ei->eq", lam, fe.values[mesh.elements])
    gh = fe.gradients()
    eu = uh - u(q[..., 0], q[..., 1])
    eg = gh[:, None, :] - grad_u(q[..., 0], q[..., 1])
    e0 = np.sqrt((mesh.areas * (w * eu * eu).sum(axis=1)).sum())
    e1 = np.sqrt((mesh.areas * (w * (eg * eg).sum(-1)).sum(axis=1)).sum())
    return float(e0), float(e1)


@dataclass
class ConvergenceTable:
    """Rows ``(parameter, error, order)``; the first order is ``None``."""

    rows: list = field(default_factory=list)
    axis: str = "H"

    @property
    def orders(self):
        return [r[2] for r in self.rows[1:]]


def convergence_orders(pairs, axis="H"):
    """``order_i = log(e_{i-1}/e_i) / log(p_{i-1}/p_i)`` for decreasing parameters."""
    pairs = [(float(p), float(e)) for p, e in pairs]
    rows = []
    for i, (p, e) in enumerate(pairs):
        if p <= 0 or e <= 0:
            raise ValueError("parameters and errors must be positive")
        if i == 0:
            rows.append((p, e, None))
            continue
        pp, ep = pairs[i - 1]
        if not p < pp:
            raise ValueError("parameters must be strictly decreasing")
        rows.append((p, e, math.log(ep / e) / math.log(pp / p)))
    return ConvergenceTable(rows, axis)


def fitted_order(params, errs):
    """Least-squares slope of ``log(err)`` against ``log(param)``."""
    x = np.log(np.asarray(params, dtype=float))
    y = np.log(np.asarray(errs, dtype=float))
    return float(np.polyfit(x, y, 1)[0])


def eta_K(area):
    """Pollution factor ``sqrt(|K| |log |K||)`` of a region of measure ``area``."""
    if not 0 < area < 1:
        raise ValueError(f"area must lie in (0, 1), got {area}")
    return math.sqrt(area * abs(math.log(area)))
