"""Tensor-valued diffusion coefficients.

Every field maps an array of points of shape ``(..., 2)`` to symmetric
tensors of shape ``(..., 2, 2)``. Fields tied to a mesh (the hybrid and the
piecewise-constant effective field) also implement :meth:`at_quadrature`,
which the assembler calls with per-element quadrature points.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from glocal.exceptions import ConfigurationError, EllipticityError
from glocal.geometry import union_contains
from glocal.mesh import Region, locate_points

IDENTITY = np.eye(2)


class CoefficientField:
    """Base class. Subclasses implement :meth:`__call__`."""

    lambda_bound: float
    Lambda_bound: float
    epsilon: float | None = None
    description: str = ""

    def __call__(self, points):
        raise NotImplementedError

    def at_quadrature(self, mesh, qpoints):
        """Tensors at ``qpoints`` of shape ``(ne, nq, 2)`` on ``mesh``."""
        return self(qpoints)


@dataclass(frozen=True, eq=False)
class ScalarCoefficient(CoefficientField):
    """``func(x) * I`` for a vectorized scalar function ``func``."""

    func: object
    lambda_bound: float
    Lambda_bound: float
    epsilon: float | None = None
    description: str = ""

    def scalar(self, points):
        pts = np.asarray(points, dtype=float)
        return np.broadcast_to(self.func(pts[..., 0], pts[..., 1]), pts.shape[:-1])

    def __call__(self, points):
        return self.scalar(points)[..., None, None] * IDENTITY


@dataclass(frozen=True, eq=False)
class TensorCoefficient(CoefficientField):
    """Spatially constant symmetric tensor."""

    tensor: np.ndarray
    description: str = ""
    epsilon: float | None = None

    def __post_init__(self):
        t = np.asarray(self.tensor, dtype=float)
        t = 0.5 * (t + t.T)
        object.__setattr__(self, "tensor", t)

    @property
    def lambda_bound(self):
        return float(np.linalg.eigvalsh(self.tensor)[0])

    @property
    def Lambda_bound(self):
        return float(np.linalg.eigvalsh(self.tensor)[-1])

    def __call__(self, points):
        pts = np.asarray(points, dtype=float)
        return np.broadcast_to(self.tensor, pts.shape[:-1] + (2, 2)).copy()


def constant_coefficient(c):
    if c <= 0:
        raise EllipticityError(f"constant coefficient must be positive, got {c}")
    c = float(c)
    return ScalarCoefficient(lambda x, y: np.full(np.shape(x), c), c, c, None, f"constant:{c!r}")


def _check_two_scale(R1, R2):
    if not R1 > abs(R2):
        raise EllipticityError(f"need R1 > |R2| for ellipticity, got R1={R1}, R2={R2}")


def two_scale_coefficient(eps, R1=2.5, R2=1.5):
    """Oscillating coefficient with a smooth modulation and period ``eps``."""
    _check_two_scale(R1, R2)
    if eps <= 0:
        raise ConfigurationError("eps must be positive")
    tp = 2.0 * math.pi

    def func(x, y):
        slow = (R1 + R2 * np.sin(tp * x)) * (R1 + R2 * np.cos(tp * y))
        fast = (R1 + R2 * np.sin(tp * x / eps)) * (R1 + R2 * np.sin(tp * y / eps))
        return slow / fast

    r = abs(R2)
    return ScalarCoefficient(
        func,
        (R1 - r) ** 2 / (R1 + r) ** 2,
        (R1 + r) ** 2 / (R1 - r) ** 2,
        eps,
        f"two_scale(eps={eps}, R1={R1}, R2={R2})",
    )


def two_scale_effective(R1=2.5, R2=1.5):
    """Closed-form homogenized tensor of :func:`two_scale_coefficient`."""
    _check_two_scale(R1, R2)
    tp = 2.0 * math.pi
    denom = R1 * math.sqrt(R1 * R1 - R2 * R2)

    def func(x, y):
        return (R1 + R2 * np.sin(tp * x)) * (R1 + R2 * np.cos(tp * y)) / denom

    r = abs(R2)
    return ScalarCoefficient(
        func, (R1 - r) ** 2 / denom, (R1 + r) ** 2 / denom, None,
        f"two_scale_effective(R1={R1}, R2={R2})",
    )


def rough_inclusion(x, y):
    """Discontinuous coefficient used inside the defect when there is no scale
    separation (sum of cosines of floor functions)."""
    total = np.full(np.broadcast(x, y).shape, 3.0)
    for j in range(5):
        for i in range(1, j + 1):
            arg = (np.floor(8.0 * (i * y - x / (i + 1)))
                   + np.floor(150.0 * i * x) + np.floor(150.0 * y))
            total = total + np.cos(arg) / (7.0 * (j + 1))
    return total


def oscillating_background(eps):
    tp = 2.0 * math.pi

    def func(x, y):
        return 2.1 + np.cos(tp * x / eps) * np.cos(tp * y / eps) + np.sin(4.0 * x**2 * y**2)

    return func


def no_scale_sep_coefficient(eps, defect):
    """Rough inclusion inside ``K0``, periodic background of period ``eps`` outside."""
    if eps <= 0:
        raise ConfigurationError("eps must be positive")
    background = oscillating_background(eps)
    shapes = defect.k0_shapes

    def func(x, y):
        pts = np.stack(np.broadcast_arrays(x, y), axis=-1)
        inside = union_contains(shapes, pts.reshape(-1, 2)).reshape(pts.shape[:-1])
        return np.where(inside, rough_inclusion(x, y), background(x, y))

    amp = sum(j / (j + 1) for j in range(5)) / 7.0
    # sin(4 x^2 y^2) on the unit square is smallest at x = y = 1.
    lo = min(3.0 - amp, 1.1 + math.sin(4.0))
    hi = max(3.0 + amp, 4.1)
    return ScalarCoefficient(func, lo, hi, eps, f"no_scale_sep(eps={eps})")


@dataclass(frozen=True, eq=False)
class HybridField(CoefficientField):
    """``rho * micro + (1 - rho) * macro`` with ``rho`` the indicator of ``K``.

    ``rho_mode="ramp"`` uses instead a continuous piecewise linear ``rho``
    equal to 1 at vertices of defect elements and 0 at all other vertices, so
    it only varies on the layer ``K minus K0``.
    """

    micro: CoefficientField
    macro: CoefficientField
    mesh: object
    rho_mode: str = "indicator"
    description: str = field(default="hybrid")

    def __post_init__(self):
        if not self.mesh.k_mask.any():
            raise ConfigurationError("hybrid coefficient needs a nonempty region K")
        if self.rho_mode not in ("indicator", "ramp"):
            raise ConfigurationError(f"unknown rho mode {self.rho_mode!r}")

    @property
    def lambda_bound(self):
        return min(self.micro.lambda_bound, self.macro.lambda_bound)

    @property
    def Lambda_bound(self):
        return max(self.micro.Lambda_bound, self.macro.Lambda_bound)

    @property
    def epsilon(self):
        return self.micro.epsilon

    def nodal_rho(self):
        if self.rho_mode == "indicator":
            raise ConfigurationError("indicator rho has no nodal representation")
        rho = np.zeros(self.mesh.nv)
        rho[self.mesh.elements[self.mesh.region_mask(Region.DEFECT)].ravel()] = 1.0
        return rho

    def at_quadrature(self, mesh, qpoints):
        ids = element_ids(mesh)
        if ids is None and mesh.ne != self.mesh.ne:
            raise ConfigurationError("hybrid coefficient evaluated on a foreign mesh")
        rho = self.rho_at_quadrature(qpoints, ids)
        out = np.zeros(qpoints.shape[:-1] + (2, 2))
        need_micro = (rho > 0).any(axis=1)
        need_macro = (rho < 1).any(axis=1)
        micro = np.zeros_like(out)
        macro = np.zeros_like(out)
        if need_micro.any():
            micro[need_micro] = self.micro.at_quadrature(
                subset(mesh, need_micro), qpoints[need_micro])
        if need_macro.any():
            macro[need_macro] = self.macro.at_quadrature(
                subset(mesh, need_macro), qpoints[need_macro])
        r = rho[..., None, None]
        out = np.where(r >= 1.0, micro, np.where(r <= 0.0, macro, r * micro + (1.0 - r) * macro))
        return out

    def rho_at_quadrature(self, qpoints, ids=None):
        """``rho`` at element quadrature points, shape ``(ne, nq)``."""
        mesh = self.mesh
        ids = np.arange(mesh.ne) if ids is None else ids
        nq = qpoints.shape[1]
        if self.rho_mode == "indicator":
            return np.repeat(mesh.k_mask[ids].astype(float)[:, None], nq, axis=1)
        lam = barycentric(mesh.corners[ids], qpoints)
        return np.einsum("eqi,ei->eq", lam, self.nodal_rho()[mesh.elements[ids]])

    def __call__(self, points):
        pts = np.asarray(points, dtype=float)
        flat = pts.reshape(-1, 2)
        ids = locate_points(self.mesh, flat)
        out = self.at_quadrature(ElementSubset(self.mesh, ids), flat[:, None, :])[:, 0]
        return out.reshape(pts.shape[:-1] + (2, 2))


class ElementSubset:
    """A mesh restricted to a list of element ids (repeats allowed)."""

    def __init__(self, mesh, ids):
        self.base = mesh
        self.ids = np.asarray(ids, dtype=np.int64)
        self.ne = len(self.ids)

    @property
    def corners(self):
        return self.base.corners[self.ids]


def element_ids(mesh):
    """Element ids of ``mesh`` in its base mesh, or ``None`` for a full mesh."""
    return mesh.ids if isinstance(mesh, ElementSubset) else None


def subset(mesh, rows):
    if isinstance(mesh, ElementSubset):
        return ElementSubset(mesh.base, mesh.ids[rows])
    return ElementSubset(mesh, np.flatnonzero(rows))


def hybrid(micro, macro, mesh, rho_mode="indicator"):
    """Hybrid coefficient on ``mesh`` whose ``K`` is the tagged DEFECT+LAYER set."""
    return HybridField(micro, macro, mesh, rho_mode, f"hybrid({micro.description} | {macro.description})")


def barycentric(corners, points):
    """Barycentric coordinates of ``points (ne, nq, 2)`` in triangles ``corners (ne, 3, 2)``."""
    a = corners[:, 0]
    t = np.stack([corners[:, 1] - a, corners[:, 2] - a], axis=-1)
    rel = points - a[:, None, :]
    inv = np.linalg.inv(t)
    l12 = np.einsum("eij,eqj->eqi", inv, rel)
    return np.concatenate([1.0 - l12.sum(-1, keepdims=True), l12], axis=-1)


def probe_ellipticity(field, n=100):
    """Smallest ellipticity margins over an ``n x n`` probe grid.

    Returns ``(min_lower, min_upper)`` where ``min_lower = min xi.a xi - lambda|xi|^2``
    and ``min_upper = min xi.a xi - |a xi|^2 / Lambda`` over probe directions.
    Both are non-negative for a field satisfying its bounds.
    """
    s = (np.arange(n) + 0.5) / n
    xx, yy = np.meshgrid(s, s)
    pts = np.column_stack([xx.ravel(), yy.ravel()])
    a = field(pts)
    dirs = np.array([[1.0, 0.0], [0.0, 1.0], [1 / math.sqrt(2), 1 / math.sqrt(2)]])
    lower, upper = np.inf, np.inf
    for xi in dirs:
        axi = a @ xi
        q = axi @ xi
        lower = min(lower, float((q - field.lambda_bound).min()))
        upper = min(upper, float((q - (axi * axi).sum(-1) / field.Lambda_bound).min()))
    return lower, upper


def min_eigenvalue(field, n=100):
    s = (np.arange(n) + 0.5) / n
    xx, yy = np.meshgrid(s, s)
    pts = np.column_stack([xx.ravel(), yy.ravel()])
    return float(np.linalg.eigvalsh(field(pts)).min())


def coefficient_from_id(name, eps=None, R1=2.5, R2=1.5, defect=None):
    """Named presets: ``two_scale``, ``two_scale_effective``, ``no_scale_sep``,
    ``constant:<value>``."""
    if name == "two_scale":
        return two_scale_coefficient(eps, R1, R2)
    if name == "two_scale_effective":
        return two_scale_effective(R1, R2)
    if name == "no_scale_sep":
        if defect is None:
            raise ConfigurationError("no_scale_sep needs a defect geometry")
        return no_scale_sep_coefficient(eps, defect)
    if name.startswith("constant:"):
        try:
            value = float(name.split(":", 1)[1])
        except ValueError as exc:
            raise ConfigurationError(f"bad constant coefficient id {name!r}") from exc
        return constant_coefficient(value)
    raise ConfigurationError(f"unknown coefficient id {name!r}")
