"""P1 finite elements: assembly, elliptic projection and backward Euler.

Quadrature uses the interior three-point rule (barycentric points
``(2/3, 1/6, 1/6)`` and permutations), exact for quadratics. Its points never
sit on element edges, so coefficients that jump across mesh lines are sampled
from the correct side.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from glocal.exceptions import MeshError, SolverError
from glocal.linalg import SparseMatrix, cg_solve, make_preconditioner

logger = logging.getLogger(__name__)

RULE3 = (np.array([[2 / 3, 1 / 6, 1 / 6], [1 / 6, 2 / 3, 1 / 6], [1 / 6, 1 / 6, 2 / 3]]),
         np.full(3, 1 / 3))

# Seven-point degree-5 rule, used for errors against closed-form functions.
_a1, _b1 = 0.059715871789770, 0.470142064105115
_a2, _b2 = 0.797426985353087, 0.101286507323456
RULE7 = (
    np.array([
        [1 / 3, 1 / 3, 1 / 3],
        [_a1, _b1, _b1], [_b1, _a1, _b1], [_b1, _b1, _a1],
        [_a2, _b2, _b2], [_b2, _a2, _b2], [_b2, _b2, _a2],
    ]),
    np.array([0.225] + [0.132394152788506] * 3 + [0.125939180544827] * 3),
)


def quadrature_points(mesh, rule=RULE3):
    """Physical quadrature points ``(ne, nq, 2)`` and reference weights ``(nq,)``
    summing to one (multiply by the element area)."""
    lam, w = rule
    return np.einsum("qi,eid->eqd", lam, mesh.corners), w


def basis_gradients(mesh):
    """Constant gradients of the three P1 hat functions, shape ``(ne, 3, 2)``."""
    p = mesh.corners
    area2 = mesh.signed_areas * 2.0
    if np.any(area2 <= 0):
        bad = int(np.flatnonzero(area2 <= 0)[0])
        raise MeshError(f"element {bad} has non-positive area")
    # grad(lambda_i) = rot90(edge opposite to i) / (2 |T|)
    g = np.empty_like(p)
    for i in range(3):
        e = p[:, (i + 2) % 3] - p[:, (i + 1) % 3]
        g[:, i, 0] = -e[:, 1]
        g[:, i, 1] = e[:, 0]
    return g / area2[:, None, None]


def _assemble(mesh, local, symmetric=True):
    e = mesh.elements
    rows = np.repeat(e, 3, axis=1)
    cols = np.tile(e, (1, 3))
    return SparseMatrix.from_triplets(mesh.nv, rows, cols, local.reshape(len(e), 9), symmetric)


def element_tensors(mesh, coeff, rule=RULE3):
    """Quadrature average of the coefficient on each element, ``(ne, 2, 2)``."""
    q, w = quadrature_points(mesh, rule)
    a = coeff.at_quadrature(mesh, q)
    return np.einsum("q,eqij->eij", w, a)


def local_stiffness(mesh, coeff):
    g = basis_gradients(mesh)
    abar = element_tensors(mesh, coeff)
    return mesh.areas[:, None, None] * np.einsum("eia,eab,ejb->eij", g, abar, g)


def assemble_stiffness(mesh, coeff):
    """Stiffness matrix of ``(coeff grad u, grad v)`` without boundary conditions."""
    return _assemble(mesh, local_stiffness(mesh, coeff))


MASS_REF = (np.ones((3, 3)) + np.eye(3)) / 12.0


def assemble_mass(mesh):
    """Consistent P1 mass matrix."""
    local = mesh.areas[:, None, None] * MASS_REF
    return _assemble(mesh, local)


def assemble_load(mesh, f, t=0.0, rule=RULE3, q=None):
    """Load vector ``(f(., t), phi_i)``; ``f(x, y, t)`` is vectorized.

    ``q`` may carry precomputed quadrature points for repeated calls.
    """
    lam, w = rule
    if q is None:
        q, _ = quadrature_points(mesh, rule)
    fv = np.broadcast_to(f(q[..., 0], q[..., 1], t), q.shape[:-1])
    local = mesh.areas[:, None] * np.einsum("q,eq,qi->ei", w, fv, lam)
    return np.bincount(mesh.elements.ravel(), weights=local.ravel(), minlength=mesh.nv)


@dataclass
class FeFunction:
    """Piecewise linear function given by its nodal values on ``mesh``."""

    mesh: object
    values: np.ndarray
    time: float | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.mesh.nv,):
            raise ValueError(f"expected {self.mesh.nv} nodal values, got {self.values.shape}")

    def gradients(self):
        """Elementwise constant gradient, ``(ne, 2)``."""
        return np.einsum("eid,ei->ed", basis_gradients(self.mesh), self.values[self.mesh.elements])


def interpolate(mesh, func):
    """Nodal interpolant of ``func(x, y)``."""
    x = mesh.vertices
    return FeFunction(mesh, np.broadcast_to(func(x[:, 0], x[:, 1]), (mesh.nv,)).astype(float))


def zero_source(x, y, t):
    return np.zeros(np.broadcast(x, y).shape)


def unit_source(x, y, t):
    return np.ones(np.broadcast(x, y).shape)


@dataclass
class ParabolicProblem:
    """``u_t - div(b grad u) = f`` on the unit square, ``u = 0`` on the boundary.

    ``u0(x, y)`` is the initial value and ``grad_u0(x, y)`` its gradient as a
    ``(..., 2)`` array; without ``grad_u0`` the gradient of the nodal
    interpolant is used for the initial projection.
    """

    mesh: object
    coefficient: object
    source: object = unit_source
    u0: object = None
    grad_u0: object = None
    T: float = 1.0
    dt: float = 0.02
    tol: float = 1e-10
    precond: str = "jacobi"
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        m = self.T / self.dt
        if round(m) < 1 or abs(m - round(m)) > 1e-9 * max(1.0, m):
            raise ValueError(f"T/dt = {m} is not a positive integer")

    @property
    def steps(self):
        return int(round(self.T / self.dt))

    @property
    def mass(self):
        if "M" not in self._cache:
            self._cache["M"] = assemble_mass(self.mesh)
        return self._cache["M"]

    @property
    def stiffness(self):
        if "K" not in self._cache:
            self._cache["K"] = assemble_stiffness(self.mesh, self.coefficient)
        return self._cache["K"]

    @property
    def free(self):
        mask = np.ones(self.mesh.nv, dtype=bool)
        mask[self.mesh.boundary_vertices] = False
        return mask


def initial_projection_rhs(problem):
    mesh = problem.mesh
    if problem.grad_u0 is None:
        logger.warning("no closed-form grad u0; using the gradient of its interpolant")
        g = interpolate(mesh, problem.u0).gradients()
        q, w = quadrature_points(mesh)
        a = problem.coefficient.at_quadrature(mesh, q)
        flux = np.einsum("q,eqij,ej->ei", w, a, g)
    else:
        q, w = quadrature_points(mesh)
        a = problem.coefficient.at_quadrature(mesh, q)
        gu = problem.grad_u0(q[..., 0], q[..., 1])
        flux = np.einsum("q,eqij,eqj->ei", w, a, gu)
    local = mesh.areas[:, None] * np.einsum("ed,eid->ei", flux, basis_gradients(mesh))
    return np.bincount(mesh.elements.ravel(), weights=local.ravel(), minlength=mesh.nv)


def project_initial(problem, tol=None):
    """Elliptic projection: ``(b grad U0, grad V) = (b grad u0, grad V)`` for all V."""
    tol = problem.tol if tol is None else tol
    bdofs = problem.mesh.boundary_vertices
    K = problem.stiffness.eliminate(bdofs)
    rhs = initial_projection_rhs(problem)
    rhs[bdofs] = 0.0
    x, rep = cg_solve(K, rhs, tol=tol, precond=problem.precond)
    if not rep.converged:
        raise SolverError(f"initial projection did not converge (residual {rep.residual:.3e})",
                          residual=rep.residual)
    x[bdofs] = 0.0
    return FeFunction(problem.mesh, x, 0.0)


class TrajectoryDump:
    """Writes one text row ``k t_k v_0 ... v_{nv-1}`` per time step."""

    def __init__(self, path):
        self.fh = open(path, "w")

    def __call__(self, k, t, values):
        self.fh.write(f"{k} {t!r} " + " ".join(repr(v) for v in values.tolist()) + "\n")

    def close(self):
        self.fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def backward_euler_march(problem, U0, keep="all", tol=None, on_step=None):
    """March ``(M + dt K) U_k = M U_{k-1} + dt F_k`` from ``U0`` to ``T``.

    Parameters
    ----------
    keep : {"all", "last"}
        Return every step ``U_1 .. U_m`` or only ``[U_m]``.
    on_step : callable, optional
        ``on_step(k, t_k, values)`` after each step (also for ``k = 0``).
    """
    tol = problem.tol if tol is None else tol
    dt = problem.dt
    M, K = problem.mass, problem.stiffness
    bdofs = problem.mesh.boundary_vertices
    S = M.add(K, dt).eliminate(bdofs)
    precond = make_preconditioner(problem.precond, S)
    u = np.array(U0.values if isinstance(U0, FeFunction) else U0, dtype=float)
    if on_step is not None:
        on_step(0, 0.0, u)
    q, _ = quadrature_points(problem.mesh)
    out = []
    for k in range(1, problem.steps + 1):
        t = k * dt
        F = assemble_load(problem.mesh, problem.source, t, q=q)
        rhs = M.matvec(u) + dt * F
        rhs[bdofs] = 0.0
        u, rep = cg_solve(S, rhs, tol=tol, precond=precond, x0=u)
        if not rep.converged:
            raise SolverError(
                f"backward Euler step {k} did not converge (residual {rep.residual:.3e})",
                residual=rep.residual, step=k,
            )
        if on_step is not None:
            on_step(k, t, u)
        if keep == "all" or k == problem.steps:
            out.append(FeFunction(problem.mesh, u.copy(), t))
    return out


def l2_norm(M, values):
    return math.sqrt(max(float(values @ M.matvec(values)), 0.0))


def energy(K, values):
    return float(values @ K.matvec(values))
