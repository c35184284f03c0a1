import logging
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from glocal.coefficient import constant_coefficient, hybrid, two_scale_coefficient, two_scale_effective
from glocal.errors import exact_errors, fitted_order
from glocal.exceptions import MeshError
from glocal.fem import (
    RULE3,
    RULE7,
    FeFunction,
    ParabolicProblem,
    TrajectoryDump,
    assemble_load,
    assemble_mass,
    assemble_stiffness,
    backward_euler_march,
    basis_gradients,
    energy,
    interpolate,
    l2_norm,
    local_stiffness,
    project_initial,
    zero_source,
)
from glocal.harness.examples import grad_u0, u0, well_defect
from glocal.mesh import Mesh, MeshSpec, build_locally_refined_mesh, build_structured_mesh, locate_points

UNIT = Mesh(np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]), np.array([[0, 1, 2]]))


@pytest.mark.parametrize("rule,degree", [(RULE3, 2), (RULE7, 5)])
def test_quadrature_exactness(rule, degree):
    lam, w = rule
    pts = lam[:, 1:]  # reference coordinates (x, y) = (lambda_1, lambda_2)
    assert w.sum() == pytest.approx(1.0, abs=1e-12)
    for a in range(degree + 1):
        for b in range(degree + 1 - a):
            exact = math.factorial(a) * math.factorial(b) / math.factorial(a + b + 2)
            approx = 0.5 * np.sum(w * pts[:, 0] ** a * pts[:, 1] ** b)
            assert approx == pytest.approx(exact, rel=1e-12, abs=1e-14)


def test_local_stiffness_unit_triangle():
    K = local_stiffness(UNIT, constant_coefficient(1.0))[0]
    np.testing.assert_allclose(K, 0.5 * np.array([[2, -1, -1], [-1, 1, 0], [-1, 0, 1]]), atol=1e-15)


def test_local_mass_unit_triangle():
    M = assemble_mass(UNIT).to_dense()
    np.testing.assert_allclose(M, 0.5 / 12 * np.array([[2, 1, 1], [1, 2, 1], [1, 1, 2]]), atol=1e-16)


def test_degenerate_element_raises():
    flat = Mesh(np.array([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]]), np.array([[0, 1, 2]]))
    with pytest.raises(MeshError):
        basis_gradients(flat)


@pytest.fixture(scope="module")
def well_mesh():
    return build_locally_refined_mesh(MeshSpec(1 / 8, 1 / 64, well_defect()))


def test_stiffness_kernel_and_symmetry(well_mesh):
    b = hybrid(two_scale_coefficient(0.04), two_scale_effective(), well_mesh)
    K = assemble_stiffness(well_mesh, b)
    assert np.abs(K.row_sums()).max() <= 1e-12 * np.abs(K.values).max()
    assert K.max_asymmetry() == 0.0
    assert K.is_structurally_symmetric()


def test_stiffness_linear_in_coefficient(well_mesh):
    K1 = assemble_stiffness(well_mesh, constant_coefficient(1.0))
    K3 = assemble_stiffness(well_mesh, constant_coefficient(3.0))
    np.testing.assert_allclose(K3.to_dense(), 3.0 * K1.to_dense(), rtol=1e-14, atol=1e-14)


def test_mass_properties(well_mesh):
    M = assemble_mass(well_mesh)
    assert M.values.sum() == pytest.approx(1.0, abs=1e-12)
    assert M.max_asymmetry() == 0.0
    assert np.linalg.eigvalsh(assemble_mass(build_structured_mesh(4)).to_dense()).min() > 0


def test_load_constant_and_zero(well_mesh):
    M = assemble_mass(well_mesh)
    F = assemble_load(well_mesh, lambda x, y, t: np.ones_like(x))
    np.testing.assert_allclose(F, M.row_sums(), rtol=1e-12, atol=1e-16)
    assert F.sum() == pytest.approx(1.0, abs=1e-12)
    assert np.all(assemble_load(well_mesh, zero_source) == 0)


def test_load_of_hat_function_is_mass_column():
    m = build_structured_mesh(6)
    j = 17
    e = np.zeros(m.nv)
    e[j] = 1.0

    def hat(x, y, t):
        pts = np.column_stack([np.ravel(x), np.ravel(y)])
        ids = locate_points(m, pts)
        from glocal.mesh import get_locator
        lam = get_locator(m).barycentric(ids, pts)
        return np.einsum("ni,ni->n", lam, e[m.elements[ids]]).reshape(np.shape(x))

    F = assemble_load(m, hat)
    np.testing.assert_allclose(F, assemble_mass(m).matvec(e), atol=1e-15)


def _problem(mesh, coeff, **kw):
    kw.setdefault("T", 0.1)
    kw.setdefault("dt", 0.01)
    return ParabolicProblem(mesh, coeff, u0=u0, grad_u0=grad_u0, **kw)


def test_dt_must_divide_t():
    with pytest.raises(ValueError):
        _problem(build_structured_mesh(4), constant_coefficient(1.0), T=1.0, dt=0.3)
    with pytest.raises(ValueError):
        _problem(build_structured_mesh(4), constant_coefficient(1.0), dt=-0.1)


def test_projection_reproduces_p1_functions(rng):
    m = build_structured_mesh(8)
    v = rng.standard_normal(m.nv)
    v[m.boundary_vertices] = 0.0
    fe = FeFunction(m, v)
    g = fe.gradients()
    elem = locate_points(m, np.array([[0.3, 0.3]]))  # noqa: F841 -- warms the locator

    def grad(x, y):
        pts = np.stack([np.ravel(x), np.ravel(y)], axis=-1)
        return g[locate_points(m, pts)].reshape(np.shape(x) + (2,))

    # Quadrature points are interior, so the containing element is unique.
    p = ParabolicProblem(m, two_scale_coefficient(0.1), u0=None, grad_u0=grad, T=0.1, dt=0.1)
    U0 = project_initial(p)
    np.testing.assert_allclose(U0.values, v, atol=1e-8)


def test_projection_invariant_under_scaling():
    m = build_structured_mesh(12)
    U1 = project_initial(_problem(m, constant_coefficient(1.0)))
    U2 = project_initial(_problem(m, constant_coefficient(7.5)))
    np.testing.assert_allclose(U1.values, U2.values, atol=1e-9)


def test_projection_gradient_error_first_order():
    fine = build_structured_mesh(128)
    ref = project_initial(_problem(fine, constant_coefficient(1.0)))
    gref = ref.gradients()
    errs, hs = [], []
    for n in (8, 16, 32):
        m = build_structured_mesh(n)
        U0 = project_initial(_problem(m, constant_coefficient(1.0)))
        Pi = interpolate(m, u0)
        # Both are on nested structured meshes: compare gradients on the fine mesh.
        parent = locate_points(m, fine.barycenters)
        d = (U0.gradients() - Pi.gradients())[parent]
        errs.append(math.sqrt((fine.areas * (d**2).sum(1)).sum()) + 0 * gref.sum())
        hs.append(1 / n)
    # The Ritz projection and the interpolant differ by O(h) at most.
    assert all(e2 <= e1 for e1, e2 in zip(errs, errs[1:]))
    e = [exact_errors(project_initial(_problem(build_structured_mesh(n), constant_coefficient(1.0))),
                      u0, grad_u0)[1] for n in (8, 16, 32)]
    assert fitted_order(hs, e) >= 0.95


def test_missing_gradient_logs_warning(caplog):
    m = build_structured_mesh(6)
    p = ParabolicProblem(m, constant_coefficient(1.0), u0=u0, grad_u0=None, T=0.1, dt=0.1)
    with caplog.at_level(logging.WARNING):
        project_initial(p)
    assert "interpolant" in caplog.text


def test_zero_data_stays_zero():
    m = build_structured_mesh(6)
    p = ParabolicProblem(m, constant_coefficient(1.0), source=zero_source, T=0.1, dt=0.02)
    out = backward_euler_march(p, np.zeros(m.nv))
    assert len(out) == 5 and all(np.all(u.values == 0) for u in out)


@given(st.integers(0, 2**31))
def test_stability_random_initial_value(seed):
    rng = np.random.default_rng(seed)
    m = build_structured_mesh(8)
    coeff = two_scale_coefficient(0.1)
    p = ParabolicProblem(m, coeff, source=zero_source, T=0.2, dt=0.01)
    U0 = rng.standard_normal(m.nv)
    U0[m.boundary_vertices] = 0
    norms = [l2_norm(p.mass, U0)]
    energies = [energy(p.stiffness, U0)]
    for U in backward_euler_march(p, U0):
        norms.append(l2_norm(p.mass, U.values))
        energies.append(energy(p.stiffness, U.values))
    assert all(b <= a * (1 + 1e-12) for a, b in zip(norms, norms[1:]))
    assert all(b <= a * (1 + 1e-12) for a, b in zip(energies, energies[1:]))


def test_defining_equation_residual(well_mesh):
    b = hybrid(two_scale_coefficient(0.04), two_scale_effective(), well_mesh)
    p = _problem(well_mesh, b, T=0.06, dt=0.02)
    U0 = project_initial(p)
    S = p.mass.add(p.stiffness, p.dt)
    free = p.free
    prev = U0.values
    for k, U in enumerate(backward_euler_march(p, U0), start=1):
        rhs = p.mass.matvec(prev) + p.dt * assemble_load(well_mesh, p.source, k * p.dt)
        r = (S.matvec(U.values) - rhs)[free]
        assert np.linalg.norm(r) <= 10 * p.tol * np.linalg.norm(rhs[free])
        assert np.all(U.values[well_mesh.boundary_vertices] == 0)
        prev = U.values


def test_separable_heat_solution_converges():
    def exact(t):
        return lambda x, y: math.exp(-2 * math.pi**2 * t) * np.sin(math.pi * x) * np.sin(math.pi * y)

    errs = []
    for n in (8, 16, 32):
        m = build_structured_mesh(n)
        dt = 0.5 / n**2
        T = 0.05
        steps = round(T / dt)
        dt = T / steps
        p = ParabolicProblem(m, constant_coefficient(1.0), source=zero_source, T=T, dt=dt)
        U0 = interpolate(m, exact(0.0))
        U = backward_euler_march(p, U0, keep="last")[-1]
        errs.append(np.abs(U.values - interpolate(m, exact(T)).values).max())
    assert fitted_order([1 / 8, 1 / 16, 1 / 32], errs) >= 1.8


def test_keep_modes_and_dump(tmp_path):
    m = build_structured_mesh(4)
    p = ParabolicProblem(m, constant_coefficient(1.0), T=0.06, dt=0.02)
    U0 = np.zeros(m.nv)
    all_steps = backward_euler_march(p, U0)
    last = backward_euler_march(p, U0, keep="last")
    assert len(all_steps) == 3 and len(last) == 1
    np.testing.assert_array_equal(all_steps[-1].values, last[0].values)
    assert last[0].time == pytest.approx(0.06)
    path = tmp_path / "traj.txt"
    with TrajectoryDump(path) as sink:
        backward_euler_march(p, U0, on_step=sink)
    rows = path.read_text().splitlines()
    assert len(rows) == 4
    k, t, *vals = rows[-1].split()
    assert int(k) == 3 and float(t) == pytest.approx(0.06) and len(vals) == m.nv
    np.testing.assert_array_equal(np.array(vals, dtype=float), last[0].values)


def test_fefunction_shape_check():
    with pytest.raises(ValueError):
        FeFunction(build_structured_mesh(2), np.zeros(3))
