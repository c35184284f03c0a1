import math

import numpy as np
import pytest

from glocal.coefficient import ScalarCoefficient, constant_coefficient, two_scale_coefficient, two_scale_effective
from glocal.errors import fitted_order
from glocal.exceptions import ConfigurationError, GeometryError, GlocalError
from glocal.harness.examples import well_defect
from glocal.homogenize import (
    DIRICHLET,
    PERIODIC,
    CellProblemSpec,
    HmmPolicy,
    assemble_effective_field,
    default_policy,
    e_hmm_report,
    effective_from_field,
    load_effective_field,
    save_effective_field,
    solve_cell_problem,
)
from glocal.mesh import MeshSpec, Region, build_locally_refined_mesh, build_structured_mesh

EPS = 0.04


def laminate(eps=EPS, lo=1.0, hi=4.0):
    """Layers of ``lo`` and ``hi`` stacked along x with period ``eps``."""
    def func(x, y):
        return np.where(np.mod(x / eps, 1.0) < 0.5, lo, hi) + 0 * y
    return ScalarCoefficient(func, lo, hi, eps, "laminate")


def smooth_laminate(eps=EPS):
    tp = 2 * math.pi
    return ScalarCoefficient(lambda x, y: 2 + np.sin(tp * x / eps) + 0 * y, 1.0, 3.0, eps, "smooth")


def test_constant_coefficient_gives_scaled_identity():
    a = ScalarCoefficient(lambda x, y: np.full(np.shape(x), 2.7), 2.7, 2.7, EPS)
    for bc in (PERIODIC, DIRICHLET):
        A = solve_cell_problem(CellProblemSpec((0.5, 0.5), EPS, bc, 16), a)
        np.testing.assert_allclose(A, 2.7 * np.eye(2), atol=1e-10)


def test_laminate_bounds():
    A = solve_cell_problem(CellProblemSpec((0.3, 0.6), EPS, PERIODIC, 32), laminate())
    # Harmonic mean across the layers, arithmetic mean along them.
    np.testing.assert_allclose(A, np.diag([1.6, 2.5]), rtol=1e-2, atol=1e-8)


def test_laminate_cell_refinement_order():
    exact = math.sqrt(3.0)
    errs = []
    ns = (8, 16, 32, 64)
    for n in ns:
        A = solve_cell_problem(CellProblemSpec((0.5, 0.5), EPS, PERIODIC, n), smooth_laminate())
        errs.append(abs(A[0, 0] - exact))
    assert fitted_order([1 / n for n in ns], errs) >= 1.0
    assert errs[-1] < 1e-2 * exact


def test_two_scale_sample_close_to_analytic():
    micro, eff = two_scale_coefficient(EPS), two_scale_effective()
    x = np.array([0.25, 0.25])
    A = solve_cell_problem(CellProblemSpec(tuple(x), EPS, PERIODIC, 32), micro)
    ref = eff(x)
    assert np.linalg.norm(A - ref, 2) <= 0.02 * np.linalg.norm(ref, 2)


def test_cell_tensor_symmetric_positive_and_bounded():
    micro = two_scale_coefficient(EPS)
    for c in ((0.1, 0.7), (0.62, 0.33)):
        A = solve_cell_problem(CellProblemSpec(c, EPS, PERIODIC, 16), micro)
        assert A[0, 1] == A[1, 0]
        lam = np.linalg.eigvalsh(A)
        assert micro.lambda_bound * (1 - 1e-10) <= lam[0]
        assert lam[1] <= micro.Lambda_bound * (1 + 1e-10)


def test_cell_problem_deterministic():
    spec = CellProblemSpec((0.41, 0.58), EPS, DIRICHLET, 40)
    micro = two_scale_coefficient(EPS / 5)
    np.testing.assert_array_equal(solve_cell_problem(spec, micro), solve_cell_problem(spec, micro))


def test_under_resolved_cell_rejected():
    with pytest.raises(ConfigurationError):
        solve_cell_problem(CellProblemSpec((0.5, 0.5), 4 * EPS, PERIODIC, 16), two_scale_coefficient(EPS))


def test_spec_validation_and_degenerate_box():
    with pytest.raises(ConfigurationError):
        CellProblemSpec((0.5, 0.5), 0.0)
    with pytest.raises(ConfigurationError):
        CellProblemSpec((0.5, 0.5), EPS, "neumann")
    with pytest.raises(ConfigurationError):
        CellProblemSpec((0.5, 0.5), EPS, cell_n=4)
    with pytest.raises(GeometryError):
        CellProblemSpec((1.0 + 0.5 * EPS, 0.5), EPS).box()
    x0, y0, x1, y1 = CellProblemSpec((0.0, 0.5), EPS).box()
    assert x0 == 0.0 and x1 == pytest.approx(0.5 * EPS)


def test_default_policy():
    micro = two_scale_coefficient(EPS)
    p = default_policy(micro)
    assert (p.delta, p.bc) == (EPS, PERIODIC)
    q = default_policy(micro, periodic=False)
    assert q.bc == DIRICHLET and q.delta == pytest.approx(5 * EPS)
    with pytest.raises(ConfigurationError):
        default_policy(constant_coefficient(1.0))
    assert default_policy(constant_coefficient(1.0), delta=0.1).delta == 0.1
    with pytest.raises(ConfigurationError):
        HmmPolicy(EPS, sampling="random")


@pytest.fixture(scope="module")
def grid8():
    return build_structured_mesh(8)


def test_patch_with_single_sample_is_constant(grid8):
    micro = two_scale_coefficient(EPS)
    f = assemble_effective_field(grid8, micro, HmmPolicy(EPS, PERIODIC, 32, "patch", 1),
                                 regions=tuple(Region))
    assert f.sampled.all()
    assert np.all(f.samples == f.samples[0])
    ref = solve_cell_problem(CellProblemSpec((0.5, 0.5), EPS, PERIODIC, 32), micro)
    np.testing.assert_array_equal(f.samples[0], ref)


def test_element_sampling_matches_analytic(grid8):
    micro, eff = two_scale_coefficient(EPS), two_scale_effective()
    f = assemble_effective_field(grid8, micro, HmmPolicy(EPS, PERIODIC, 32), regions=tuple(Region))
    all_elems = np.ones(grid8.ne, dtype=bool)
    gap = e_hmm_report(f, eff, grid8, all_elems)
    assert gap <= 0.05 * eff.Lambda_bound
    rel = np.linalg.norm(f.samples - eff(grid8.barycenters), 2, axis=(1, 2)) / np.linalg.norm(
        eff(grid8.barycenters), 2, axis=(1, 2))
    assert rel.max() <= 0.03
    assert f.lambda_bound > 0 and f.Lambda_bound >= f.lambda_bound


def test_bypass_gives_zero_gap():
    m = build_locally_refined_mesh(MeshSpec(1 / 8, 1 / 64, well_defect()))
    eff = two_scale_effective()
    f = effective_from_field(m, eff)
    assert not f.sampled[m.region_mask(Region.DEFECT)].any()
    assert f.sampled[m.region_mask(Region.EXTERIOR, Region.LAYER)].all()
    assert e_hmm_report(f, eff, m, m.region_mask(Region.EXTERIOR)) == 0.0
    q = m.barycenters[:, None, :]
    with pytest.raises(GlocalError):
        f.at_quadrature(m, q)


def test_delta_below_eps_rejected(grid8):
    with pytest.raises(ConfigurationError):
        assemble_effective_field(grid8, two_scale_coefficient(EPS), HmmPolicy(EPS / 2))


def test_cache_round_trip(tmp_path, grid8):
    micro = two_scale_coefficient(EPS)
    pol = HmmPolicy(EPS, PERIODIC, 16, "patch", 2)
    f = assemble_effective_field(grid8, micro, pol, regions=(Region.EXTERIOR,))
    path = tmp_path / "cache.txt"
    save_effective_field(f, path, "two_scale")
    g = load_effective_field(path, grid8, pol, "two_scale")
    np.testing.assert_array_equal(g.samples, f.samples)
    assert load_effective_field(path, grid8, HmmPolicy(EPS, PERIODIC, 32, "patch", 2), "two_scale") is None
    assert load_effective_field(path, grid8, pol, "other") is None
    assert load_effective_field(tmp_path / "missing.txt", grid8, pol, "two_scale") is None
