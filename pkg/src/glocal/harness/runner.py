"""Sweep driver: hybrid solves per level, reference solves and error tables."""

from __future__ import annotations

import hashlib
import logging
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from glocal.coefficient import hybrid
from glocal.errors import (
    DEFECT,
    GLOBAL_MINUS_K,
    convergence_orders,
    eta_K,
    fitted_order,
    parent_elements,
    region_relative_errors,
    transfer_to_fine,
)
from glocal.exceptions import ConfigurationError, GlocalError
from glocal.fem import FeFunction, ParabolicProblem, TrajectoryDump, backward_euler_march, project_initial
from glocal.homogenize import (
    HmmPolicy,
    assemble_effective_field,
    default_policy,
    e_hmm_report,
    effective_from_field,
)
from glocal.harness.examples import coefficients, grad_u0, source, u0
from glocal.mesh import MeshSpec, Region, build_locally_refined_mesh

logger = logging.getLogger(__name__)

COLUMNS = ("e0_global", "e1_global", "e0_defect", "e1_defect")


@dataclass
class ExampleSetup:
    meshes: list
    micro: object
    effective: object
    defect: object


@dataclass
class LevelResult:
    level: int
    param: float
    H: float
    h: float
    dt: float
    errors: dict = field(default_factory=dict)
    e_hmm: float = math.nan
    eta_K: float = math.nan
    seconds: float = 0.0
    failure: str | None = None
    warnings: tuple = ()

    @property
    def ok(self):
        return self.failure is None


@dataclass
class ErrorReport:
    axis: str
    levels: list = field(default_factory=list)
    name: str = "experiment"

    @property
    def complete(self):
        return all(lv.ok for lv in self.levels)

    def column(self, name):
        return [(lv.param, lv.errors[name]) for lv in self.levels if lv.ok]

    def orders(self, name):
        """Successive orders aligned with ``levels`` (``None`` where undefined)."""
        out = [None] * len(self.levels)
        prev = None
        for i, lv in enumerate(self.levels):
            if not lv.ok:
                prev = None
                continue
            if prev is not None:
                p = self.levels[prev]
                out[i] = convergence_orders(
                    [(p.param, p.errors[name]), (lv.param, lv.errors[name])], self.axis
                ).orders[0]
            prev = i
        return out

    def fitted(self, name, last=None):
        pairs = self.column(name)
        if last is not None:
            pairs = pairs[-last:]
        return fitted_order(*zip(*pairs))


def level_mesh(config, H, h):
    spec = MeshSpec(H, h, config.defect, config.grading_ratio, config.resolved_root,
                    config.pad, config.element_cap)
    return build_locally_refined_mesh(spec)


def reference_mesh(config):
    ref = config.reference
    spec = MeshSpec(ref.far, ref.h, config.defect, config.grading_ratio, config.resolved_root,
                    ref.pad, config.element_cap)
    return build_locally_refined_mesh(spec)


def effective_field(config, mesh, micro, analytic):
    """``A_H`` on ``mesh``: the analytic tensor or HMM samples."""
    eff = config.effective
    if eff.mode == "analytic":
        if analytic is None:
            raise ConfigurationError(f"{config.example} has no analytic effective tensor")
        return analytic
    if eff.delta is None and eff.bc is None:
        policy = default_policy(micro, cell_n=eff.cell_n)
    else:
        base = default_policy(micro, periodic=(eff.bc or "periodic") == "periodic",
                              delta=eff.delta, cell_n=eff.cell_n)
        policy = HmmPolicy(base.delta, base.bc, eff.cell_n, eff.sampling, eff.patch_n)
    return assemble_effective_field(mesh, micro, policy)


def build_example(config):
    """Level meshes and coefficients for ``config``."""
    micro, analytic = coefficients(config)
    meshes = [level_mesh(config, H, h) for H, h in config.levels()]
    return ExampleSetup(meshes, micro, analytic, config.defect)


def _solve(mesh, coeff, config, dt, dump=None, precond="jacobi"):
    problem = ParabolicProblem(mesh, coeff, source, u0, grad_u0, config.T, dt, precond=precond)
    U0 = project_initial(problem)
    if dump is None:
        return backward_euler_march(problem, U0, keep="last")[-1]
    with TrajectoryDump(dump) as sink:
        return backward_euler_march(problem, U0, keep="last", on_step=sink)[-1]


def _cache_key(config, kind):
    ref = config.reference
    parts = (config.example, repr(config.eps), repr(ref.h), repr(ref.dt), repr(ref.far),
             repr(ref.pad), repr(config.T), str(config.resolved_root), repr(config.R1),
             repr(config.R2), kind, str(ref.patch_n), str(config.coefficient),
             repr([repr(s) for s in config.defect.k0_shapes + (config.defect.k_shapes or ())]))
    return hashlib.sha256("|".join(parts).encode()).hexdigest()[:20]


def reference_solutions(config, mesh=None, cache_dir=None):
    """Homogenized reference ``u`` and multiscale reference ``u^eps`` at ``T``."""
    mesh = reference_mesh(config) if mesh is None else mesh
    micro, analytic = coefficients(config)
    out = {}
    for kind in ("homogenized", "multiscale"):
        path = None
        if cache_dir is not None:
            os.makedirs(cache_dir, exist_ok=True)
            path = os.path.join(cache_dir, f"ref_{kind}_{_cache_key(config, kind)}.npz")
            if os.path.exists(path):
                data = np.load(path)
                if data["values"].shape == (mesh.nv,):
                    out[kind] = FeFunction(mesh, data["values"], config.T)
                    logger.info("loaded cached %s reference from %s", kind, path)
                    continue
        t0 = time.perf_counter()
        if kind == "multiscale":
            coeff = micro
        elif analytic is not None:
            coeff = analytic
        else:
            base = default_policy(micro)
            policy = HmmPolicy(base.delta, base.bc, base.cell_n, "patch", config.reference.patch_n)
            coeff = assemble_effective_field(mesh, micro, policy, regions=tuple(Region))
        sol = _solve(mesh, coeff, config, config.reference.dt, precond="factorized")
        logger.info("%s reference: %d vertices, %.1f s", kind, mesh.nv, time.perf_counter() - t0)
        if path is not None:
            np.savez(path, values=sol.values)
        out[kind] = sol
    return mesh, out["homogenized"], out["multiscale"]


def run_level(config, index, micro, analytic, ref_mesh, u_hom, u_eps, dump_dir=None):
    H, h = config.levels()[index]
    param = config.sweep_values[index]
    res = LevelResult(index, param, H, h, config.dt)
    t0 = time.perf_counter()
    try:
        mesh = level_mesh(config, H, h)
        res.warnings = tuple(mesh.warnings)
        A_H = effective_field(config, mesh, micro, analytic)
        b = hybrid(micro, A_H, mesh, config.rho_mode)
        dump = None if dump_dir is None else os.path.join(dump_dir, f"{config.name}_level{index}.txt")
        U = _solve(mesh, b, config, config.dt, dump)
        fine = transfer_to_fine(U, ref_mesh)
        parents = parent_elements(mesh, ref_mesh)
        outside = mesh.element_region[parents] == Region.EXTERIOR
        k0 = ref_mesh.region_mask(Region.DEFECT)
        level = dict(H=H, h=h, dt=config.dt)
        g = region_relative_errors(u_hom, fine, outside, GLOBAL_MINUS_K, **level)
        d = region_relative_errors(u_eps, fine, k0, DEFECT, **level)
        res.errors = {"e0_global": g.e0, "e1_global": g.e1, "e0_defect": d.e0, "e1_defect": d.e1}
        if analytic is None:
            res.e_hmm = math.nan
        elif config.effective.mode == "analytic":
            res.e_hmm = 0.0
        else:
            res.e_hmm = e_hmm_report(A_H, analytic, mesh, mesh.region_mask(Region.EXTERIOR))
        res.eta_K = eta_K(float(mesh.areas[mesh.k_mask].sum()))
    except (GlocalError, ValueError, ArithmeticError) as exc:
        res.failure = f"{type(exc).__name__}: {exc}"
        logger.error("level %d failed: %s", index, res.failure)
    res.seconds = time.perf_counter() - t0
    return res


def run_experiment(config, cache_dir=None, threads=1, dump_dir=None, references=None):
    """Run every sweep level; failing levels are recorded and skipped."""
    micro, analytic = coefficients(config)
    if references is None:
        references = reference_solutions(config, cache_dir=cache_dir)
    ref_mesh, u_hom, u_eps = references
    if dump_dir is not None:
        os.makedirs(dump_dir, exist_ok=True)

    def work(i):
        return run_level(config, i, micro, analytic, ref_mesh, u_hom, u_eps, dump_dir)

    n = len(config.sweep_values)
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            levels = list(pool.map(work, range(n)))
    else:
        levels = [work(i) for i in range(n)]
    return ErrorReport(config.sweep_axis, levels, config.name)
