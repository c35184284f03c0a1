"""Experiment configuration loaded from JSON.

Lengths may be given as numbers or as fraction strings such as ``"1/64"``.
Unknown keys are rejected.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from fractions import Fraction

from glocal.exceptions import ConfigurationError
from glocal.geometry import DefectGeometry, DefectKind, shape_from_dict
from glocal.harness.examples import EXAMPLE_IDS, named_defect


def parse_number(value, name="value"):
    if isinstance(value, bool):
        raise ConfigurationError(f"{name}: expected a number, got {value!r}")
    if isinstance(value, (int, float)):
        return float(value)
    if isinstance(value, str):
        try:
            return float(Fraction(value.strip()))
        except (ValueError, ZeroDivisionError) as exc:
            raise ConfigurationError(f"{name}: cannot parse {value!r}") from exc
    raise ConfigurationError(f"{name}: expected a number, got {value!r}")


def _check_keys(d, allowed, where):
    if not isinstance(d, dict):
        raise ConfigurationError(f"{where}: expected an object")
    extra = set(d) - set(allowed)
    if extra:
        raise ConfigurationError(f"{where}: unknown keys {sorted(extra)}")


@dataclass(frozen=True)
class EffectiveMode:
    """``analytic`` uses the closed-form effective tensor; ``hmm`` solves cell problems."""

    mode: str = "analytic"
    delta: float | None = None
    bc: str | None = None
    cell_n: int = 32
    sampling: str = "element"
    patch_n: int = 1


@dataclass(frozen=True)
class ReferenceSpec:
    """Reference meshes: size ``h`` near the defect (padded by ``pad``), ``h_far``
    elsewhere (uniform when omitted); time step ``dt``.

    ``patch_n`` sets the HMM patch grid used for the homogenized reference when
    no closed-form effective tensor exists.
    """

    h: float
    dt: float
    h_far: float | None = None
    pad: float | None = None
    patch_n: int = 32

    @property
    def far(self):
        return self.h if self.h_far is None else self.h_far


@dataclass(frozen=True)
class ExperimentConfig:
    example: str
    eps: float
    sweep_axis: str
    sweep_values: tuple
    reference: ReferenceSpec
    H: float | None = None
    h: float | str | None = None
    T: float = 1.0
    dt: float = 0.02
    R1: float = 2.5
    R2: float = 1.5
    defect: DefectGeometry | None = None
    effective: EffectiveMode = field(default_factory=EffectiveMode)
    coefficient: str | None = None
    name: str = "experiment"
    root_n: int | None = None
    pad: float | None = None
    grading_ratio: float = 2.0
    rho_mode: str = "indicator"
    element_cap: int = 4_000_000

    def __post_init__(self):
        if self.example not in EXAMPLE_IDS:
            raise ConfigurationError(f"unknown example {self.example!r}; expected one of {EXAMPLE_IDS}")
        if self.defect is None:
            if self.example == "custom":
                raise ConfigurationError("custom example needs a defect")
            object.__setattr__(self, "defect", named_defect(self.example))
        if self.eps <= 0:
            raise ConfigurationError("eps must be positive")
        if self.sweep_axis not in ("H", "h"):
            raise ConfigurationError("sweep axis must be 'H' or 'h'")
        vals = tuple(float(v) for v in self.sweep_values)
        object.__setattr__(self, "sweep_values", vals)
        if any(b >= a for a, b in zip(vals, vals[1:])) or any(v <= 0 for v in vals):
            raise ConfigurationError("sweep values must be positive and strictly decreasing")
        if self.sweep_axis == "H" and self.h is None:
            raise ConfigurationError("an H sweep needs a fixed h (a size or 'H')")
        if self.sweep_axis == "h" and self.H is None:
            raise ConfigurationError("an h sweep needs a fixed H")
        m = self.T / self.dt
        if self.dt <= 0 or abs(m - round(m)) > 1e-9 * max(m, 1.0) or round(m) < 1:
            raise ConfigurationError(f"dt={self.dt} does not divide T={self.T}")
        fine = min(h for _, h in self.levels())
        if not self.reference.h < fine:
            raise ConfigurationError(
                f"reference h={self.reference.h} must be smaller than the finest level h={fine}"
            )
        if self.effective.mode not in ("analytic", "hmm"):
            raise ConfigurationError(f"unknown effective mode {self.effective.mode!r}")

    def levels(self):
        """``(H, h)`` for every sweep level."""
        out = []
        for v in self.sweep_values:
            if self.sweep_axis == "H":
                h = v if self.h == "H" else float(self.h)
                out.append((v, min(h, v)))
            else:
                out.append((float(self.H), v))
        return out

    @property
    def resolved_root(self):
        if self.root_n is not None:
            return self.root_n
        return math.ceil(1.0 / max(H for H, _ in self.levels()) - 1e-9)

    def with_sweep(self, values):
        return replace(self, sweep_values=tuple(values))


_TOP = {"example", "eps", "R1", "R2", "T", "dt", "sweep", "H", "h", "effective", "reference",
        "defect", "coefficient", "name", "root_n", "pad", "grading_ratio", "rho_mode",
        "element_cap", "k_mode"}


def _defect_from_dict(d):
    _check_keys(d, {"kind", "k0", "k"}, "defect")
    k0 = tuple(shape_from_dict(s) for s in d.get("k0", ()))
    if not k0:
        raise ConfigurationError("defect: empty K0 shape list")
    k = d.get("k")
    k = None if k is None else tuple(shape_from_dict(s) for s in k)
    return DefectGeometry(DefectKind(d.get("kind", "custom")), k0, k)


def config_from_dict(d):
    _check_keys(d, _TOP, "config")
    for req in ("example", "eps", "sweep", "reference"):
        if req not in d:
            raise ConfigurationError(f"config: missing required key {req!r}")
    sweep = d["sweep"]
    _check_keys(sweep, {"axis", "values"}, "sweep")
    ref = d["reference"]
    _check_keys(ref, {"h", "dt", "h_far", "pad", "patch_n"}, "reference")
    reference = ReferenceSpec(
        parse_number(ref["h"], "reference.h"),
        parse_number(ref["dt"], "reference.dt"),
        None if ref.get("h_far") is None else parse_number(ref["h_far"], "reference.h_far"),
        None if ref.get("pad") is None else parse_number(ref["pad"], "reference.pad"),
        int(ref.get("patch_n", 32)),
    )
    eff = d.get("effective", {"mode": "analytic"})
    _check_keys(eff, {"mode", "delta", "bc", "cell_n", "sampling", "patch_n"}, "effective")
    effective = EffectiveMode(
        eff.get("mode", "analytic"),
        None if eff.get("delta") is None else parse_number(eff["delta"], "effective.delta"),
        eff.get("bc"),
        int(eff.get("cell_n", 32)),
        eff.get("sampling", "element"),
        int(eff.get("patch_n", 1)),
    )
    defect = _defect_from_dict(d["defect"]) if "defect" in d else None
    if defect is None and d["example"] != "custom":
        defect = named_defect(d["example"])
    if defect is not None and "k_mode" in d:
        defect = defect.with_k_mode(d["k_mode"])
    h = d.get("h")
    if h is not None and h != "H":
        h = parse_number(h, "h")
    kwargs = dict(
        example=d["example"],
        eps=parse_number(d["eps"], "eps"),
        sweep_axis=sweep.get("axis"),
        sweep_values=tuple(parse_number(v, "sweep.values") for v in sweep.get("values", ())),
        reference=reference,
        H=None if d.get("H") is None else parse_number(d["H"], "H"),
        h=h,
        T=parse_number(d.get("T", 1.0), "T"),
        dt=parse_number(d.get("dt", 0.02), "dt"),
        R1=parse_number(d.get("R1", 2.5), "R1"),
        R2=parse_number(d.get("R2", 1.5), "R2"),
        defect=defect,
        effective=effective,
        coefficient=d.get("coefficient"),
        name=d.get("name", "experiment"),
        root_n=d.get("root_n"),
        pad=None if d.get("pad") is None else parse_number(d["pad"], "pad"),
        grading_ratio=parse_number(d.get("grading_ratio", 2.0), "grading_ratio"),
        rho_mode=d.get("rho_mode", "indicator"),
        element_cap=int(d.get("element_cap", 4_000_000)),
    )
    return ExperimentConfig(**kwargs)


def load_config(path):
    try:
        with open(path) as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{path}: invalid JSON ({exc})") from exc
    return config_from_dict(data)
