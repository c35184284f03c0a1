"""Named benchmark setups: defect geometries, initial value and coefficients."""

from __future__ import annotations

import numpy as np

from glocal.coefficient import (
    coefficient_from_id,
    no_scale_sep_coefficient,
    two_scale_coefficient,
    two_scale_effective,
)
from glocal.exceptions import ConfigurationError
from glocal.geometry import DefectGeometry, DefectKind, Ellipse, Polygon

EXAMPLE_IDS = ("two_scale_well", "two_scale_lshape", "two_scale_porous", "no_scale_sep_well", "custom")

WELL_K0 = (0.45, 0.45, 0.55, 0.55)
WELL_K = (0.44, 0.44, 0.56, 0.56)

LSHAPE_K0 = ((0.4, 0.4), (0.73, 0.4), (0.73, 0.43), (0.43, 0.43), (0.43, 0.73), (0.4, 0.73))
LSHAPE_K = ((0.385, 0.385), (0.745, 0.385), (0.745, 0.445), (0.445, 0.445),
            (0.445, 0.745), (0.385, 0.745))

POROUS_CENTERS = ((0.2, 0.8), (0.2, 0.2), (0.4, 0.8), (0.5, 0.2), (0.7, 0.6), (0.9, 0.1))
POROUS_K0_AXES = ((0.0125, 0.025), (0.0125, 0.05), (0.025, 0.025), (0.05, 0.0125),
                  (0.025, 0.0725), (0.025, 0.025))
# Listed values; the fifth y-axis is not exactly 1.4 times its K0 counterpart.
POROUS_K_AXES = ((0.0175, 0.035), (0.0175, 0.07), (0.035, 0.035), (0.07, 0.0175),
                 (0.035, 0.0875), (0.035, 0.035))


def well_defect():
    return DefectGeometry(DefectKind.WELL, (Polygon.rectangle(*WELL_K0),),
                          (Polygon.rectangle(*WELL_K),))


def lshape_defect():
    return DefectGeometry(DefectKind.LSHAPE, (Polygon(LSHAPE_K0),), (Polygon(LSHAPE_K),))


def porous_defect():
    k0 = tuple(Ellipse(c, a) for c, a in zip(POROUS_CENTERS, POROUS_K0_AXES))
    k = tuple(Ellipse(c, a) for c, a in zip(POROUS_CENTERS, POROUS_K_AXES))
    return DefectGeometry(DefectKind.POROUS, k0, k)


def named_defect(example):
    if example in ("two_scale_well", "no_scale_sep_well"):
        return well_defect()
    if example == "two_scale_lshape":
        return lshape_defect()
    if example == "two_scale_porous":
        return porous_defect()
    raise ConfigurationError(f"no named defect for example {example!r}")


def u0(x, y):
    return x * (1 - x) * y * (1 - y)


def grad_u0(x, y):
    x, y = np.broadcast_arrays(x, y)
    return np.stack([(1 - 2 * x) * y * (1 - y), x * (1 - x) * (1 - 2 * y)], axis=-1)


def source(x, y, t):
    return np.ones(np.broadcast(x, y).shape)


def coefficients(config):
    """Return ``(micro, analytic_effective_or_None)`` for a configuration."""
    ex = config.example
    if ex.startswith("two_scale"):
        return two_scale_coefficient(config.eps, config.R1, config.R2), two_scale_effective(config.R1, config.R2)
    if ex == "no_scale_sep_well":
        return no_scale_sep_coefficient(config.eps, config.defect), None
    cid = config.coefficient
    if cid is None:
        raise ConfigurationError("custom example needs a coefficient id")
    micro = coefficient_from_id(cid, config.eps, config.R1, config.R2, config.defect)
    if cid == "two_scale":
        return micro, two_scale_effective(config.R1, config.R2)
    if cid.startswith("constant:"):
        return micro, micro
    return micro, None
