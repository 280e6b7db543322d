"""Austin-Palfrey empirical equations for mixed-oil length.

All quantities are SI: lengths and diameters in meters, Reynolds number
dimensionless.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .exceptions import DomainError

LOW_REGIME = "low-regime"
HIGH_REGIME = "high-regime"


def _check(name, value, *, allow_zero=False):
    value = float(value)
    if not math.isfinite(value) or value < 0 or (value == 0 and not allow_zero):
        reason = "must be finite and >= 0" if allow_zero else "must be positive and finite"
        raise DomainError(name, value, reason)
    return value


@dataclass(frozen=True)
class PipelineGeometry:
    """Operating condition of one batch transport.

    Parameters
    ----------
    L : float
        Transport distance in meters. ``L = 0`` is tolerated so that the
        formulas can be evaluated at the inlet.
    d : float
        Inner diameter in meters.
    Re : float
        Reynolds number.
    C0 : float
        Initial mixed-oil length in meters.
    """

    L: float
    d: float
    Re: float
    C0: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "L", _check("L", self.L, allow_zero=True))
        object.__setattr__(self, "d", _check("d", self.d))
        object.__setattr__(self, "Re", _check("Re", self.Re))
        object.__setattr__(self, "C0", _check("C0", self.C0, allow_zero=True))


def critical_reynolds(d):
    """Critical Reynolds number ``10000 * exp(2.72 * sqrt(d))``.

    ``d = 0`` is accepted as the limit case and returns 10000.
    """
    d = _check("d", d, allow_zero=True)
    return 10000.0 * math.exp(2.72 * math.sqrt(d))


def equivalent_length(C0, Re, d):
    """Length of a fictitious pipeline that would produce ``C0`` of mixed oil."""
    C0 = _check("C0", C0, allow_zero=True)
    Re = _check("Re", Re)
    d = _check("d", d)
    return (C0 * Re**0.1 / (11.75 * math.sqrt(d))) ** 2


def austin_palfrey_low(L, C0, Re, d):
    """Mixed-oil length below the critical Reynolds number."""
    Lc = _check("L", L, allow_zero=True) + equivalent_length(C0, Re, d)
    sd = math.sqrt(d)
    return 18384.0 * sd * math.sqrt(Lc) * Re**-0.9 * math.exp(2.18 * sd)


def austin_palfrey_high(L, C0, Re, d):
    """Mixed-oil length at or above the critical Reynolds number."""
    Lc = _check("L", L, allow_zero=True) + equivalent_length(C0, Re, d)
    return 11.75 * math.sqrt(d) * math.sqrt(Lc) * Re**-0.1


def regime(geom: PipelineGeometry) -> str:
    # Re == Re_j goes to the high regime
    return LOW_REGIME if geom.Re < critical_reynolds(geom.d) else HIGH_REGIME


def austin_palfrey(geom: PipelineGeometry) -> tuple[float, str]:
    """Austin-Palfrey mixed-oil length and the regime that produced it.

    Returns
    -------
    c_ap : float
        Predicted mixed-oil length in meters.
    tag : str
        ``"low-regime"`` or ``"high-regime"``.
    """
    tag = regime(geom)
    fn = austin_palfrey_low if tag == LOW_REGIME else austin_palfrey_high
    return fn(geom.L, geom.C0, geom.Re, geom.d), tag


def austin_palfrey_length(L, d, Re, C0=0.0) -> float:
    """Convenience wrapper returning only the length."""
    return austin_palfrey(PipelineGeometry(L, d, Re, C0))[0]
