"""Behavioral device models: subthreshold MOSFETs and ideal passives.

The MOSFET law is a single-piece subthreshold exponential with a drain
saturation factor, an optional Early term, and a gate-independent leakage
floor.  It is deliberately minimal: every analog transistor in the target
circuits operates below threshold, and the digital switches are either NEM
relays or MOSFETs whose only interesting feature is their off-current.

Conventions
-----------
* All quantities are SI floats (volts, amperes, farads, seconds).
* Drain current is signed positive when flowing drain -> source for n-type
  devices; p-type devices are the exact voltage mirror of n-type.
* The off-current floor is calibrated so that the drain current at
  v_gs = 0, v_ds = V_OFF_REF (0.5 V) equals ``i_off_ref``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

# Reference drain-source bias at which i_off_ref is specified.
V_OFF_REF = 0.5

# Thermal voltage at 300 K.
UT_300K = 0.02585

# Exponent clamp: keeps intermediate products finite if the solver wanders.
_EXP_MAX = 345.0


class InvalidArgumentError(ValueError):
    """Raised when a device model is evaluated with unusable inputs."""


def _exp(x: float) -> float:
    return math.exp(min(x, _EXP_MAX))


@dataclass(frozen=True)
class MosParams:
    """Parameter set for the behavioral subthreshold MOSFET.

    polarity    'n' or 'p'
    i0          specific current extrapolated to v_gs = 0, amperes
    slope_n     subthreshold slope factor (>= 1)
    ut          thermal voltage, volts
    w_over_l    width/length ratio
    i_off_ref   measured off-current at v_gs = 0, v_ds = 0.5 V, amperes
    v_early     Early voltage; math.inf means ideal saturation
    """

    polarity: str = "n"
    i0: float = 1e-13
    slope_n: float = 1.5
    ut: float = UT_300K
    w_over_l: float = 1.0
    i_off_ref: float = 0.0
    v_early: float = math.inf

    def __post_init__(self) -> None:
        if self.polarity not in ("n", "p"):
            raise InvalidArgumentError(f"polarity must be 'n' or 'p', got {self.polarity!r}")
        if not (self.i0 > 0.0 and math.isfinite(self.i0)):
            raise InvalidArgumentError(f"i0 must be positive, got {self.i0}")
        if self.slope_n < 1.0:
            raise InvalidArgumentError(f"slope_n must be >= 1, got {self.slope_n}")
        if not (self.ut > 0.0):
            raise InvalidArgumentError(f"ut must be positive, got {self.ut}")
        if not (self.w_over_l > 0.0):
            raise InvalidArgumentError(f"w_over_l must be positive, got {self.w_over_l}")
        if self.i_off_ref < 0.0:
            raise InvalidArgumentError(f"i_off_ref must be >= 0, got {self.i_off_ref}")
        if not (self.v_early > 0.0):
            raise InvalidArgumentError(f"v_early must be positive, got {self.v_early}")

    @property
    def i_spec(self) -> float:
        """Width-scaled specific current."""
        return self.i0 * self.w_over_l

    def floor_prefactor(self) -> float:
        """Leakage prefactor that lands the v_gs = 0 current on i_off_ref.

        The floor adds to the channel term, so it is reduced by the channel
        current the plain law already produces at v_gs = 0.  Zero when
        i_off_ref is small enough that no extra floor is needed.
        """
        if self.i_off_ref == 0.0:
            return 0.0
        f_ref = -math.expm1(-V_OFF_REF / self.ut)
        if math.isfinite(self.v_early):
            f_ref *= 1.0 + V_OFF_REF / self.v_early
        return max(0.0, self.i_off_ref / f_ref - self.i_spec)


@dataclass(frozen=True)
class PassiveParams:
    """Ideal passive or source element.

    kind    'capacitor' | 'current-source' | 'voltage-source' | 'resistor'
    value   farads | amperes | volts | ohms respectively
    v_clamp compliance voltage for current sources: delivered current rolls
            off exponentially as the output node approaches v_clamp, which
            keeps a source feeding an open switch well-posed.  math.inf
            restores the textbook ideal source.
    """

    kind: str
    value: float
    v_clamp: float = math.inf

    def __post_init__(self) -> None:
        kinds = ("capacitor", "current-source", "voltage-source", "resistor")
        if self.kind not in kinds:
            raise InvalidArgumentError(f"unknown passive kind {self.kind!r}")
        if not math.isfinite(self.value):
            raise InvalidArgumentError(f"value must be finite, got {self.value}")
        if self.kind in ("capacitor", "resistor") and not self.value > 0.0:
            raise InvalidArgumentError(f"{self.kind} value must be positive, got {self.value}")


def _nmos_current(params: MosParams, v_g: float, v_s: float, v_d: float) -> float:
    """Signed drain->source current of the n-type law.

    Source and drain are interchangeable: the lower-potential terminal acts
    as the source, and the sign of the result follows the applied v_ds.
    """
    if v_d >= v_s:
        sign, lo, hi = 1.0, v_s, v_d
    else:
        sign, lo, hi = -1.0, v_d, v_s
    v_ds_eff = hi - lo
    if v_ds_eff == 0.0:
        return 0.0
    v_gs_eff = v_g - lo
    pre = params.i_spec * _exp(v_gs_eff / (params.slope_n * params.ut))
    pre += params.floor_prefactor()
    current = pre * -math.expm1(-v_ds_eff / params.ut)
    if math.isfinite(params.v_early):
        current *= 1.0 + v_ds_eff / params.v_early
    return sign * current


def mos_drain_current(params: MosParams, v_g: float, v_s: float, v_d: float) -> float:
    """Drain current of a behavioral subthreshold MOSFET.

    Returns the signed drain->source current.  P-type devices evaluate the
    n-type law at mirrored voltages and negate, so matched n/p parameter
    sets are exact polarity mirrors of each other.
    """
    for v in (v_g, v_s, v_d):
        if not math.isfinite(v):
            raise InvalidArgumentError(f"non-finite terminal voltage {v!r}")
    if params.polarity == "n":
        return _nmos_current(params, v_g, v_s, v_d)
    return -_nmos_current(params, -v_g, -v_s, -v_d)


def mos_off_current(params: MosParams, v_ds: float) -> float:
    """Drain current magnitude at v_gs = 0 for the given drain-source bias.

    v_ds >= 0 for n-type; the sign convention is mirrored for p-type, so a
    p-type device is queried with v_ds >= 0 as well (interpreted as v_sd).
    """
    if not math.isfinite(v_ds):
        raise InvalidArgumentError(f"non-finite v_ds {v_ds!r}")
    if v_ds < 0.0:
        raise InvalidArgumentError(f"off-current is defined for v_ds >= 0, got {v_ds}")
    if params.polarity == "n":
        return mos_drain_current(params, 0.0, 0.0, v_ds)
    return -mos_drain_current(params, 0.0, 0.0, -v_ds)


def bias_for_current(params: MosParams, target: float, v_ds: float = V_OFF_REF) -> float:
    """Gate-source bias at which the device carries ``target`` amperes.

    Inverts the saturated law (floor ignored); used by circuit templates to
    translate current presets into bias voltages.
    """
    if not target > 0.0:
        raise InvalidArgumentError(f"target current must be positive, got {target}")
    sat = -math.expm1(-v_ds / params.ut)
    if math.isfinite(params.v_early):
        sat *= 1.0 + v_ds / params.v_early
    return params.slope_n * params.ut * math.log(target / (params.i_spec * sat))
