"""Physical parameters, unit conventions and conversions.

Internal convention: angular frequencies in rad/us, times in us.  All
user-facing I/O uses ordinary frequency in MHz, time in ns and intensity
in mW/cm^2, which keeps internal exponents O(1) while matching how such
experiments are quoted.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

TWO_PI = 2.0 * math.pi

# Cs D2 natural linewidth, Gamma/(2pi) in MHz.  A documented default, needed
# to convert read intensity into a Rabi frequency; configurable everywhere.
DEFAULT_GAMMA_NAT_MHZ = 5.2

# Delay between the heralding detection and read turn-on, us.  The write
# pulse lasts 50 ns and reading starts right after it; configurable.
DEFAULT_TAU_US = 0.050


class ParamError(ValueError):
    """A parameter or domain invariant was violated; names the fields."""

    def __init__(self, fields, message=None):
        self.fields = tuple(fields)
        super().__init__(message or ("invalid parameter(s): " + ", ".join(self.fields)))


def mhz_to_angular(f_mhz):
    """Ordinary frequency in MHz -> angular frequency in rad/us (w = 2*pi*f)."""
    return TWO_PI * np.asarray(f_mhz, dtype=float) if np.ndim(f_mhz) else TWO_PI * float(f_mhz)


def angular_to_mhz(w):
    """Angular frequency in rad/us -> ordinary frequency in MHz."""
    return np.asarray(w, dtype=float) / TWO_PI if np.ndim(w) else float(w) / TWO_PI


@dataclass(frozen=True)
class FrequencyValue:
    """A frequency carrying an explicit unit tag, 'MHz' or 'rad/us'."""

    value: float
    unit: str = "MHz"

    def __post_init__(self):
        if self.unit not in ("MHz", "rad/us"):
            raise ParamError(["unit"], f"unknown frequency unit {self.unit!r}")

    def to_angular(self) -> float:
        """Value as angular frequency in rad/us."""
        if self.unit == "rad/us":
            return self.value
        return mhz_to_angular(self.value)

    def to_mhz(self) -> float:
        """Value as ordinary frequency in MHz."""
        if self.unit == "MHz":
            return self.value
        return angular_to_mhz(self.value)


def to_angular(f: FrequencyValue) -> float:
    """Angular frequency in rad/us of a tagged frequency value."""
    return f.to_angular()


@dataclass(frozen=True)
class IntensityModel:
    """Link between read intensity and Rabi frequency.

    The driven transition saturates according to (Omega/Gamma)^2 = I_r/(2 I_s)
    with I_s the saturation intensity in mW/cm^2.
    """

    i_sat: float  # mW/cm^2
    gamma_nat: float = mhz_to_angular(DEFAULT_GAMMA_NAT_MHZ)  # rad/us

    def __post_init__(self):
        bad = []
        if not (self.i_sat > 0 and math.isfinite(self.i_sat)):
            bad.append("i_sat")
        if not (self.gamma_nat > 0 and math.isfinite(self.gamma_nat)):
            bad.append("gamma_nat")
        if bad:
            raise ParamError(bad)


def rabi_from_intensity(i_r, model: IntensityModel):
    """Rabi frequency in rad/us for read intensity ``i_r`` in mW/cm^2.

    Omega = Gamma * sqrt(I_r / (2 I_s)); monotone in I_r, Omega(2 I_s) = Gamma.
    """
    i_r_arr = np.asarray(i_r, dtype=float)
    if np.any(i_r_arr < 0) or not np.all(np.isfinite(i_r_arr)):
        raise ParamError(["i_r"], "read intensity must be finite and >= 0")
    out = model.gamma_nat * np.sqrt(i_r_arr / (2.0 * model.i_sat))
    return out if np.ndim(i_r) else float(out)


@dataclass(frozen=True)
class ReadoutParams:
    """All quantities entering the extracted-photon wavepacket.

    omega      : Rabi frequency of the read transition, rad/us, >= 0
    delta      : read detuning, rad/us, signed
    gamma_nat  : natural linewidth Gamma, rad/us, > 0
    chi        : cooperativity (collective decay enhancement), >= 1
    gamma_deph : Gaussian dephasing rate of the stored coherence, rad/us, >= 0
    tau        : delay between heralding detection and read turn-on, us, >= 0
    scale_f    : overall proportionality constant, >= 0
    """

    omega: float
    delta: float
    gamma_nat: float = mhz_to_angular(DEFAULT_GAMMA_NAT_MHZ)
    chi: float = 1.0
    gamma_deph: float = 0.0
    tau: float = DEFAULT_TAU_US
    scale_f: float = 1.0

    @property
    def chi_gamma(self) -> float:
        """Collectively enhanced decay rate chi*Gamma, rad/us."""
        return self.chi * self.gamma_nat

    def replace(self, **changes) -> "ReadoutParams":
        return replace(self, **changes)

    @classmethod
    def from_user_units(cls, *, delta_mhz, chi=1.0, gamma_deph_mhz=0.0,
                        scale_f=1.0, rabi_mhz=None, i_r_mw_cm2=None,
                        i_sat_mw_cm2=None, gamma_nat_mhz=DEFAULT_GAMMA_NAT_MHZ,
                        tau_ns=DEFAULT_TAU_US * 1e3) -> "ReadoutParams":
        """Build validated params from user-facing units.

        The Rabi frequency is given either directly as ``rabi_mhz`` or via
        ``i_r_mw_cm2`` together with ``i_sat_mw_cm2``.
        """
        gamma_nat = mhz_to_angular(gamma_nat_mhz)
        if (rabi_mhz is None) == (i_r_mw_cm2 is None):
            raise ParamError(["rabi_mhz", "i_r_mw_cm2"],
                             "give exactly one of rabi_mhz or i_r_mw_cm2")
        if rabi_mhz is not None:
            omega = mhz_to_angular(rabi_mhz)
        else:
            if i_sat_mw_cm2 is None:
                raise ParamError(["i_sat_mw_cm2"],
                                 "i_sat_mw_cm2 is required with i_r_mw_cm2")
            model = IntensityModel(i_sat=i_sat_mw_cm2, gamma_nat=gamma_nat)
            omega = rabi_from_intensity(i_r_mw_cm2, model)
        return validate(cls(omega=omega, delta=mhz_to_angular(delta_mhz),
                            gamma_nat=gamma_nat, chi=chi,
                            gamma_deph=mhz_to_angular(gamma_deph_mhz),
                            tau=tau_ns * 1e-3, scale_f=scale_f))


def validate(params: ReadoutParams) -> ReadoutParams:
    """Return ``params`` unchanged if every invariant holds.

    Raises ParamError naming each violated field otherwise.
    """
    bad = []
    if not (math.isfinite(params.omega) and params.omega >= 0):
        bad.append("omega")
    if not math.isfinite(params.delta):
        bad.append("delta")
    if not (math.isfinite(params.gamma_nat) and params.gamma_nat > 0):
        bad.append("gamma_nat")
    if not (math.isfinite(params.chi) and params.chi >= 1):
        bad.append("chi")
    if not (math.isfinite(params.gamma_deph) and params.gamma_deph >= 0):
        bad.append("gamma_deph")
    if not (math.isfinite(params.tau) and params.tau >= 0):
        bad.append("tau")
    if not (math.isfinite(params.scale_f) and params.scale_f >= 0):
        bad.append("scale_f")
    if bad:
        raise ParamError(bad)
    return params
