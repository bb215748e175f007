"""Dissipative impedance seen from the transmon island.

Two equivalent descriptions of the readout channel are provided: the
lumped-element circuit (capacitances, inductances and the 50 ohm line) and
the reduced form in terms of ``(omega_res, kappa, eta)``. Spurious
high-frequency modes add Lorentzian terms. Most rate formulas consume the
*weighted* impedance ``(omega_q / omega) * 2 pi Re Z[omega] / R_Q``, which is
itself an angular frequency.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

from .constants import E_CHARGE, HBAR, R_Q

#: Half-width of the excluded qubit-peak band, in units of the Purcell width.
DEFAULT_PEAK_EXCLUSION = 100.0
CONSISTENCY_RTOL = 0.05


class QubitPeakError(ValueError):
    """Impedance requested inside the excluded band around the qubit frequency."""


def _positive(name, value):
    if not value > 0:
        raise ValueError(f"{name} must be positive, got {value!r}")


@dataclass(frozen=True)
class LumpedCircuit:
    """Transmon capacitively coupled to a resonator that is inductively tapped by a line."""

    c_q: float
    c_c: float
    c_res: float
    l_res: float
    l_tr: float
    r: float = 50.0

    def __post_init__(self):
        for name in ("c_q", "c_c", "c_res", "l_res", "l_tr", "r"):
            _positive(name, getattr(self, name))
        if not self.l_tr < 0.1 * self.l_res:
            raise ValueError("the model needs l_tr << l_res (l_tr < 0.1 l_res)")

    @property
    def c_sigma2(self) -> float:
        return self.c_res * self.c_q + self.c_res * self.c_c + self.c_q * self.c_c

    @property
    def omega_res(self) -> float:
        return math.sqrt((self.c_q + self.c_c) / (self.l_res * self.c_sigma2))

    @property
    def kappa(self) -> float:
        """Resonator linewidth set by the tap inductor and the line resistance."""
        return self.omega_res**2 * self.l_tr**2 / (self.l_res * self.r)

    @property
    def e_c(self) -> float:
        """Charging energy e^2 / 2(C_q + C_C) as an angular frequency."""
        return E_CHARGE**2 / (2.0 * (self.c_q + self.c_c)) / HBAR


@dataclass(frozen=True)
class ReadoutChannel:
    """Reduced readout parameters. ``chi`` is optional and only used by closed forms."""

    omega_res: float
    kappa: float
    eta: float
    chi: float | None = None

    def __post_init__(self):
        _positive("omega_res", self.omega_res)
        _positive("kappa", self.kappa)
        if not 0 < self.eta < 1:
            raise ValueError(f"eta must lie in (0, 1), got {self.eta!r}")


@dataclass(frozen=True)
class SpuriousMode:
    omega_s: float
    kappa_s: float
    g_s: float

    def __post_init__(self):
        _positive("omega_s", self.omega_s)
        _positive("kappa_s", self.kappa_s)
        if self.g_s < 0:
            raise ValueError("g_s must be non-negative")
        if not self.kappa_s < self.omega_s:
            raise ValueError("kappa_s must be smaller than omega_s")


@dataclass(frozen=True)
class TLSDefect:
    """Phenomenological defect: Lorentzian peak of height ``gamma_peak`` (1/s), FWHM ``width``."""

    omega_tls: float
    gamma_peak: float
    width: float

    def __post_init__(self):
        _positive("omega_tls", self.omega_tls)
        _positive("width", self.width)
        if self.gamma_peak < 0:
            raise ValueError("gamma_peak must be non-negative")


@dataclass(frozen=True)
class MixingFeature:
    """Multi-wave mixing through a spurious mode.

    Resonant when ``n_photons * omega_in = omega_{final,initial}[dw] + omega_s``.
    The rate model is ``amplitude * dw**n_photons`` times a unit-height
    Lorentzian of FWHM ``width`` in the detuning, so ``amplitude`` carries
    units of s^-1 per (rad/s)^n_photons.
    """

    omega_s: float
    amplitude: float
    width: float
    initial: int = 1
    final: int = 3
    n_photons: int = 3

    def __post_init__(self):
        _positive("omega_s", self.omega_s)
        _positive("width", self.width)
        if self.amplitude < 0:
            raise ValueError("amplitude must be non-negative")
        if not 0 <= self.initial < self.final:
            raise ValueError("need 0 <= initial < final")
        if self.n_photons < 1:
            raise ValueError("n_photons must be >= 1")


def coupling_efficiency(circuit: LumpedCircuit) -> float:
    c = circuit
    return c.c_c / math.sqrt((c.c_res + c.c_c) * (c.c_q + c.c_c))


def dispersive_shift(eta: float, e_c: float, omega_q: float, omega_res: float) -> float:
    """chi = 2 eta^2 E_C omega_q / omega_res."""
    return 2.0 * eta**2 * e_c * omega_q / omega_res


def eta_from_chi(chi: float, e_c: float, omega_q: float, omega_res: float) -> float:
    """Invert :func:`dispersive_shift` for the coupling efficiency."""
    eta2 = abs(chi) * omega_res / (2.0 * e_c * omega_q)
    if not 0 < eta2 < 1:
        raise ValueError(f"chi implies eta^2 = {eta2:.3g}, outside (0, 1)")
    return math.sqrt(eta2)


def channel_from_circuit(circuit: LumpedCircuit, omega_q: float | None = None) -> ReadoutChannel:
    """Reduced parameters equivalent to ``circuit``; chi is filled in when ``omega_q`` is given."""
    eta = coupling_efficiency(circuit)
    chi = None
    if omega_q is not None:
        chi = dispersive_shift(eta, circuit.e_c, omega_q, circuit.omega_res)
    return ReadoutChannel(omega_res=circuit.omega_res, kappa=circuit.kappa, eta=eta, chi=chi)


def _reduced_core(channel: ReadoutChannel, e_c: float, omega: float) -> float:
    # pi Re Z / R_Q
    eta2 = channel.eta**2
    w2 = omega * omega
    den = (w2 - channel.omega_res**2) ** 2 + w2 * channel.kappa**2
    return eta2 / (1.0 - eta2) * e_c * w2 * channel.kappa / den


def purcell_decay_rate(channel: ReadoutChannel, e_c: float, omega_q: float) -> float:
    """Purcell-limited qubit decay rate (1/s) through the readout channel.

    Equals ``(pi Re Z[omega_q] / R_Q) * omega_q^2 / E_C``, the width of the
    qubit peak in Re Z.
    """
    return _reduced_core(channel, e_c, omega_q) * omega_q**2 / e_c


def _guard_peak(omega, omega_q, half_width):
    if half_width > 0 and abs(omega - omega_q) < half_width:
        raise QubitPeakError(
            f"omega/2pi = {omega / (2 * math.pi):.6g} Hz lies inside the excluded qubit-peak band "
            f"(half-width {half_width / (2 * math.pi):.3g} Hz)"
        )


def re_z_reduced(channel: ReadoutChannel, e_c: float, omega: float) -> float:
    """Re Z[omega] in ohm from the reduced channel parameters."""
    _positive("omega", omega)
    return R_Q / math.pi * _reduced_core(channel, e_c, omega)


def re_z_lumped(
    circuit: LumpedCircuit,
    omega_q: float,
    omega: float,
    exclusion: float = DEFAULT_PEAK_EXCLUSION,
) -> float:
    """Re Z[omega] in ohm from the lumped elements, valid near the resonator.

    Raises
    ------
    QubitPeakError
        If ``omega`` is within ``exclusion`` Purcell widths of ``omega_q``.
    """
    _positive("omega", omega)
    c = circuit
    gamma_p = purcell_decay_rate(channel_from_circuit(c), c.e_c, omega_q)
    _guard_peak(omega, omega_q, exclusion * gamma_p)
    x = c.l_tr**2 / (c.l_res * c.r)
    num = (omega * c.l_res) * (omega * x)
    den = (1.0 - omega**2 / c.omega_res**2) ** 2 + (omega * x) ** 2
    return c.c_c**2 / (c.c_q + c.c_c) ** 2 * num / den


def re_z_spurious(mode: SpuriousMode, e_c: float, omega_q: float, omega: float) -> float:
    """Weighted impedance ``(omega_q/omega) 2 pi Re Z / R_Q`` contributed by one spurious mode."""
    if abs(omega - omega_q) < 1e-6 * omega_q:
        raise QubitPeakError("spurious-mode impedance has a pole at omega = omega_q")
    h = 0.5 * mode.kappa_s
    lor = h / (h * h + (omega - mode.omega_s) ** 2)
    return 4.0 * e_c * lor * mode.g_s**2 * omega**2 / (omega**2 - omega_q**2) ** 2


def weighted_from_re_z(re_z: float, omega_q: float, omega: float) -> float:
    return omega_q / omega * 2.0 * math.pi * re_z / R_Q


@dataclass(frozen=True)
class EnvironmentModel:
    """Everything the qubit couples to besides the drive.

    When both ``channel`` and ``circuit`` are given the channel wins; a
    warning is raised if they differ by more than 5% in any shared quantity.
    """

    channel: ReadoutChannel | None = None
    circuit: LumpedCircuit | None = None
    spurious: tuple[SpuriousMode, ...] = ()
    tls: tuple[TLSDefect, ...] = ()
    mixing: tuple[MixingFeature, ...] = ()
    peak_exclusion: float = DEFAULT_PEAK_EXCLUSION
    _derived: ReadoutChannel | None = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.channel is None and self.circuit is None:
            raise ValueError("EnvironmentModel needs a channel or a circuit")
        object.__setattr__(self, "spurious", tuple(self.spurious))
        object.__setattr__(self, "tls", tuple(self.tls))
        object.__setattr__(self, "mixing", tuple(self.mixing))
        if self.peak_exclusion < 0:
            raise ValueError("peak_exclusion must be non-negative")
        if self.circuit is not None:
            derived = channel_from_circuit(self.circuit)
            object.__setattr__(self, "_derived", derived)
            if self.channel is not None:
                for name in ("omega_res", "kappa", "eta"):
                    a, b = getattr(self.channel, name), getattr(derived, name)
                    if abs(a - b) > CONSISTENCY_RTOL * abs(a):
                        warnings.warn(
                            f"channel {name} differs from the circuit value by "
                            f"{abs(a - b) / abs(a):.1%}; using the channel value",
                            stacklevel=3,
                        )

    @property
    def readout(self) -> ReadoutChannel:
        return self.channel if self.channel is not None else self._derived

    def purcell_width(self, e_c: float, omega_q: float) -> float:
        return purcell_decay_rate(self.readout, e_c, omega_q)

    def excluded_band(self, e_c: float, omega_q: float) -> float:
        """Half-width (rad/s) of the band around omega_q where Re Z is not evaluated."""
        return self.peak_exclusion * self.purcell_width(e_c, omega_q)

    def re_z(self, e_c: float, omega_q: float, omega: float, guard: bool = True) -> float:
        """Total Re Z[omega] in ohm (channel plus spurious modes)."""
        if guard:
            _guard_peak(omega, omega_q, self.excluded_band(e_c, omega_q))
        z = re_z_reduced(self.readout, e_c, omega)
        for mode in self.spurious:
            z += re_z_spurious(mode, e_c, omega_q, omega) * omega * R_Q / (2.0 * math.pi * omega_q)
        return z


def total_weighted_impedance(env: EnvironmentModel, e_c: float, omega_q: float, omega: float) -> float:
    """Sum of channel and spurious-mode weighted impedances at ``omega``."""
    _positive("omega", omega)
    _guard_peak(omega, omega_q, env.excluded_band(e_c, omega_q))
    total = omega_q / omega * 2.0 * _reduced_core(env.readout, e_c, omega)
    for mode in env.spurious:
        total += re_z_spurious(mode, e_c, omega_q, omega)
    return total
