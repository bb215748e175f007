"""Drive-induced and thermal transition rates of the transmon.

Conventions: every frequency and energy is an angular frequency (rad/s),
``hbar = 1``. Rates are returned in 1/s. The environment enters through the
weighted impedance ``w(omega) = (omega_q / omega) * 2 pi Re Z[omega] / R_Q``
(see :mod:`readout_transitions.environment`).
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, replace
from typing import Iterable, Iterator

from scipy.integrate import quad

from .constants import HBAR, K_B, R_Q
from .environment import EnvironmentModel, SpuriousMode, total_weighted_impedance
from .spectrum import SpectrumResult, stark_shifted_transition, transition_frequency

MECHANISMS = ("raman", "two_photon", "two_out", "thermal", "tls", "resonant", "fit", "injected")

#: Denominators closer to zero than this fraction of omega_q are treated as poles.
POLE_FRACTION = 1e-3


class NearPoleError(ValueError):
    """An energy denominator of the perturbative sum is (nearly) zero."""


class QuadratureError(RuntimeError):
    """Adaptive quadrature did not reach the requested tolerance."""


def _nonneg(**kw):
    for k, v in kw.items():
        if v < 0:
            raise ValueError(f"{k} must be non-negative, got {v!r}")


# ---------------------------------------------------------------- data types


@dataclass(frozen=True)
class DriveSpec:
    """Off-resonant drive: frequency and strength as the qubit AC Stark shift.

    If both ``n_bar`` and ``chi`` are given, ``delta_omega`` must equal
    ``|chi| * n_bar``.
    """

    omega_in: float
    delta_omega: float = 0.0
    n_bar: float | None = None
    chi: float | None = None

    def __post_init__(self):
        if not self.omega_in > 0:
            raise ValueError("omega_in must be positive")
        _nonneg(delta_omega=self.delta_omega)
        if self.n_bar is not None and self.chi is not None:
            expected = abs(self.chi) * self.n_bar
            if abs(expected - self.delta_omega) > 1e-9 * max(abs(expected), abs(self.delta_omega)):
                raise ValueError(
                    f"delta_omega={self.delta_omega!r} inconsistent with chi*n_bar={expected!r}"
                )

    @classmethod
    def from_photon_number(cls, omega_in: float, n_bar: float, chi: float) -> "DriveSpec":
        return cls(omega_in=omega_in, delta_omega=abs(chi) * n_bar, n_bar=n_bar, chi=chi)

    def with_delta(self, delta_omega: float) -> "DriveSpec":
        return replace(self, delta_omega=delta_omega, n_bar=None, chi=None)


@dataclass(frozen=True)
class RateEntry:
    initial: int
    final: int
    rate: float
    mechanism: str
    stderr: float | None = None
    upper: float | None = None

    def __post_init__(self):
        if self.initial == self.final:
            raise ValueError("self-transitions are not rates")
        if not self.rate >= 0:
            raise ValueError(f"rate must be non-negative, got {self.rate!r}")
        if self.mechanism not in MECHANISMS:
            raise ValueError(f"unknown mechanism {self.mechanism!r}")


@dataclass(frozen=True)
class RateSet:
    """Collection of tagged rates; several mechanisms may share one (initial, final) pair."""

    entries: tuple[RateEntry, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))

    def __iter__(self) -> Iterator[RateEntry]:
        return iter(self.entries)

    def __len__(self):
        return len(self.entries)

    def pairs(self) -> list[tuple[int, int]]:
        return sorted({(e.initial, e.final) for e in self.entries})

    def total(self, initial: int, final: int) -> float:
        return float(sum(e.rate for e in self.entries if (e.initial, e.final) == (initial, final)))

    def totals(self) -> dict[tuple[int, int], float]:
        return {p: self.total(*p) for p in self.pairs()}

    def by_mechanism(self, mechanism: str) -> "RateSet":
        return RateSet(tuple(e for e in self.entries if e.mechanism == mechanism))

    def get(self, initial: int, final: int, mechanism: str | None = None) -> RateEntry | None:
        for e in self.entries:
            if (e.initial, e.final) == (initial, final) and mechanism in (None, e.mechanism):
                return e
        return None

    def merged(self, other: "RateSet") -> "RateSet":
        return RateSet(self.entries + tuple(other.entries))

    def to_dict(self) -> dict:
        rows = []
        for e in self.entries:
            row = {"initial": e.initial, "final": e.final, "rate_hz": e.rate, "mechanism": e.mechanism}
            if e.stderr is not None:
                row["stderr_hz"] = e.stderr
            if e.upper is not None:
                row["upper_hz"] = e.upper
            rows.append(row)
        return {"rates": rows}

    @classmethod
    def from_dict(cls, data: dict) -> "RateSet":
        return cls(
            tuple(
                RateEntry(
                    int(r["initial"]),
                    int(r["final"]),
                    float(r["rate_hz"]),
                    r["mechanism"],
                    r.get("stderr_hz"),
                    r.get("upper_hz"),
                )
                for r in data["rates"]
            )
        )

    def to_csv(self) -> str:
        """CSV with columns initial, final, rate_hz, mechanism.

        ``rate_hz`` is the rate in events per second (1/s).
        """
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["initial", "final", "rate_hz", "mechanism"])
        for e in self.entries:
            w.writerow([e.initial, e.final, repr(float(e.rate)), e.mechanism])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "RateSet":
        rows = csv.DictReader(io.StringIO(text))
        return cls(
            tuple(RateEntry(int(r["initial"]), int(r["final"]), float(r["rate_hz"]), r["mechanism"]) for r in rows)
        )


# ----------------------------------------------------------- Raman processes


def raman_rate(m: int, omega_q: float, weighted_z: float, delta_omega: float) -> float:
    """Rate of |m> -> |m+2> by inelastic scattering of one drive photon.

    Parameters
    ----------
    m : int
        Initial level.
    omega_q : float
        Qubit frequency (rad/s). Only used for input validation since it is
        already folded into ``weighted_z``.
    weighted_z : float
        ``(omega_q/omega_out) 2 pi Re Z[omega_out] / R_Q`` at
        ``omega_out = omega_in - omega_{m+2,m}``.
    delta_omega : float
        AC Stark shift of the qubit (rad/s).
    """
    if m < 0:
        raise ValueError("m must be >= 0")
    _nonneg(omega_q=omega_q, weighted_z=weighted_z, delta_omega=delta_omega)
    return (m + 1) * (m + 2) * weighted_z * delta_omega


def raman_rate_simplified(m: int, kappa: float, chi: float, omega_q: float, delta_omega: float) -> float:
    """Closed form for omega_res >> omega_q, eta^2 << 1 and drive at the resonator."""
    if m < 0:
        raise ValueError("m must be >= 0")
    return (m + 1) * (m + 2) * kappa * abs(chi) * delta_omega / (16.0 * omega_q**2)


def raman_output_frequency(spec: SpectrumResult, m: int, omega_in: float) -> float:
    return omega_in - transition_frequency(spec, m, m + 2)


# --------------------------------------------------------- two-photon drive


def _prefactor(m, direction):
    if direction == "down":
        return m
    if direction == "up":
        return m + 1
    raise ValueError(f"direction must be 'up' or 'down', got {direction!r}")


def two_photon_output_frequency(spec: SpectrumResult, m: int, direction: str, omega_in: float) -> float:
    """Frequency of the photon emitted when two drive photons are absorbed."""
    if direction == "down":
        return 2.0 * omega_in + transition_frequency(spec, m - 1, m)
    if direction == "up":
        return 2.0 * omega_in - transition_frequency(spec, m, m + 1)
    raise ValueError(f"direction must be 'up' or 'down', got {direction!r}")


def two_photon_rate(
    m: int,
    direction: str,
    omega_q: float,
    omega_out: float,
    weighted_z_at_out: float,
    delta_omega: float,
    e_c: float,
) -> float:
    """Rate of |m> -> |m -/+ 1> with two drive photons in and one photon out.

    Equal to ``p (omega_q/omega_out)(pi Re Z[omega_out]/R_Q) dw^2 / E_C`` with
    ``p = m`` (down) or ``m + 1`` (up), i.e. ``p * weighted_z / 2 * dw^2 / E_C``.
    """
    p = _prefactor(m, direction)
    _nonneg(weighted_z_at_out=weighted_z_at_out, delta_omega=delta_omega)
    if not (omega_out > 0 and omega_q > 0 and e_c > 0):
        raise ValueError("omega_out, omega_q and e_c must be positive")
    return p * 0.5 * weighted_z_at_out * delta_omega**2 / e_c


def two_photon_rate_simplified(m: int, kappa: float, chi: float, omega_res: float, delta_omega: float, e_c: float) -> float:
    """Relaxation |m> -> |m-1> through the readout channel only, high-frequency readout limit."""
    return 2.0 * m / 9.0 * kappa * abs(chi) / omega_res**2 * delta_omega**2 / e_c


def two_photon_rate_resonant(
    m: int, mode: SpuriousMode, omega_q: float, omega_out: float, delta_omega: float
) -> float:
    """Two-photon relaxation enhanced by a spurious mode near ``omega_out``."""
    if abs(omega_out - omega_q) < 1e-6 * omega_q:
        raise NearPoleError("omega_out coincides with the qubit frequency")
    _nonneg(delta_omega=delta_omega)
    h = 0.5 * mode.kappa_s
    lor = mode.kappa_s / (h * h + (omega_out - mode.omega_s) ** 2)
    return m * lor * mode.g_s**2 * omega_out**2 / (omega_out**2 - omega_q**2) ** 2 * delta_omega**2


# ----------------------------------------------------- one in, two photons out


def two_out_rate(
    m: int,
    direction: str,
    omega_in: float,
    spec: SpectrumResult,
    env: EnvironmentModel,
    delta_omega: float,
    e_j: float,
    e_c: float | None = None,
    rtol: float = 1e-3,
) -> float:
    """Rate of |m> -> |m -/+ 1> where one drive photon turns into two outgoing photons.

    The double-impedance integral over the first photon frequency is done by
    adaptive quadrature, with the excluded band around the qubit frequency cut
    out of the range for both photons.

    Raises
    ------
    QuadratureError
        If the estimated relative error exceeds ``rtol``.
    """
    p = _prefactor(m, direction)
    _nonneg(delta_omega=delta_omega)
    if p == 0 or delta_omega == 0:
        return 0.0
    e_c = _resolve_ec(spec, e_c)
    omega_q = transition_frequency(spec, 0, 1)
    if direction == "up":
        top = omega_in - transition_frequency(spec, m, m + 1)
    else:
        top = omega_in + transition_frequency(spec, m - 1, m)
    if top <= 0:
        return 0.0

    def f(w):
        if w <= 0:
            return 0.0
        return env.re_z(e_c, omega_q, w, guard=False) / (w * R_Q)

    def integrand(w1):
        return f(top - w1) * f(w1)

    band = env.excluded_band(e_c, omega_q)
    cuts = []
    for c in (omega_q, top - omega_q):
        lo, hi = max(c - band, 0.0), min(c + band, top)
        if hi > lo:
            cuts.append((lo, hi))
    cuts.sort()
    # merge overlapping excluded bands, then integrate over the gaps
    merged = []
    for lo, hi in cuts:
        if merged and lo <= merged[-1][1]:
            merged[-1] = (merged[-1][0], max(hi, merged[-1][1]))
        else:
            merged.append((lo, hi))
    edges, a = [], 0.0
    for lo, hi in merged:
        if lo > a:
            edges.append((a, lo))
        a = max(a, hi)
    if a < top:
        edges.append((a, top))

    peaks = [env.readout.omega_res, top - env.readout.omega_res]
    for s in env.spurious:
        peaks += [s.omega_s, top - s.omega_s]
    total, err = 0.0, 0.0
    for a, b in edges:
        pts = sorted(x for x in peaks if a < x < b)
        val, e = quad(integrand, a, b, points=pts or None, limit=1000, epsabs=0.0, epsrel=rtol * 0.1)
        total += val
        err += e
    if total > 0 and err > rtol * total:
        raise QuadratureError(f"two-photon-out integral reached only {err / total:.2e} relative error")
    return p * 64.0 * math.pi * e_j * delta_omega * total


# ------------------------------------------------------------------ thermal


def thermal_rates(omega_q: float, temperature: float, gamma_down: float) -> tuple[float, float]:
    """(gamma_down, gamma_up) obeying detailed balance at ``temperature`` (K)."""
    if not temperature > 0:
        raise ValueError("temperature must be positive")
    _nonneg(gamma_down=gamma_down, omega_q=omega_q)
    return gamma_down, gamma_down * math.exp(-HBAR * omega_q / (K_B * temperature))


# -------------------------------------------------- microscopic matrix element


def participation(omega_k: float, lambda_k: float, omega_q: float) -> float:
    """Normal-mode participation ``mu_k = omega_k lambda_k / (omega_k^2 - omega_q^2)``."""
    return omega_k * lambda_k / (omega_k**2 - omega_q**2)


def matrix_element_normal_mode(m: int, n_in: float, mu_in: float, mu_out: float, omega_q: float) -> float:
    """|M| for |m> -> |m+2> from the quartic Josephson term (rad/s)."""
    return math.sqrt((m + 1) * (m + 2)) * omega_q / 4.0 * math.sqrt(n_in) * abs(mu_in) * abs(mu_out)


def golden_rule_rate(density_weight: float, matrix_element: float) -> float:
    """``2 pi nu |M|^2`` with the density of states per unit angular frequency."""
    return 2.0 * math.pi * density_weight * matrix_element**2


def stark_shift_from_drive(omega_q: float, mu_in: float, n_in: float) -> float:
    """Magnitude of the (downward) qubit Stark shift from ``n_in`` drive photons."""
    return 0.5 * omega_q * mu_in**2 * n_in


def drive_participation_from_stark(delta_omega: float, omega_q: float, n_in: float) -> float:
    """``|mu_in|`` producing the Stark shift ``delta_omega`` with ``n_in`` photons."""
    return math.sqrt(2.0 * delta_omega / (omega_q * n_in))


def density_weight_from_impedance(re_z: float, omega_out: float) -> float:
    """``nu_out |mu_out|^2`` implied by Re Z at the outgoing frequency."""
    return 8.0 * re_z / (R_Q * omega_out)


def t_matrix_contributions(
    m: int,
    spec: SpectrumResult,
    lambda_in: float,
    lambda_out: float,
    n_in: float,
    omega_in: float,
) -> dict[int, float]:
    """Second-order amplitudes for |m> -> |m+2> keyed by the intermediate level.

    Intermediate levels are ``m+1``, ``m+3`` and ``m-1`` (the last only for
    ``m >= 1``). Each term is
    ``<m+2|N|j><j|N|m> sqrt(n_in) l_in l_out (2 e_j - e_m - e_{m+2}) /
    ((w_in + e_j - e_{m+2})(w_in + e_m - e_j))``.
    """
    if m < 0 or m + 3 >= spec.n_levels:
        raise IndexError(f"need 0 <= m and m + 3 < n_levels ({spec.n_levels})")
    e = spec.energies
    n = spec.charge_elements
    omega_q = float(e[1] - e[0])
    out = {}
    for j in (m + 1, m + 3, m - 1):
        if j < 0:
            continue
        d1 = omega_in + e[j] - e[m + 2]
        d2 = omega_in + e[m] - e[j]
        for d in (d1, d2):
            if abs(d) < POLE_FRACTION * omega_q:
                raise NearPoleError(
                    f"drive is within {POLE_FRACTION:g} omega_q of a pole through intermediate level {j}"
                )
        num = 2.0 * e[j] - e[m] - e[m + 2]
        out[j] = float(n[m + 2, j] * n[j, m] * math.sqrt(n_in) * lambda_in * lambda_out * num / (d1 * d2))
    return out


def matrix_element_t_matrix(
    m: int,
    spec: SpectrumResult,
    lambda_in: float,
    lambda_out: float,
    n_in: float,
    omega_in: float,
) -> float:
    """Sum of :func:`t_matrix_contributions`, valid for any anharmonicity."""
    return float(sum(t_matrix_contributions(m, spec, lambda_in, lambda_out, n_in, omega_in).values()))


# ----------------------------------------------------- phenomenological lines


def lorentzian(x: float, width: float) -> float:
    """Unit-height Lorentzian of full width ``width``."""
    h = 0.5 * width
    return h * h / (h * h + x * x)


def tls_rate(gamma_peak: float, width: float, omega_transition: float, omega_tls: float) -> float:
    return gamma_peak * lorentzian(omega_transition - omega_tls, width)


def six_wave_rate(
    amplitude: float,
    width: float,
    omega_in: float,
    omega_s: float,
    spec: SpectrumResult,
    delta_omega: float,
    initial: int = 1,
    final: int = 3,
    n_photons: int = 3,
) -> float:
    """Mixing feature: ``A dw^n`` times a Lorentzian in the matching detuning."""
    _nonneg(amplitude=amplitude, delta_omega=delta_omega)
    det = n_photons * omega_in - stark_shifted_transition(spec, initial, final, delta_omega) - omega_s
    return amplitude * delta_omega**n_photons * lorentzian(det, width)


# --------------------------------------------------------------- assembly


def _resolve_ec(spec, e_c):
    if e_c is not None:
        return e_c
    if spec.params is None:
        raise ValueError("e_c is required when the spectrum carries no TransmonParams")
    return spec.params.e_c


def assemble_rate_set(
    spec: SpectrumResult,
    env: EnvironmentModel,
    drive: DriveSpec,
    temperature: float,
    gamma_down_0: float,
    e_c: float | None = None,
    e_j: float | None = None,
    two_photon: bool = False,
    two_out: bool = False,
) -> RateSet:
    """All rates out of |0> and |1> at one drive setting.

    Thermal entries: ``0->1``, ``1->0`` from detailed balance and ``1->2``
    whose downward partner is ``gamma_down_0`` scaled by the squared charge
    matrix-element ratio ``|<2|N|1>|^2 / |<1|N|0>|^2``. TLS peaks add to the
    same three pairs. Raman entries ``0->2``, ``1->3`` need a drive, as do
    the optional two-photon and two-photon-out entries and any mixing
    features listed in ``env``.
    """
    e_c = _resolve_ec(spec, e_c)
    if (two_out or two_photon) and e_j is None:
        e_j = spec.params.e_j if spec.params is not None else None
    w10 = transition_frequency(spec, 0, 1)
    w21 = transition_frequency(spec, 1, 2)
    dw = drive.delta_omega
    entries: list[RateEntry] = []

    g10, g01 = thermal_rates(w10, temperature, gamma_down_0)
    n = spec.charge_elements
    g21 = gamma_down_0 * (n[2, 1] / n[1, 0]) ** 2
    _, g12 = thermal_rates(w21, temperature, g21)
    entries += [
        RateEntry(0, 1, g01, "thermal"),
        RateEntry(1, 0, g10, "thermal"),
        RateEntry(1, 2, g12, "thermal"),
    ]

    for d in env.tls:
        for (i, f), (lo, hi) in (((1, 0), (0, 1)), ((0, 1), (0, 1)), ((1, 2), (1, 2))):
            r = tls_rate(d.gamma_peak, d.width, stark_shifted_transition(spec, lo, hi, dw), d.omega_tls)
            entries.append(RateEntry(i, f, r, "tls"))

    if dw > 0:
        for m in (0, 1):
            w_out = raman_output_frequency(spec, m, drive.omega_in)
            if w_out <= 0:
                continue
            wz = total_weighted_impedance(env, e_c, w10, w_out)
            entries.append(RateEntry(m, m + 2, raman_rate(m, w10, wz, dw), "raman"))

        if two_photon:
            for m, direction, final in ((1, "down", 0), (0, "up", 1)):
                w_out = two_photon_output_frequency(spec, m, direction, drive.omega_in)
                if w_out <= 0:
                    continue
                wz = total_weighted_impedance(env, e_c, w10, w_out)
                r = two_photon_rate(m, direction, w10, w_out, wz, dw, e_c)
                entries.append(RateEntry(m, final, r, "two_photon"))

        if two_out:
            for m, direction, final in ((1, "down", 0), (0, "up", 1), (1, "up", 2)):
                r = two_out_rate(m, direction, drive.omega_in, spec, env, dw, e_j, e_c=e_c)
                entries.append(RateEntry(m, final, r, "two_out"))

        for mx in env.mixing:
            if mx.final >= spec.n_levels:
                continue
            r = six_wave_rate(
                mx.amplitude, mx.width, drive.omega_in, mx.omega_s, spec, dw, mx.initial, mx.final, mx.n_photons
            )
            entries.append(RateEntry(mx.initial, mx.final, r, "resonant"))

    return RateSet(tuple(entries))


def rates_to_rows(rate_sets: Iterable[tuple[float, RateSet]]) -> list[dict]:
    """Flatten ``(delta_omega, RateSet)`` pairs into plot-ready rows (Hz units)."""
    rows = []
    for dw, rs in rate_sets:
        for e in rs:
            rows.append(
                {
                    "delta_omega_hz": dw / (2 * math.pi),
                    "initial": e.initial,
                    "final": e.final,
                    "rate_hz": e.rate,
                    "mechanism": e.mechanism,
                }
            )
    return rows
