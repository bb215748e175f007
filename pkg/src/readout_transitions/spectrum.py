"""Transmon spectrum in the charge basis.

The Hamiltonian ``4 E_C N^2 - E_J cos(phi)`` (offset charge set to zero) is
a symmetric tridiagonal matrix in the Cooper-pair number basis
``|k>, k = -n_cut..n_cut``: diagonal ``4 E_C k^2``, off-diagonal ``-E_J/2``.
It commutes with the charge parity ``k -> -k``, so the even and odd blocks
are diagonalized separately, which keeps the parity zeros of ``<m|N|n>``
exact even for nearly degenerate levels above the barrier.
All energies are angular frequencies (E / hbar, rad/s).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import eigh_tridiagonal, eigvalsh_tridiagonal
from scipy.optimize import brentq

from .constants import TWO_PI

DEFAULT_N_CUT = 40
TRANSMON_REGIME_RATIO = 20.0
TRUNCATION_RTOL = 1e-9


class TruncationError(RuntimeError):
    """The charge-basis cutoff is too small for the requested levels."""


@dataclass(frozen=True)
class TransmonParams:
    """Charging and Josephson energies (rad/s) and the flux bias (Phi/Phi_0)."""

    e_c: float
    e_j: float
    flux: float = 0.0

    def __post_init__(self):
        if not (self.e_c > 0 and self.e_j > 0):
            raise ValueError(f"energies must be positive, got e_c={self.e_c!r}, e_j={self.e_j!r}")
        if self.e_j / self.e_c < TRANSMON_REGIME_RATIO:
            warnings.warn(
                f"E_J/E_C = {self.e_j / self.e_c:.1f} is below the transmon regime "
                f"({TRANSMON_REGIME_RATIO:g})",
                stacklevel=3,
            )

    @property
    def ratio(self) -> float:
        return self.e_j / self.e_c

    @classmethod
    def from_qubit_frequency(cls, e_c: float, omega_q: float, n_cut: int = DEFAULT_N_CUT):
        """Device whose exact 0-1 transition frequency equals ``omega_q``."""
        return cls(e_c=e_c, e_j=ej_for_transition_frequency(e_c, omega_q, n_cut=n_cut))


@dataclass(frozen=True)
class SpectrumResult:
    """Lowest eigenlevels (ground referenced) and charge matrix elements <m|N|n>."""

    energies: np.ndarray
    charge_elements: np.ndarray
    n_cut: int
    params: TransmonParams | None = field(default=None, compare=False)

    @property
    def n_levels(self) -> int:
        return len(self.energies)

    def to_dict(self) -> dict:
        return {
            "energies_hz": [float(e) / TWO_PI for e in self.energies],
            "charge_elements": np.asarray(self.charge_elements).tolist(),
            "n_cut": int(self.n_cut),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SpectrumResult":
        return cls(
            energies=np.asarray(data["energies_hz"], dtype=float) * TWO_PI,
            charge_elements=np.asarray(data["charge_elements"], dtype=float),
            n_cut=int(data["n_cut"]),
        )


def _sectors(e_c, e_j, n_cut):
    """Charge-parity blocks of the Hamiltonian.

    Even states use the basis ``|0>, (|k> + |-k>)/sqrt2`` and odd states
    ``(|k> - |-k>)/sqrt2``, ``k = 1..n_cut``. Both blocks stay tridiagonal;
    only the even block's first coupling picks up a factor sqrt2.
    """
    k = np.arange(n_cut + 1, dtype=float)
    off_even = np.full(n_cut, -0.5 * e_j)
    off_even[0] = -e_j / math.sqrt(2.0)
    even = (4.0 * e_c * k**2, off_even)
    odd = (4.0 * e_c * k[1:] ** 2, np.full(n_cut - 1, -0.5 * e_j))
    return k, even, odd


def _levels(e_c, e_j, n_cut, n_levels):
    _, even, odd = _sectors(e_c, e_j, n_cut)
    w = np.concatenate([
        eigvalsh_tridiagonal(*even, select="i", select_range=(0, min(n_levels, n_cut + 1) - 1)),
        eigvalsh_tridiagonal(*odd, select="i", select_range=(0, min(n_levels, n_cut) - 1)),
    ])
    w = np.sort(w)[:n_levels]
    return w - w[0]


def _check_truncation(e_c, e_j, n_cut, n_levels, top):
    ref = _levels(e_c, e_j, 2 * n_cut, n_levels)[-1]
    shift = abs(ref - top) / abs(ref)
    if shift > TRUNCATION_RTOL:
        raise TruncationError(
            f"level {n_levels - 1} moves by {shift:.2e} (relative) when n_cut doubles "
            f"from {n_cut}; increase n_cut"
        )


def eigensystem(
    params: TransmonParams,
    n_cut: int = DEFAULT_N_CUT,
    n_levels: int = 12,
    check_truncation: bool = True,
) -> SpectrumResult:
    """Diagonalize the transmon exactly in the charge basis.

    Parameters
    ----------
    params : TransmonParams
        Device energies. The flux field is not used here; pass a params
        object whose ``e_j`` already includes the SQUID modulation.
    n_cut : int
        Charge cutoff, the basis spans ``2*n_cut + 1`` states.
    n_levels : int
        Number of retained levels, at least 2 and at most ``n_cut - 10``.
    check_truncation : bool
        Re-solve with a doubled cutoff and raise :class:`TruncationError`
        if the highest retained level moves by more than 1e-9 (relative).

    Returns
    -------
    SpectrumResult
        Energies with ``energies[0] == 0`` and the real charge matrix.
        Eigenvector signs are fixed so that ``<m+1|N|m> >= 0``.
    """
    if n_levels < 2:
        raise ValueError("n_levels must be at least 2")
    if n_cut < n_levels + 10:
        raise ValueError(f"n_cut={n_cut} too small for n_levels={n_levels} (need n_levels + 10)")

    k, even, odd = _sectors(params.e_c, params.e_j, n_cut)
    w_e, a = eigh_tridiagonal(*even, select="i", select_range=(0, min(n_levels, n_cut + 1) - 1))
    w_o, b = eigh_tridiagonal(*odd, select="i", select_range=(0, min(n_levels, n_cut) - 1))
    w = np.concatenate([w_e, w_o])
    order = np.argsort(w, kind="stable")[:n_levels]
    w = w[order]
    # <even|N|odd> = sum_{k>0} k a_k b_k; same-parity elements vanish identically
    cross = (k[1:, None] * a[1:, :]).T @ b
    is_even = order < w_e.size
    idx = np.where(is_even, order, order - w_e.size)
    charge = np.zeros((n_levels, n_levels))
    for m in range(n_levels):
        for n in range(n_levels):
            if is_even[m] and not is_even[n]:
                charge[m, n] = charge[n, m] = cross[idx[m], idx[n]]
    sign = np.ones(n_levels)
    for m in range(1, n_levels):
        if sign[m - 1] * charge[m, m - 1] < 0:
            sign[m] = -1.0
    charge = sign[:, None] * charge * sign[None, :]
    energies = w - w[0]
    if check_truncation:
        _check_truncation(params.e_c, params.e_j, n_cut, n_levels, energies[-1])
    return SpectrumResult(energies=energies, charge_elements=charge, n_cut=n_cut, params=params)


def transition_frequency(spec: SpectrumResult, m: int, n: int) -> float:
    """Angular frequency (eps_n - eps_m)/hbar of the upward transition m -> n."""
    if not m < n:
        raise ValueError(f"need m < n, got m={m}, n={n}")
    if m < 0 or n >= spec.n_levels:
        raise IndexError(f"levels ({m}, {n}) outside 0..{spec.n_levels - 1}")
    return float(spec.energies[n] - spec.energies[m])


def plasma_frequency(params: TransmonParams) -> float:
    return math.sqrt(8.0 * params.e_j * params.e_c)


def ej_from_qubit_frequency(e_c: float, omega_q: float) -> float:
    """Invert ``omega_q = sqrt(8 E_J E_C)``."""
    if e_c <= 0 or omega_q <= 0:
        raise ValueError("e_c and omega_q must be positive")
    return omega_q**2 / (8.0 * e_c)


def ej_for_transition_frequency(e_c: float, omega_10: float, n_cut: int = DEFAULT_N_CUT) -> float:
    """Josephson energy for which the exact 0-1 transition sits at ``omega_10``.

    The harmonic estimate ``(omega_10 + E_C)^2 / 8 E_C`` seeds a bracket
    that is widened until it contains the root.
    """
    if e_c <= 0 or omega_10 <= 0:
        raise ValueError("e_c and omega_10 must be positive")

    def f(e_j):
        return _levels(e_c, e_j, n_cut, 2)[1] - omega_10

    guess = (omega_10 + e_c) ** 2 / (8.0 * e_c)
    lo, hi = 0.5 * guess, 2.0 * guess
    while f(lo) > 0:
        lo *= 0.5
    while f(hi) < 0:
        hi *= 2.0
    return brentq(f, lo, hi, xtol=1e-14 * guess, rtol=1e-15, maxiter=200)


def squid_ej(e_j_max: float, flux: float, asymmetry: float = 0.0) -> float:
    """Effective Josephson energy of a two-junction SQUID at ``flux`` (Phi/Phi_0)."""
    if e_j_max <= 0:
        raise ValueError("e_j_max must be positive")
    if not 0 <= asymmetry < 1:
        raise ValueError("asymmetry must lie in [0, 1)")
    c = math.cos(math.pi * flux)
    s = math.sin(math.pi * flux)
    return e_j_max * math.sqrt(c * c + asymmetry**2 * s * s)


def flux_for_ej(e_j_max: float, e_j: float, asymmetry: float = 0.0) -> float:
    """Flux in [0, 1/2] at which :func:`squid_ej` returns ``e_j``."""
    r2 = (e_j / e_j_max) ** 2
    if not asymmetry**2 <= r2 <= 1:
        raise ValueError("e_j outside the SQUID tuning range")
    c2 = (r2 - asymmetry**2) / (1 - asymmetry**2)
    return math.acos(math.sqrt(min(1.0, c2))) / math.pi


def stark_shifted_transition(spec: SpectrumResult, m: int, n: int, delta_omega: float) -> float:
    """Transition m -> n under a drive producing qubit Stark shift ``delta_omega``.

    Level m moves down by ``m * delta_omega``, so the m -> n line moves by
    ``-(n - m) * delta_omega``.
    """
    if delta_omega < 0:
        raise ValueError("delta_omega is the absolute Stark shift and must be >= 0")
    return transition_frequency(spec, m, n) - (n - m) * delta_omega


@dataclass(frozen=True)
class FluxTunableTransmon:
    """SQUID transmon with fixed ``e_c`` whose ``e_j`` is tuned by flux."""

    e_c: float
    e_j_max: float
    asymmetry: float = 0.0
    n_cut: int = DEFAULT_N_CUT

    @classmethod
    def from_max_frequency(cls, e_c, omega_q_max, asymmetry=0.0, n_cut=DEFAULT_N_CUT):
        e_j_max = ej_for_transition_frequency(e_c, omega_q_max, n_cut=n_cut)
        return cls(e_c=e_c, e_j_max=e_j_max, asymmetry=asymmetry, n_cut=n_cut)

    def params(self, flux: float) -> TransmonParams:
        return TransmonParams(self.e_c, squid_ej(self.e_j_max, flux, self.asymmetry), flux)

    def levels(self, flux: float, n_levels: int) -> np.ndarray:
        e_j = squid_ej(self.e_j_max, flux, self.asymmetry)
        return _levels(self.e_c, e_j, max(self.n_cut, n_levels + 10), n_levels)

    def qubit_frequency(self, flux: float) -> float:
        return float(self.levels(flux, 2)[1])

    def flux_for_qubit_frequency(self, omega_q: float) -> float:
        e_j = ej_for_transition_frequency(self.e_c, omega_q, n_cut=self.n_cut)
        return flux_for_ej(self.e_j_max, e_j, self.asymmetry)

    def spectrum(self, flux: float, n_levels: int = 12) -> SpectrumResult:
        return eigensystem(self.params(flux), n_cut=max(self.n_cut, n_levels + 10), n_levels=n_levels)
