"""Physical constants and unit helpers.

Internally every frequency and energy is an angular frequency in rad/s
(energies are stored as E/hbar). Files and the CLI speak ordinary
frequency in Hz, i.e. omega / 2pi.
"""

import math

from scipy import constants as _c

H = _c.h
HBAR = _c.hbar
E_CHARGE = _c.e
K_B = _c.k

#: Resistance quantum h / e^2 in ohm.
R_Q = H / E_CHARGE**2
#: Superconducting flux quantum h / 2e in Wb.
PHI_0 = H / (2 * E_CHARGE)

TWO_PI = 2 * math.pi


def hz_to_angular(f):
    return TWO_PI * f


def angular_to_hz(w):
    return w / TWO_PI


def mhz(f_mhz):
    """Angular frequency of ``f_mhz`` megahertz."""
    return TWO_PI * f_mhz * 1e6
