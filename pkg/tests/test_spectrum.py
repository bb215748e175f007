import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from readout_transitions.constants import TWO_PI, mhz
from readout_transitions.spectrum import (
    FluxTunableTransmon,
    SpectrumResult,
    TransmonParams,
    TruncationError,
    eigensystem,
    ej_for_transition_frequency,
    ej_from_qubit_frequency,
    flux_for_ej,
    plasma_frequency,
    squid_ej,
    stark_shifted_transition,
    transition_frequency,
)

from .conftest import E_C, OMEGA_Q

ratios = st.floats(min_value=20.0, max_value=2000.0)


def _phase_grid_levels(e_c, e_j, n_points, n_levels):
    """Independent oracle: periodic finite differences in the phase basis."""
    h = TWO_PI / n_points
    phi = -math.pi + h * np.arange(n_points)
    ham = np.diag(8.0 * e_c / h**2 - e_j * np.cos(phi))
    off = -4.0 * e_c / h**2
    idx = np.arange(n_points)
    ham[idx, (idx + 1) % n_points] = off
    ham[(idx + 1) % n_points, idx] = off
    w, v = np.linalg.eigh(ham)
    return w[:n_levels] - w[0], v[:, :n_levels], h


# ------------------------------------------------------------------ params


def test_params_reject_non_positive():
    with pytest.raises(ValueError):
        TransmonParams(0.0, 1.0)
    with pytest.raises(ValueError):
        TransmonParams(1.0, -1.0)


def test_params_warn_outside_transmon_regime():
    with pytest.warns(UserWarning, match="transmon regime"):
        TransmonParams(1.0, 10.0)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        TransmonParams(1.0, 20.0)


def test_eigensystem_preconditions(params):
    with pytest.raises(ValueError):
        eigensystem(params, n_levels=1)
    with pytest.raises(ValueError):
        eigensystem(params, n_cut=15, n_levels=6)


# ----------------------------------------------------------- paper device


def test_qubit_frequency_convention(spec):
    assert spec.energies[0] == 0.0
    assert transition_frequency(spec, 0, 1) == pytest.approx(OMEGA_Q, rel=1e-10)


def test_anharmonicity_at_working_point(spec):
    alpha = (transition_frequency(spec, 0, 1) - transition_frequency(spec, 1, 2)) / mhz(1.0)
    assert 36.0 <= alpha <= 44.0


def test_two_photon_transition_frequency(spec):
    # frozen from the exact diagonalization, consistent with ~40 MHz anharmonicity
    assert transition_frequency(spec, 0, 2) / mhz(1.0) == pytest.approx(1476.0, abs=2.0)


def test_working_point_josephson_energy(params):
    # exact 0-1 frequency inversion; frozen value
    assert params.e_j / mhz(1.0) == pytest.approx(2199.3, abs=0.1)
    assert ej_from_qubit_frequency(E_C, OMEGA_Q) / mhz(1.0) == pytest.approx(1995.0, abs=0.1)


def test_transition_18_near_drive():
    dev = FluxTunableTransmon.from_max_frequency(E_C, mhz(1530.0))
    spec = dev.spectrum(dev.flux_for_qubit_frequency(mhz(1500.0)), n_levels=10)
    assert transition_frequency(spec, 1, 8) / mhz(1.0) == pytest.approx(9280.0, abs=60.0)


def test_transition_frequency_errors(spec):
    with pytest.raises(ValueError):
        transition_frequency(spec, 0, 0)
    with pytest.raises(ValueError):
        transition_frequency(spec, 2, 1)
    with pytest.raises(IndexError):
        transition_frequency(spec, 0, spec.n_levels)


# ------------------------------------------------------------------ oracles


def test_fourth_order_perturbation_oracle():
    e_j = 50 * E_C
    spec = eigensystem(TransmonParams(E_C, e_j), n_levels=4)
    oracle = math.sqrt(8 * e_j * E_C) - E_C
    assert transition_frequency(spec, 0, 1) == pytest.approx(oracle, rel=0.01)


@pytest.mark.parametrize("ratio", [20.0, 55.0, 220.0])
def test_phase_grid_oracle(ratio):
    e_j = ratio * E_C
    spec = eigensystem(TransmonParams(E_C, e_j), n_levels=6)
    ref, vecs, h = _phase_grid_levels(E_C, e_j, 1600, 6)
    coarse, _, _ = _phase_grid_levels(E_C, e_j, 800, 6)
    # Richardson step removes the O(h^2) discretization error
    ref = (4 * ref - coarse) / 3
    np.testing.assert_allclose(spec.energies[1:], ref[1:], rtol=1e-7)
    # charge element <1|N|0> with N = -i d/dphi, central differences
    dpsi = (np.roll(vecs[:, 0], -1) - np.roll(vecs[:, 0], 1)) / (2 * h)
    n10 = abs(vecs[:, 1] @ dpsi)
    assert abs(spec.charge_elements[1, 0]) == pytest.approx(n10, rel=1e-4)


def test_dense_solver_agrees():
    p = TransmonParams(E_C, 61.0 * E_C)
    spec = eigensystem(p, n_cut=30, n_levels=8)
    k = np.arange(-30, 31)
    ham = np.diag(4 * E_C * k**2.0) - 0.5 * p.e_j * (np.eye(61, k=1) + np.eye(61, k=-1))
    w, v = np.linalg.eigh(ham)
    np.testing.assert_allclose(spec.energies, w[:8] - w[0], rtol=1e-11, atol=1e-6 * E_C)
    charge = v[:, :8].T @ (k[:, None] * v[:, :8])
    np.testing.assert_allclose(np.abs(spec.charge_elements), np.abs(charge), atol=1e-10)


def test_harmonic_limit():
    errs = []
    for ratio in (1e2, 1e3, 1e4):
        e_j = ratio * E_C
        spec = eigensystem(TransmonParams(E_C, e_j), n_cut=80, n_levels=3)
        errs.append(abs(transition_frequency(spec, 0, 1) / math.sqrt(8 * e_j * E_C) - 1))
    assert errs[0] > errs[1] > errs[2]
    assert errs[2] < 5e-3


@pytest.mark.parametrize("ratio", [100.0, 200.0, 500.0])
def test_asymptotic_three_level_element(ratio):
    spec = eigensystem(TransmonParams(E_C, ratio * E_C), n_levels=8)
    w_q = transition_frequency(spec, 0, 1)
    n_zpf = (ratio / 32.0) ** 0.25
    pred = E_C / (4 * w_q) * math.sqrt(6.0) * n_zpf
    assert abs(spec.charge_elements[3, 0]) == pytest.approx(pred, rel=0.10)
    if ratio >= 200:
        pred1 = E_C / (4 * w_q) * math.sqrt(24.0) * n_zpf
        assert abs(spec.charge_elements[4, 1]) == pytest.approx(pred1, rel=0.10)


# --------------------------------------------------------------- invariants


@settings(max_examples=40, deadline=None)
@given(ratio=ratios)
def test_parity_zeros(ratio):
    spec = eigensystem(TransmonParams(1.0, ratio), n_levels=10)
    n = spec.charge_elements
    scale = np.abs(n).max()
    m, k = np.indices(n.shape)
    assert np.all(np.abs(n[(m - k) % 2 == 0]) <= 1e-12 * scale)
    np.testing.assert_allclose(np.abs(n), np.abs(n.T), atol=1e-12 * scale)
    assert np.all(np.diag(n, -1) >= 0)


@settings(max_examples=40, deadline=None)
@given(ratio=ratios)
def test_levels_increasing_and_anharmonic(ratio):
    spec = eigensystem(TransmonParams(1.0, ratio), n_levels=8)
    assert np.all(np.diff(spec.energies) > 0)
    assert transition_frequency(spec, 1, 2) < transition_frequency(spec, 0, 1)


@settings(max_examples=20, deadline=None)
@given(ratio=ratios)
def test_truncation_stability(ratio):
    p = TransmonParams(1.0, ratio)
    a = eigensystem(p, n_cut=40, n_levels=10).energies
    b = eigensystem(p, n_cut=80, n_levels=10).energies
    np.testing.assert_allclose(a[1:], b[1:], rtol=1e-9)


def test_truncation_error_raised():
    with pytest.raises(TruncationError, match="n_cut"):
        eigensystem(TransmonParams(E_C, 1e5 * E_C), n_cut=40, n_levels=30)


@settings(max_examples=50, deadline=None)
@given(m=st.integers(0, 6), gap=st.integers(1, 5), dw=st.floats(0.0, 1e9))
def test_stark_rule(spec, m, gap, dw):
    n = m + gap
    base = stark_shifted_transition(spec, m, n, 0.0)
    assert base == transition_frequency(spec, m, n)
    shifted = stark_shifted_transition(spec, m, n, dw)
    # exact up to the rounding of one subtraction
    assert shifted - base == pytest.approx(-(n - m) * dw, rel=1e-12, abs=4e-16 * base)


def test_stark_examples(spec):
    dw = mhz(3.0)
    assert stark_shifted_transition(spec, 0, 1, dw) == pytest.approx(transition_frequency(spec, 0, 1) - dw)
    assert stark_shifted_transition(spec, 1, 3, dw) == pytest.approx(transition_frequency(spec, 1, 3) - 2 * dw)
    with pytest.raises(ValueError):
        stark_shifted_transition(spec, 0, 1, -1.0)


# ------------------------------------------------------------ plasma & squid


def test_plasma_frequency_examples():
    w = plasma_frequency(TransmonParams(mhz(36.0), mhz(1995.0)))
    assert w / mhz(1.0) == pytest.approx(757.9, abs=0.1)
    with pytest.warns(UserWarning):
        assert plasma_frequency(TransmonParams(3.0, 3.0)) == pytest.approx(math.sqrt(8) * 3.0)
    a = plasma_frequency(TransmonParams(1.0, 50.0))
    assert plasma_frequency(TransmonParams(2.0, 100.0)) == pytest.approx(2 * a, rel=1e-14)


@given(e_c=st.floats(1e6, 1e9), w=st.floats(1e8, 1e11))
def test_plasma_round_trip(e_c, w):
    e_j = ej_from_qubit_frequency(e_c, w)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        assert plasma_frequency(TransmonParams(e_c, e_j)) == pytest.approx(w, rel=1e-12)


def test_ej_from_qubit_frequency_errors():
    with pytest.raises(ValueError):
        ej_from_qubit_frequency(0.0, 1.0)
    assert ej_from_qubit_frequency(2.0, math.sqrt(8) * 2.0) == pytest.approx(2.0)


def test_exact_inversion_round_trip():
    for f in (520.0, 758.0, 1530.0):
        e_j = ej_for_transition_frequency(E_C, mhz(f))
        spec = eigensystem(TransmonParams(E_C, e_j), n_levels=3)
        assert transition_frequency(spec, 0, 1) == pytest.approx(mhz(f), rel=1e-10)


def test_squid_examples():
    assert squid_ej(5.0, 0.0) == 5.0
    assert squid_ej(5.0, 0.5) == pytest.approx(0.0, abs=1e-15)
    assert squid_ej(1.0, 0.42) == pytest.approx(abs(math.cos(0.42 * math.pi)), rel=1e-12)
    assert squid_ej(1.0, 0.42) == pytest.approx(0.249, abs=1e-3)
    assert squid_ej(1.0, 0.5, asymmetry=0.2) == pytest.approx(0.2)


@given(flux=st.floats(0.0, 0.49), d=st.floats(0.0, 0.9))
def test_squid_periodic_and_invertible(flux, d):
    assert squid_ej(2.0, flux + 1.0, d) == pytest.approx(squid_ej(2.0, flux, d), rel=1e-9, abs=1e-12)
    e_j = squid_ej(2.0, flux, d)
    assert squid_ej(2.0, flux_for_ej(2.0, e_j, d), d) == pytest.approx(e_j, rel=1e-9)


def test_flux_tunable_round_trip():
    dev = FluxTunableTransmon.from_max_frequency(E_C, mhz(1530.0))
    assert dev.qubit_frequency(0.0) == pytest.approx(mhz(1530.0), rel=1e-10)
    x = dev.flux_for_qubit_frequency(OMEGA_Q)
    assert dev.qubit_frequency(x) == pytest.approx(OMEGA_Q, rel=1e-9)
    assert 0.0 < x < 0.5


def test_spectrum_dict_round_trip(spec):
    back = SpectrumResult.from_dict(spec.to_dict())
    np.testing.assert_allclose(back.energies, spec.energies, rtol=1e-15)
    np.testing.assert_array_equal(back.charge_elements, spec.charge_elements)
    assert back.n_cut == spec.n_cut
