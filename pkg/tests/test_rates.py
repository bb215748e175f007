import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from readout_transitions.constants import HBAR, K_B, R_Q, mhz
from readout_transitions.environment import (
    EnvironmentModel,
    ReadoutChannel,
    SpuriousMode,
    TLSDefect,
    total_weighted_impedance,
)
from readout_transitions.rates import (
    DriveSpec,
    NearPoleError,
    RateEntry,
    RateSet,
    assemble_rate_set,
    density_weight_from_impedance,
    drive_participation_from_stark,
    golden_rule_rate,
    lorentzian,
    matrix_element_normal_mode,
    matrix_element_t_matrix,
    raman_output_frequency,
    raman_rate,
    raman_rate_simplified,
    rates_to_rows,
    six_wave_rate,
    stark_shift_from_drive,
    t_matrix_contributions,
    thermal_rates,
    tls_rate,
    two_out_rate,
    two_photon_output_frequency,
    two_photon_rate,
    two_photon_rate_resonant,
    two_photon_rate_simplified,
)
from readout_transitions.spectrum import SpectrumResult, transition_frequency

from .conftest import CHI, E_C, KAPPA, OMEGA_IN, OMEGA_Q, OMEGA_RES, TEMPERATURE

positive = st.floats(1e-3, 1e9)


# ------------------------------------------------------------------ types


def test_drive_spec_validation():
    with pytest.raises(ValueError):
        DriveSpec(OMEGA_IN, -1.0)
    with pytest.raises(ValueError):
        DriveSpec(0.0, 1.0)
    with pytest.raises(ValueError):
        DriveSpec(OMEGA_IN, mhz(1.0), n_bar=2.0, chi=CHI)
    d = DriveSpec.from_photon_number(OMEGA_IN, 2.0, -CHI)
    assert d.delta_omega == pytest.approx(2 * CHI)
    assert d.with_delta(3.0).delta_omega == 3.0


def test_rate_entry_validation():
    with pytest.raises(ValueError):
        RateEntry(1, 1, 1.0, "raman")
    with pytest.raises(ValueError):
        RateEntry(0, 1, -1.0, "raman")
    with pytest.raises(ValueError):
        RateEntry(0, 1, 1.0, "magic")


def test_rate_set_accessors_and_round_trip():
    rs = RateSet((RateEntry(0, 1, 0.5, "thermal"), RateEntry(0, 1, 0.25, "tls"), RateEntry(1, 3, 6.0, "raman")))
    assert rs.pairs() == [(0, 1), (1, 3)]
    assert rs.total(0, 1) == 0.75
    assert rs.get(0, 1, "tls").rate == 0.25
    assert rs.get(2, 3) is None
    assert len(rs.by_mechanism("raman")) == 1
    assert RateSet.from_dict(rs.to_dict()) == rs
    assert RateSet.from_csv(rs.to_csv()) == rs
    assert rs.to_csv().splitlines()[0] == "initial,final,rate_hz,mechanism"
    fit = RateSet((RateEntry(0, 2, 0.0, "fit", stderr=None, upper=0.1),))
    assert RateSet.from_dict(fit.to_dict()) == fit


# ------------------------------------------------------------------ Raman


def test_raman_zero_drive():
    assert raman_rate(0, OMEGA_Q, 1e-8, 0.0) == 0.0


@given(m=st.integers(0, 5), wz=st.one_of(st.just(0.0), st.floats(1e-12, 1e-3)), dw=positive)
def test_raman_linear(m, wz, dw):
    assert raman_rate(m, OMEGA_Q, wz, 2 * dw) == 2 * raman_rate(m, OMEGA_Q, wz, dw)


@given(wz=st.floats(1e-12, 1e-3), dw=positive)
def test_raman_prefactor(wz, dw):
    assert raman_rate(1, OMEGA_Q, wz, dw) == pytest.approx(3 * raman_rate(0, OMEGA_Q, wz, dw), rel=1e-15)


def test_raman_rejects_negative():
    with pytest.raises(ValueError):
        raman_rate(0, OMEGA_Q, -1.0, 1.0)
    with pytest.raises(ValueError):
        raman_rate(-1, OMEGA_Q, 1.0, 1.0)


def test_raman_simplified_value():
    # hand evaluation 2 kappa chi dw / (16 omega_q^2) at 1 MHz
    g = raman_rate_simplified(0, KAPPA, CHI, OMEGA_Q, mhz(1.0))
    assert g == pytest.approx(2.2145, abs=1e-3)
    assert raman_rate_simplified(1, KAPPA, CHI, OMEGA_Q, mhz(1.0)) == pytest.approx(3 * g, rel=1e-15)
    assert raman_rate_simplified(0, KAPPA, CHI, OMEGA_Q, mhz(2.0)) == pytest.approx(2 * g, rel=1e-15)


def test_raman_output_frequency(spec):
    assert raman_output_frequency(spec, 0, OMEGA_IN) / mhz(1.0) == pytest.approx(7804.0, abs=2.0)


# -------------------------------------------------------------- two-photon


@given(m=st.integers(1, 4), dw=st.floats(1.0, 1e8))
def test_two_photon_quadratic(m, dw):
    a = two_photon_rate(m, "down", OMEGA_Q, mhz(19000.0), 1e-9, dw, E_C)
    b = two_photon_rate(m, "down", OMEGA_Q, mhz(19000.0), 1e-9, 2 * dw, E_C)
    assert b == pytest.approx(4 * a, rel=1e-14)


def test_two_photon_edges(spec):
    assert two_photon_rate(0, "down", OMEGA_Q, mhz(19000.0), 1e-9, mhz(1.0), E_C) == 0.0
    assert two_photon_rate(0, "up", OMEGA_Q, mhz(17800.0), 1e-9, mhz(1.0), E_C) > 0.0
    with pytest.raises(ValueError):
        two_photon_rate(1, "sideways", OMEGA_Q, mhz(19000.0), 1e-9, 1.0, E_C)
    assert two_photon_output_frequency(spec, 1, "down", OMEGA_IN) == pytest.approx(2 * OMEGA_IN + OMEGA_Q)
    assert two_photon_output_frequency(spec, 0, "up", OMEGA_IN) == pytest.approx(2 * OMEGA_IN - OMEGA_Q)


def test_two_photon_suppressed_against_raman():
    dw = E_C
    two = two_photon_rate_simplified(1, KAPPA, CHI, OMEGA_RES, dw, E_C)
    raman = raman_rate_simplified(0, KAPPA, CHI, OMEGA_Q, dw)
    assert two < 0.05 * raman


def test_two_photon_pipeline_vs_closed_form(spec):
    # in the high-frequency, weak-coupling limit the general formula with the
    # reduced impedance tends to m/9 kappa chi dw^2 / (omega_res^2 E_C), half
    # of the quoted closed form (see notes); corrections are O(omega_q/omega_res)
    dw = mhz(1.0)
    gaps = []
    for f_res in (6e4, 2.4e5, 9.6e5):
        w_res = mhz(f_res)
        eta = 0.01
        chi = 2 * eta**2 * E_C * OMEGA_Q / w_res
        env = EnvironmentModel(channel=ReadoutChannel(w_res, KAPPA, eta, chi))
        w_out = two_photon_output_frequency(spec, 1, "down", w_res)
        wz = total_weighted_impedance(env, E_C, OMEGA_Q, w_out)
        full = two_photon_rate(1, "down", OMEGA_Q, w_out, wz, dw, E_C)
        simple = two_photon_rate_simplified(1, KAPPA, chi, w_res, dw, E_C)
        gaps.append(abs(full / simple - 0.5))
    assert gaps[0] > gaps[1] > gaps[2]
    assert gaps[2] < 1e-3


@pytest.fixture(scope="module")
def mode():
    return SpuriousMode(mhz(26720.0), mhz(20.0), mhz(50.0))


def test_two_photon_resonant(mode):
    dw = mhz(2.0)
    w = mode.omega_s
    peak = two_photon_rate_resonant(1, mode, OMEGA_Q, w, dw)
    closed = 1 * (4 / mode.kappa_s) * mode.g_s**2 * w**2 / (w**2 - OMEGA_Q**2) ** 2 * dw**2
    assert peak == pytest.approx(closed, rel=1e-12)
    half = two_photon_rate_resonant(1, mode, OMEGA_Q, w + mode.kappa_s / 2, dw)
    assert half == pytest.approx(peak / 2, rel=2e-3)
    assert two_photon_rate_resonant(1, SpuriousMode(w, mode.kappa_s, 0.0), OMEGA_Q, w, dw) == 0.0
    with pytest.raises(NearPoleError):
        two_photon_rate_resonant(1, mode, OMEGA_Q, OMEGA_Q, dw)


# ---------------------------------------------------------------- two-out


def test_two_out_zero_and_linear(spec, env, params):
    assert two_out_rate(1, "down", OMEGA_IN, spec, env, 0.0, params.e_j) == 0.0
    a = two_out_rate(1, "down", OMEGA_IN, spec, env, mhz(1.0), params.e_j)
    b = two_out_rate(1, "down", OMEGA_IN, spec, env, mhz(2.0), params.e_j)
    assert a > 0
    assert b == pytest.approx(2 * a, rel=1e-12)
    assert two_out_rate(0, "down", OMEGA_IN, spec, env, mhz(1.0), params.e_j) == 0.0


# ---------------------------------------------------------------- thermal


def test_thermal_limits():
    down, up = thermal_rates(OMEGA_Q, TEMPERATURE, 5.0)
    assert down == 5.0
    assert down / up == pytest.approx(math.exp(HBAR * OMEGA_Q / (K_B * TEMPERATURE)), rel=1e-14)
    _, up_hot = thermal_rates(OMEGA_Q, 1e6, 5.0)
    assert up_hot == pytest.approx(5.0, rel=1e-6)
    _, up_low = thermal_rates(1e-3, TEMPERATURE, 5.0)
    assert up_low == pytest.approx(5.0, rel=1e-6)
    with pytest.raises(ValueError):
        thermal_rates(OMEGA_Q, 0.0, 5.0)


# ---------------------------------------------------------- matrix element


def test_normal_mode_examples():
    assert matrix_element_normal_mode(0, 100.0, 0.0, 0.01, OMEGA_Q) == 0.0
    a = matrix_element_normal_mode(0, 100.0, 0.02, 0.01, OMEGA_Q)
    assert matrix_element_normal_mode(1, 100.0, 0.02, 0.01, OMEGA_Q) == pytest.approx(math.sqrt(3) * a)


def test_stark_shift_examples():
    assert stark_shift_from_drive(OMEGA_Q, 0.01, 0.0) == 0.0
    assert stark_shift_from_drive(OMEGA_Q, 0.01, 20.0) == pytest.approx(2 * stark_shift_from_drive(OMEGA_Q, 0.01, 10.0))
    n_bar = 3.0
    mu = drive_participation_from_stark(CHI * n_bar, OMEGA_Q, n_bar)
    assert stark_shift_from_drive(OMEGA_Q, mu, n_bar) == pytest.approx(CHI * n_bar, rel=1e-14)


@settings(max_examples=100)
@given(
    m=st.integers(0, 3),
    dw=st.floats(1e3, 1e8),
    n_in=st.floats(1.0, 1e4),
    re_z=st.floats(1e-6, 1e2),
    w_out=st.floats(1e9, 1e11),
    nu=st.floats(1e-12, 1e-6),
)
def test_golden_rule_chain(m, dw, n_in, re_z, w_out, nu):
    mu_in = drive_participation_from_stark(dw, OMEGA_Q, n_in)
    mu_out = math.sqrt(density_weight_from_impedance(re_z, w_out) / nu)
    element = matrix_element_normal_mode(m, n_in, mu_in, mu_out, OMEGA_Q)
    wz = OMEGA_Q / w_out * 2 * math.pi * re_z / R_Q
    assert golden_rule_rate(nu, element) == pytest.approx(raman_rate(m, OMEGA_Q, wz, dw), rel=1e-9)


def _harmonic_spectrum(omega, n_levels=8, n_zpf=1.3):
    energies = omega * np.arange(n_levels, dtype=float)
    charge = np.zeros((n_levels, n_levels))
    for m in range(n_levels - 1):
        charge[m + 1, m] = charge[m, m + 1] = n_zpf * math.sqrt(m + 1)
    return SpectrumResult(energies=energies, charge_elements=charge, n_cut=0)


def test_t_matrix_harmonic_first_term_vanishes():
    spec = _harmonic_spectrum(OMEGA_Q)
    w_in = 12.2 * OMEGA_Q
    n = spec.charge_elements
    for m in (0, 1, 2):
        terms = t_matrix_contributions(m, spec, 1.0, 1.0, 10.0, w_in)
        scale = n[m + 2, m + 1] * n[m + 1, m] * math.sqrt(10.0) * OMEGA_Q / (w_in - OMEGA_Q) ** 2
        assert abs(terms[m + 1]) <= 1e-12 * scale


def test_t_matrix_ground_state_has_no_lower_path(spec):
    terms = t_matrix_contributions(0, spec, 1.0, 1.0, 10.0, OMEGA_IN)
    assert set(terms) == {1, 3}
    terms1 = t_matrix_contributions(1, spec, 1.0, 1.0, 10.0, OMEGA_IN)
    assert set(terms1) == {0, 2, 4}
    assert matrix_element_t_matrix(1, spec, 1.0, 1.0, 10.0, OMEGA_IN) == pytest.approx(sum(terms1.values()))


def test_t_matrix_near_pole(spec):
    # omega_in = eps_2 - eps_1 makes the m=0, j=1 denominator vanish
    w = transition_frequency(spec, 1, 2)
    with pytest.raises(NearPoleError, match="level 1"):
        t_matrix_contributions(0, spec, 1.0, 1.0, 1.0, w)
    with pytest.raises(IndexError):
        t_matrix_contributions(spec.n_levels - 3, spec, 1.0, 1.0, 1.0, OMEGA_IN)


# ------------------------------------------------------------------ lines


def test_lorentzian_and_tls():
    assert lorentzian(0.0, 2.0) == 1.0
    assert lorentzian(1.0, 2.0) == pytest.approx(0.5)
    assert tls_rate(20.0, mhz(2.0), mhz(700.0), mhz(700.0)) == 20.0
    assert tls_rate(20.0, mhz(2.0), mhz(701.0), mhz(700.0)) == pytest.approx(10.0)


@given(dw=st.floats(1e3, 1e7))
def test_six_wave_cubic(spec, dw):
    args = dict(amplitude=1e-20, width=mhz(2.0), omega_in=OMEGA_IN, omega_s=mhz(26720.0), spec=spec)
    # move omega_in with dw so the Lorentzian factor stays fixed
    a = six_wave_rate(delta_omega=dw, **args)
    args["omega_in"] = OMEGA_IN - 2 * dw / 3
    b = six_wave_rate(delta_omega=2 * dw, **args)
    assert b == pytest.approx(8 * a, rel=1e-6)


# --------------------------------------------------------------- assembly


def test_assemble_drive_off(spec, env):
    rs = assemble_rate_set(spec, env, DriveSpec(OMEGA_IN, 0.0), TEMPERATURE, 5.0, two_photon=True)
    nonzero = {(e.initial, e.final) for e in rs if e.rate > 0}
    assert nonzero == {(0, 1), (1, 0), (1, 2)}
    assert all(e.mechanism == "thermal" for e in rs)


def test_assemble_raman_increasing(spec, env):
    prev = (0.0, 0.0)
    for f in (0.5, 1.0, 2.0, 4.0):
        rs = assemble_rate_set(spec, env, DriveSpec(OMEGA_IN, mhz(f)), TEMPERATURE, 5.0)
        cur = (rs.get(0, 2, "raman").rate, rs.get(1, 3, "raman").rate)
        assert cur[0] > prev[0] and cur[1] > prev[1]
        prev = cur


def test_assemble_thermal_ladder(spec, env):
    rs = assemble_rate_set(spec, env, DriveSpec(OMEGA_IN, 0.0), TEMPERATURE, 5.0)
    n = spec.charge_elements
    w21 = transition_frequency(spec, 1, 2)
    expected = 5.0 * (n[2, 1] / n[1, 0]) ** 2 * math.exp(-HBAR * w21 / (K_B * TEMPERATURE))
    assert rs.get(1, 2).rate == pytest.approx(expected, rel=1e-12)


def test_assemble_tls_and_mixing(spec, env):
    tls = TLSDefect(transition_frequency(spec, 0, 1) - mhz(1.0), 20.0, mhz(2.0))
    env2 = EnvironmentModel(channel=env.readout, tls=(tls,))
    rs = assemble_rate_set(spec, env2, DriveSpec(OMEGA_IN, mhz(1.0)), TEMPERATURE, 5.0)
    # the 0-1 line is Stark shifted exactly onto the defect
    assert rs.get(1, 0, "tls").rate == pytest.approx(20.0, rel=1e-12)
    assert rs.get(0, 1, "tls").rate == pytest.approx(20.0, rel=1e-12)


@settings(max_examples=25, deadline=None)
@given(f=st.floats(0.0, 8.0), temp=st.floats(0.005, 0.2))
def test_assemble_non_negative(spec, env, f, temp):
    rs = assemble_rate_set(spec, env, DriveSpec(OMEGA_IN, mhz(f)), temp, 5.0, two_photon=True)
    assert all(e.rate >= 0 for e in rs)
    assert all(e.initial != e.final for e in rs)


def test_rates_to_rows(spec, env):
    rs = assemble_rate_set(spec, env, DriveSpec(OMEGA_IN, mhz(1.0)), TEMPERATURE, 5.0)
    rows = rates_to_rows([(mhz(1.0), rs)])
    assert len(rows) == len(rs)
    assert rows[0]["delta_omega_hz"] == pytest.approx(1e6)
