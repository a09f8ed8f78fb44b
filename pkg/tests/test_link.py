import logging
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gffopt import edfa, kernels, link
from gffopt.exceptions import GFFInfeasibleError, UsageError
from gffopt.grid import C_BAND, PLANCK

FLAT17 = link.LaunchProfile.flat(17.0)


def noiseless_state(launch=FLAT17):
    return link.ChannelState.launch(launch)


@pytest.fixture(scope="module")
def stub10():
    return edfa.constant_gain_model(10.0)


def brute_force_counts(f, target=13_400.0):
    """Count patterns by walking distance until the target is reached."""
    span = 53.7 if f == 1 else 62.7
    per = span * (1 if f == 1 else f - 1)
    m, dist = 0, 0.0
    while dist < target - 1e-6:
        m += 1
        dist = m * per
    return m, m * f, dist


@pytest.mark.parametrize("f", range(1, 21))
def test_design_matches_brute_force(f):
    d = link.design_link(f)
    m, amps, dist = brute_force_counts(f)
    assert (d.patterns, d.amplifiers, d.gffs) == (m, amps, m)
    assert d.total_km == pytest.approx(dist)
    assert d.total_km >= 13_400.0


def test_design_reference_counts():
    d1, d2, d7 = link.design_link(1), link.design_link(2), link.design_link(7)
    assert (d1.amplifiers, d1.gffs) == (250, 250)
    assert d1.total_km == pytest.approx(13_425.0)
    assert (d7.patterns, d7.amplifiers, d7.gffs) == (36, 252, 36)
    assert d7.total_km == pytest.approx(13_543.2)
    assert abs(d2.amplifiers - 430) <= 2


def test_design_rejects_bad_frequency():
    for f in (0, -1, 2.5):
        with pytest.raises(UsageError):
            link.design_link(f)


def test_span_loss():
    assert link.FibreSpec(53.7).loss_db == pytest.approx(8.565, abs=5e-4)
    assert link.FibreSpec(62.7).loss_db == pytest.approx(10.0, abs=1e-3)
    out = link.propagate_span(noiseless_state(), link.FibreSpec(62.7))
    np.testing.assert_allclose(out.signal / FLAT17.power_w, 10 ** -1.000065, rtol=1e-12)
    with pytest.raises(UsageError):
        link.FibreSpec(10.0, alpha_db_per_km=0.0)


def test_zero_length_span_is_identity():
    s = noiseless_state()
    out = link.propagate_span(s, link.FibreSpec(0.0))
    np.testing.assert_array_equal(out.signal, s.signal)
    np.testing.assert_array_equal(out.ase, s.ase)


def test_link_description_roundtrip(tmp_path):
    d = link.design_link(5)
    link.write_link_description(d, 4.8, tmp_path / "l.json")
    back, nf = link.read_link_description(tmp_path / "l.json")
    assert back == d and nf == 4.8


def test_noiseless_edfa_stub(stub10):
    out = link.apply_edfa(noiseless_state(), stub10, nf_db=-math.inf)
    np.testing.assert_allclose(out.signal, 10 * FLAT17.power_w, rtol=1e-12)
    assert np.all(out.ase == 0)
    assert out.amplifiers == 1


def test_edfa_ase_formula(stub10):
    out = link.apply_edfa(noiseless_state(), stub10, nf_db=5.0)
    f = C_BAND.frequencies_hz
    expected = 10**0.5 / 2 * PLANCK * f * 9.0 * 50e9
    np.testing.assert_allclose(out.ase, expected, rtol=1e-12)
    # plugging G = 10, f = 193.5 THz into the same expression
    assert 10**0.5 / 2 * PLANCK * 193.5e12 * 9.0 * 50e9 == pytest.approx(9.12e-8, rel=1e-3)


def test_unity_gain_adds_no_ase():
    out = link.apply_edfa(noiseless_state(), edfa.constant_gain_model(0.0), nf_db=6.0)
    np.testing.assert_allclose(out.ase, 0.0, atol=1e-30)


def test_gff_identity_and_idempotent():
    s = link.ChannelState(FLAT17.power_w * 0.9, FLAT17.power_w * 0.1)
    same = link.apply_gff(s, FLAT17.power_w)
    np.testing.assert_allclose(same.signal, s.signal, rtol=1e-15)
    hot = s.scaled(np.linspace(1.5, 4.0, 89))
    once = link.apply_gff(hot, FLAT17.power_w)
    twice = link.apply_gff(once, FLAT17.power_w)
    np.testing.assert_allclose(twice.signal, once.signal, rtol=1e-14)
    np.testing.assert_allclose(once.total, FLAT17.power_w, rtol=1e-14)


def test_gff_infeasible():
    s = link.ChannelState(FLAT17.power_w.copy(), np.zeros(89))
    s.signal[30] *= 0.5
    with pytest.raises(GFFInfeasibleError) as exc:
        link.apply_gff(s, FLAT17.power_w)
    assert exc.value.channel == 30
    assert exc.value.shortfall_db == pytest.approx(10 * math.log10(2), rel=1e-12)


def test_f2_pattern_headroom(surrogate, calibrated_nf):
    d = link.design_link(2)
    ref = 10 ** (-link.REFERENCE_GAIN_DB / 10)
    s = link.ChannelState.launch(FLAT17).scaled(ref)
    s = link.apply_edfa(s, surrogate, nf_db=calibrated_nf)
    s = link.propagate_span(s, d.fibre)
    s = link.apply_edfa(s, surrogate, nf_db=calibrated_nf)
    headroom = 10 * np.log10(s.total / (FLAT17.power_w * ref))
    assert np.all(headroom >= 0)
    assert abs(np.mean(headroom) - 10.0) < 1.0


def test_stub_pattern_returns_launch(stub10):
    for f in (1, 2, 5):
        out = link.propagate_pattern(FLAT17, link.design_link(f), stub10, -math.inf)
        np.testing.assert_allclose(out.signal, FLAT17.power_w, rtol=1e-12)
        assert out.amplifiers == f


def test_pattern_with_noise(surrogate, calibrated_nf):
    out = link.propagate_pattern(FLAT17, link.design_link(3), surrogate, calibrated_nf)
    assert np.all(out.signal < FLAT17.power_w)
    np.testing.assert_allclose(out.total, FLAT17.power_w, rtol=1e-12)
    assert out.amplifiers == 3


def test_explicit_vs_extrapolated(surrogate, calibrated_nf):
    d = link.design_link(2).with_patterns(3)
    a = link.propagate_full(FLAT17, d, surrogate, calibrated_nf, mode="explicit")
    b = link.propagate_full(FLAT17, d, surrogate, calibrated_nf, mode="extrapolated")
    np.testing.assert_allclose(a.ase, b.ase, rtol=1e-9)
    np.testing.assert_allclose(a.signal, b.signal, rtol=1e-12)
    one = d.with_patterns(1)
    x = link.propagate_full(FLAT17, one, surrogate, calibrated_nf, mode="explicit")
    y = link.propagate_full(FLAT17, one, surrogate, calibrated_nf, mode="extrapolated")
    np.testing.assert_allclose(x.ase, y.ase, rtol=1e-12)
    with pytest.raises(UsageError):
        link.propagate_full(FLAT17, one, surrogate, calibrated_nf, mode="fast")


def test_ase_linear_in_repeater_count(surrogate, calibrated_nf):
    d = link.design_link(1)
    full = link.propagate_full(FLAT17, d, surrogate, calibrated_nf)
    half = link.propagate_full(FLAT17, d.with_patterns(125), surrogate, calibrated_nf)
    ratio = full.ase / half.ase
    np.testing.assert_allclose(ratio, 2.0, rtol=0.01)
    # ratio is exactly 1 + rho**125 because each pattern keeps a fixed signal fraction
    rho125 = half.signal / FLAT17.power_w
    np.testing.assert_allclose(ratio, 1 + rho125, rtol=1e-9)


def test_ase_monotone_along_cascade(surrogate, calibrated_nf):
    d = link.design_link(4)
    s = link.ChannelState.launch(FLAT17)
    runner = link.PatternRunner(d, surrogate, calibrated_nf)
    prev = s.ase
    for _ in range(6):
        s = runner.run(s, FLAT17.power_w)
        assert np.all(s.ase >= prev)
        prev = s.ase


def test_runner_matches_element_composition(surrogate, calibrated_nf):
    d = link.design_link(3)
    ref = 10 ** (-link.REFERENCE_GAIN_DB / 10)
    s = link.ChannelState.launch(FLAT17).scaled(ref)
    for _ in range(d.gff_frequency - 1):
        s = link.apply_edfa(s, surrogate, nf_db=calibrated_nf)
        s = link.propagate_span(s, d.fibre)
    s = link.apply_edfa(s, surrogate, nf_db=calibrated_nf)
    s = link.apply_gff(s, FLAT17.power_w * ref)
    out = link.propagate_pattern(FLAT17, d, surrogate, calibrated_nf)
    np.testing.assert_allclose(out.signal, s.signal / ref, rtol=1e-10)
    np.testing.assert_allclose(out.ase, s.ase / ref, rtol=1e-10)


@pytest.mark.skipif("cython" not in kernels.BACKENDS, reason="compiled kernels not built")
def test_backends_agree(surrogate, calibrated_nf):
    d = link.design_link(5)
    spectrum = link.LaunchProfile(17.0 - 10 * np.log10(89) + np.sin(np.arange(89) / 9.0))
    results = {}
    for name in ("python", "cython"):
        kernels.use_backend(name)
        try:
            results[name] = link.propagate_full(spectrum, d, surrogate, calibrated_nf, mode="explicit")
        finally:
            kernels.use_backend("cython")
    np.testing.assert_allclose(results["python"].ase, results["cython"].ase, rtol=1e-11)
    np.testing.assert_allclose(results["python"].signal, results["cython"].signal, rtol=1e-11)


def test_unknown_backend():
    with pytest.raises(UsageError):
        kernels.use_backend("fortran")


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(0.05, 20.0), min_size=89, max_size=89), st.floats(0.0, 200.0))
def test_span_scales_signal_and_ase_equally(sig_mw, km):
    sig = np.array(sig_mw) * 1e-3
    s = link.ChannelState(sig, sig * 0.01)
    out = link.propagate_span(s, link.FibreSpec(km))
    np.testing.assert_allclose(out.signal / s.signal, out.ase / s.ase, rtol=1e-12)
    assert out.distance_km == pytest.approx(km)


def test_envelope_warning_once_per_runner(surrogate, calibrated_nf, caplog):
    # 22 dBm at the launch plane puts the first amplifier input at 12 dBm, above the trained range
    hot = link.LaunchProfile.flat(22.0)
    runner = link.PatternRunner(link.design_link(2), surrogate, calibrated_nf)
    with caplog.at_level(logging.WARNING, logger="gffopt.edfa"):
        for _ in range(3):
            try:
                runner.run(link.ChannelState.launch(hot), hot.power_w)
            except GFFInfeasibleError:
                pass
    assert runner.envelope_violations == 3
    assert len([r for r in caplog.records if "envelope" in r.message]) == 1
