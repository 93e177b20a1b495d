import json
import math

import numpy as np
import pytest

from nvdd import (
    FieldConfig,
    NoiseModel,
    NvParams,
    ReadoutModel,
    correlation_sequence,
    effective_coupling,
    evolve,
    numeric_coupling_oracle,
    readout_signal,
    resonance_tau,
)
from nvdd.experiments import (
    EnsembleSpec,
    ScanResult,
    calibrate_cr_plan,
    correlation_scan,
    coupling_map,
    ensemble_average,
    estimate_gate_time,
    fft_spectrum,
    find_dips,
    fit_oscillation,
    oscillation_scan,
    save_scan,
    spectrum_scan,
    transfer_fidelity,
)
from nvdd.propagator import QuantumState, _system
from nvdd.sequence import MY, Y
from nvdd.theory import GatePlan

from oracles import branch_frequencies, g_closed_form, transfer_populations

SPECTRUM_F = np.arange(2.5e6, 8.0e6 + 1, 20e3)


def _synthetic(freqs, span=4e-6, step=10e-9, amps=None):
    t = np.arange(0, span + step / 2, step)
    amps = amps or [1.0] * len(freqs)
    s = sum(a * np.cos(2 * np.pi * f * t) for a, f in zip(amps, freqs))
    return ScanResult(t, s, np.ones_like(t), np.ones_like(t), "t_free_s")


# ---------------------------------------------------------------- ScanResult

def test_scan_result_length_mismatch():
    with pytest.raises(ValueError):
        ScanResult([1, 2, 3], [0, 0], [1, 1, 1], [1, 1, 1])


def test_scan_result_needs_monotone_x():
    with pytest.raises(ValueError):
        ScanResult([1, 3, 2], [0, 0, 0], [1, 1, 1], [1, 1, 1])


def test_scan_result_accepts_descending_x():
    r = ScanResult([3, 2, 1], [0, 0, 0], [1, 1, 1], [1, 1, 1])
    assert len(r.x) == 3


# ---------------------------------------------------------------- spectrum

@pytest.fixture(scope="module")
def spectrum(params, field_280_5):
    return spectrum_scan(SPECTRUM_F, 80, params, field_280_5)


def test_spectrum_has_two_dips_at_branch_frequencies(spectrum):
    dips, _ = find_dips(spectrum)
    assert len(dips) == 2
    expected = branch_frequencies(0.28, 5e-3)
    # scan step is 20 kHz
    assert dips == pytest.approx(expected, abs=20e3)


def test_spectrum_raw_pair_normalizes(spectrum):
    assert np.allclose(spectrum.s, (spectrum.s0 - spectrum.s1) / (spectrum.s0 + spectrum.s1))
    assert spectrum.x_name == "f_dd_hz"
    assert spectrum.meta["n_p"] == 80


def test_spectrum_flat_without_off_axis_field(params):
    scan = spectrum_scan(SPECTRUM_F, 80, params, FieldConfig(0.28, 0.0))
    dips, _ = find_dips(scan)
    assert len(dips) == 0
    assert np.ptp(scan.s) < 0.05 * abs(np.median(scan.s))


def test_quadrupole_shift_moves_both_dips(params, field_280_5):
    # each dip follows its nuclear transition; a +1 MHz change of P moves
    # the pair (0, -1) and (1, 0) lines by -1 MHz. Forty pulses keep the
    # lower branch under a pi turn once its spacing grows.
    shifted = NvParams(quadrupole_p=params.quadrupole_p + 1e6)
    base, _ = find_dips(spectrum_scan(SPECTRUM_F, 40, params, field_280_5))
    moved, _ = find_dips(spectrum_scan(SPECTRUM_F - 1e6, 40, shifted, field_280_5))
    assert len(base) == 2
    assert len(moved) == 2
    assert moved - base == pytest.approx([-1e6, -1e6], abs=25e3)


def test_dip_positions_ignore_readout_scaling(params, field_280_5):
    f = np.arange(2.8e6, 3.2e6 + 1, 10e3)
    a = spectrum_scan(f, 80, params, field_280_5, readout=ReadoutModel(1.0, 0.3))
    b = spectrum_scan(f, 80, params, field_280_5, readout=ReadoutModel(5e4, 0.12))
    da, _ = find_dips(a)
    db, _ = find_dips(b)
    assert len(da) == 1
    assert np.argmin(a.s) == np.argmin(b.s)
    assert db == pytest.approx(da, abs=1.0)


def test_spectrum_rejects_bad_range(params, field_280_5):
    with pytest.raises(ValueError):
        spectrum_scan([], 80, params, field_280_5)
    with pytest.raises(ValueError):
        spectrum_scan([-1e6, 3e6], 80, params, field_280_5)


def test_spectrum_is_deterministic_with_shot_noise(params, field_280_5):
    kw = dict(readout=ReadoutModel(1e4, 0.3, True), seed=9)
    f = np.linspace(2.9e6, 3.1e6, 5)
    a = spectrum_scan(f, 16, params, field_280_5, **kw)
    b = spectrum_scan(f, 16, params, field_280_5, **kw)
    assert np.array_equal(a.s0, b.s0) and np.array_equal(a.s1, b.s1)


def test_spectrum_order_preserved_with_workers(params, field_280_5):
    f = np.linspace(2.9e6, 3.1e6, 6)
    a = spectrum_scan(f, 16, params, field_280_5, workers=1)
    b = spectrum_scan(f, 16, params, field_280_5, workers=2)
    assert np.array_equal(a.s, b.s)


# ---------------------------------------------------------------- oscillation

@pytest.fixture(scope="module")
def oscillation(params, field_280_5):
    return oscillation_scan(np.arange(0, 321, 8), params, field_280_5)


def test_oscillation_requires_multiples_of_8(params, field_280_5):
    with pytest.raises(ValueError):
        oscillation_scan([0, 12], params, field_280_5)


def test_oscillation_fit_matches_closed_form(oscillation, field_280_5):
    fit = fit_oscillation(oscillation)
    g = g_closed_form(field_280_5.b_z, field_280_5.b_perp)
    assert fit.g == pytest.approx(g, rel=0.15)
    assert fit.residual_rms < 0.1 * abs(fit.amplitude)


def test_oscillation_fit_matches_numeric_oracle(params, field_280_5, oscillation):
    fit = fit_oscillation(oscillation)
    oracle = abs(numeric_coupling_oracle(params, field_280_5))
    assert fit.g == pytest.approx(oracle, rel=0.15)


def test_fit_needs_enough_points(params, field_280_5):
    with pytest.raises((ValueError, RuntimeError)):
        fit_oscillation(oscillation_scan([0, 8, 16], params, field_280_5))


def test_dephasing_envelope_reaches_1_over_e_at_t2(params, field_280_5):
    n = np.arange(0, 161, 8)
    clean = oscillation_scan(n, params, field_280_5)
    noisy = oscillation_scan(n, params, field_280_5, noise=NoiseModel(t2_dd=10e-6))
    tau = clean.meta["tau"]
    t_total = n * (2 * tau + params.t_pi) + params.t_pi
    k = int(np.argmin(np.abs(t_total - 10e-6)))
    assert abs(clean.s[k]) > 0.02
    ratio = noisy.s / clean.s
    assert ratio[k] == pytest.approx(math.exp(-t_total[k] / 10e-6), rel=0.05)
    assert ratio[k] * math.e == pytest.approx(1.0, abs=0.1)


# ---------------------------------------------------------------- coupling map

def test_coupling_map_range_at_280_mT(params):
    m = coupling_map([0.28], np.linspace(2e-3, 7e-3, 11), params)
    lo, hi = float(np.nanmin(m.g_abs)), float(np.nanmax(m.g_abs))
    assert lo == pytest.approx(26e3, rel=0.02)
    assert hi == pytest.approx(90e3, rel=0.02)


def test_coupling_map_zero_row(params):
    m = coupling_map([0.2, 0.28, 0.35], [0.0, 3e-3], params)
    assert np.all(m.g_abs[:, 0] == 0)


def test_coupling_map_agrees_with_closed_form(params):
    bz, bp = [0.22, 0.3], [1e-3, 4e-3]
    m = coupling_map(bz, bp, params)
    for i, z in enumerate(bz):
        for j, p in enumerate(bp):
            assert m.g_abs[i, j] == pytest.approx(abs(g_closed_form(z, p)), rel=1e-9)


def test_coupling_map_flags_gslac(params):
    m = coupling_map([0.1024, 0.28], [3e-3], params)
    assert m.gslac_mask[0, 0] and np.isnan(m.g_abs[0, 0])
    assert not m.gslac_mask[1, 0] and np.isfinite(m.g_abs[1, 0])


def test_coupling_map_empty_grid(params):
    with pytest.raises(ValueError):
        coupling_map([], [1e-3], params)


def test_stage_bowl_minimum_at_zero_tilt_point(params):
    x = np.linspace(-2e-3, 2e-3, 21)
    y = np.linspace(-2e-3, 2e-3, 21)
    m = coupling_map(0.28, params=params, stage={"x": x, "y": y, "x0": 0.4e-3, "y0": -0.6e-3, "tilt": 2.5})
    i, j = np.unravel_index(np.nanargmin(m.g_abs), m.g_abs.shape)
    assert (x[j], y[i]) == pytest.approx((0.4e-3, -0.6e-3), abs=1e-9)
    assert m.mode == "stage"
    # rises away from the centre along every row and column through it
    assert np.all(np.diff(m.g_abs[i, j:]) > 0) and np.all(np.diff(m.g_abs[i, :j + 1]) < 0)


# ---------------------------------------------------------------- correlation and FFT

def test_fft_pure_tone():
    p = fft_spectrum(_synthetic([2.5e6]), n_peaks=1)
    assert p.peak_freqs[0] == pytest.approx(2.5e6, abs=0.05e6)


def test_fft_two_tones():
    p = fft_spectrum(_synthetic([1.9e6, 4.1e6]))
    assert p.splitting == pytest.approx(2.2e6, abs=0.1e6)
    assert list(p.peak_freqs) == sorted(p.peak_freqs)


def test_fft_constant_trace_has_no_peaks():
    t = np.linspace(0, 4e-6, 401)
    p = fft_spectrum(ScanResult(t, np.full_like(t, 0.3), np.ones_like(t), np.ones_like(t)))
    assert p.peak_freqs == ()


def test_fft_flags_short_span():
    p = fft_spectrum(_synthetic([3e6, 4e6], span=1.5e-6))
    assert p.under_resolved
    assert not fft_spectrum(_synthetic([3e6, 4e6], span=4e-6)).under_resolved


def test_fft_needs_uniform_sampling():
    t = np.array([0, 1, 2, 4, 5, 6]) * 1e-8
    with pytest.raises(ValueError):
        fft_spectrum(ScanResult(t, np.sin(t), np.ones(6), np.ones(6)))


@pytest.fixture(scope="module")
def correlation(params, field_280_5):
    return correlation_scan(np.arange(0, 4e-6 + 1e-12, 20e-9), None, params, field_280_5)


def test_correlation_splitting_is_a_z(correlation, params):
    p = fft_spectrum(correlation)
    assert p.splitting == pytest.approx(params.a_z, abs=0.15e6)
    assert not p.under_resolved


def test_correlation_zero_free_time_is_the_composed_sequence(params, field_280_5):
    model = {"dim": 9, "drive": "center"}
    scan = correlation_scan([0.0], None, params, field_280_5, dephase=False)
    n_p, tau = scan.meta["n_p"], scan.meta["tau"]
    system = _system(params, field_280_5, model)
    start = QuantumState.product(system.labels, 0, None)
    counts = []
    for last in (Y, MY):
        seq = correlation_sequence(n_p, tau, 0.0, params.t_pi, last)
        counts.append(readout_signal(evolve(start, seq, params, field_280_5, None, model), ReadoutModel()))
    assert scan.s0[0] == pytest.approx(counts[0], abs=1e-12)
    assert scan.s1[0] == pytest.approx(counts[1], abs=1e-12)


@pytest.mark.slow
@pytest.mark.parametrize("a_z", [1.0e6, 2.2e6, 3.0e6, 4.0e6])
def test_correlation_splitting_tracks_a_z(a_z):
    # 200 mT keeps the m_S = -1 nuclear levels apart for every a_z here
    params = NvParams(a_z=a_z)
    field = FieldConfig(0.2, 3e-3)
    scan = correlation_scan(np.arange(0, 4e-6 + 1e-12, 20e-9), None, params, field)
    p = fft_spectrum(scan)
    assert p.splitting == pytest.approx(a_z, abs=p.resolution)


def test_correlation_with_a_z_3_mhz_at_field_280_5(field_280_5):
    params = NvParams(a_z=3.0e6)
    scan = correlation_scan(np.arange(0, 4e-6 + 1e-12, 20e-9), None, params, field_280_5)
    assert fft_spectrum(scan).splitting == pytest.approx(3.0e6, abs=0.15e6)


def test_correlation_rejects_negative_time(params, field_280_5):
    with pytest.raises(ValueError):
        correlation_scan([-1e-9, 0.0], None, params, field_280_5)


# ---------------------------------------------------------------- ensemble

def test_ensemble_spec_validation():
    with pytest.raises(ValueError):
        EnsembleSpec(n_members=0)
    with pytest.raises(ValueError):
        EnsembleSpec(b_z_sigma=-1e-3)


def test_single_member_without_spread_equals_single_nv(params, field_280_5, oscillation):
    e = ensemble_average(oscillation_scan, EnsembleSpec(1, 0.0, 0.0), params, field_280_5,
                         n_p_list=oscillation.x.astype(int))
    assert np.array_equal(e.s, oscillation.s)


def test_vanishing_spread_converges_to_single_nv(params, field_280_5, oscillation):
    e = ensemble_average(oscillation_scan, EnsembleSpec(4, 1e-12, 1e-12), params, field_280_5,
                         n_p_list=oscillation.x.astype(int))
    assert np.max(np.abs(e.s - oscillation.s)) < 1e-6


def test_ensemble_oscillation_decays_faster(params, field_280_5):
    n = np.arange(0, 481, 8)
    single = oscillation_scan(n, params, field_280_5)
    e = ensemble_average(oscillation_scan, EnsembleSpec(8, 0.5e-3, 0.5e-3, seed=1), params, field_280_5,
                         n_p_list=n)
    late = slice(-20, None)
    assert np.std(e.s[late]) < 0.5 * np.std(single.s[late])


def test_ensemble_is_deterministic(params, field_280_5):
    spec = EnsembleSpec(3, 0.3e-3, 0.3e-3, seed=4)
    a = ensemble_average(oscillation_scan, spec, params, field_280_5, n_p_list=[0, 40, 80])
    b = ensemble_average(oscillation_scan, spec, params, field_280_5, n_p_list=[0, 40, 80])
    assert np.array_equal(a.s, b.s)
    assert a.meta["member_fields"] == b.meta["member_fields"]


@pytest.mark.slow
def test_ensemble_correlation_splitting(params, field_280_5):
    spec = EnsembleSpec(4, 0.5e-3, 0.5e-3, 10e-6, seed=2)
    e = ensemble_average(correlation_scan, spec, params, field_280_5,
                         t_free_range=np.arange(0, 4e-6 + 1e-12, 20e-9))
    assert fft_spectrum(e).splitting == pytest.approx(2.2e6, abs=0.15e6)


# ---------------------------------------------------------------- transfer

@pytest.fixture(scope="module")
def half_plan(params, field_280_5):
    return calibrate_cr_plan(params, field_280_5, math.pi / 2)


def test_transfer_full_at_half_pi(params, field_280_5, half_plan):
    (row,) = transfer_fidelity([math.pi / 2], params, field_280_5, plan=half_plan)
    assert row.p1 == pytest.approx(1.0, abs=0.02)


def test_transfer_nothing_at_zero(params, field_280_5, half_plan):
    (row,) = transfer_fidelity([0.0], params, field_280_5, plan=half_plan)
    assert row.p1 == pytest.approx(0.0, abs=0.02)


def test_transfer_quarter_pi_half_superposition(params, field_280_5, half_plan):
    c = (math.sqrt(0.5), math.sqrt(0.5))
    (row,) = transfer_fidelity([math.pi / 4], params, field_280_5, c=c, plan=half_plan)
    e0, e1 = transfer_populations(math.pi / 4, 0.5, 0.5)
    assert (row.p0_expected, row.p1_expected) == pytest.approx((e0, e1))
    assert row.p1_expected == pytest.approx(0.25)
    assert row.p1 == pytest.approx(0.25, abs=0.02)


def test_transfer_grid_matches_closed_forms(params, field_280_5, half_plan):
    rows = transfer_fidelity(np.linspace(0, math.pi, 17), params, field_280_5, plan=half_plan)
    assert max(r.error for r in rows) <= 0.02
    assert all(r.p0 + r.p1 <= 1 + 1e-9 for r in rows)


def test_transfer_rejects_negative_theta(params, field_280_5, half_plan):
    with pytest.raises(ValueError):
        transfer_fidelity([-0.1], params, field_280_5, plan=half_plan)


# ---------------------------------------------------------------- gate time

def _plan(n_p=40, tau=50e-9):
    return GatePlan(n_p, tau, math.pi / 2, n_p * (2 * tau + 35e-9), 0.0, 35e-9, 0.28, 5e-3, 60e3, "-")


def test_gate_time_with_4_2_us_blocks(params):
    rep = estimate_gate_time(_plan(), params, t_cr=4.2e-6)
    assert 8.4e-6 <= rep.total <= 9.0e-6
    assert "paper: 8.7 us" in rep.text()


def test_gate_time_bare_blocks(params):
    rep = estimate_gate_time(_plan(), params, t_cr=4.2e-6, z_duration=0.0, t_half=0.0)
    assert rep.total == 8.4e-6


@pytest.mark.parametrize("variant, expected", [("three_pulse", 52.5e-9), ("four_pulse", 70e-9)])
def test_gate_time_half_pulses(params, variant, expected):
    rep = estimate_gate_time(_plan(), params, variant, t_cr=0.0, z_duration=0.0, t_half=17.5e-9)
    assert rep.total == pytest.approx(expected, rel=1e-12)


def test_gate_time_default_block_length(params):
    plan = _plan(48, 60e-9)
    rep = estimate_gate_time(plan, params, z_duration=0.0)
    assert rep.items["CR block 1"] == pytest.approx(48 * (120e-9 + 35e-9))


def test_gate_time_needs_half_pi_plan(params):
    plan = GatePlan(40, 50e-9, math.pi, 1e-6, 0.0, 35e-9, 0.28, 5e-3, 60e3, "-")
    with pytest.raises(ValueError):
        estimate_gate_time(plan, params)


# ---------------------------------------------------------------- output

def test_save_scan_files(tmp_path, params, field_280_5):
    scan = oscillation_scan([0, 8, 16], params, field_280_5)
    csv_path, json_path = save_scan(scan, tmp_path / "osc.csv", config={"seed": 0})
    lines = open(csv_path).read().splitlines()
    assert lines[0] == "n_pulses,s0_counts,s1_counts,signal_norm"
    assert len(lines) == 4
    side = json.load(open(json_path))
    assert side["rows"] == 3 and side["config"] == {"seed": 0}
    assert side["meta"]["field"]["b_z_t"] == 0.28
    assert float(lines[2].split(",")[3]) == scan.s[1]


def test_meta_carries_seed_and_noise(params, field_280_5):
    scan = oscillation_scan([0, 8], params, field_280_5, seed=17, noise=NoiseModel(t2_dd=5e-6))
    assert scan.meta["seed"] == 17
    assert scan.meta["noise"]["t2_dd"] == 5e-6


def test_closed_form_used_by_scans_matches_effective_coupling(params, field_280_5):
    assert abs(effective_coupling(params, field_280_5).g) == pytest.approx(
        abs(g_closed_form(0.28, 5e-3)), rel=1e-12)
    assert resonance_tau(params, field_280_5, "-") > 0
