import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from arcticduct.errors import ConfigError, ExtractionError
from arcticduct.extract import (ExtractedCurve, PowerLawWarp, calibrate_delay_warps,
                                calibrate_mode_warps, concentration, extract_crossing,
                                extract_dispersion, extract_noncrossing, merge_curves,
                                model_guide, snr_quality, split_signal, warp)
from arcticduct.modes import DispersionCurveSet, crossover_frequency, make_relative
from arcticduct.synth import Signal, chirp_from_delays, modal_arrivals, synthesize

F_LOW = np.linspace(10, 45, 71)


def model_times(spec, r, z_src=10.0, z_rcv=10.0):
    fs, tt = modal_arrivals([spec], [0, r], z_src=z_src, z_rcv=z_rcv)
    return fs, tt - r / 1500


def absolute_curves(fs, tt):
    return DispersionCurveSet({m + 1: (fs[np.isfinite(tt[m])], tt[m][np.isfinite(tt[m])])
                               for m in range(tt.shape[0])}, "absolute")


def rms_against(curves, fs, tt):
    """Per-mode RMS of extracted relative curves against model relative curves."""
    ref = make_relative(absolute_curves(fs, tt), curves.reference)
    out = {}
    for m, (f, t) in curves.curves.items():
        fm, tm = ref.curves[m]
        ok = (f >= fm[0]) & (f <= fm[-1])
        out[m] = float(np.sqrt(np.mean((t[ok] - np.interp(f[ok], fm, tm)) ** 2)))
    return out


def truth_guided_extraction(spec, r, s, z_src=10.0, z_rcv=10.0):
    fs, tt = model_times(spec, r, z_src, z_rcv)
    guide = model_guide(spec, r, np.arange(10, 100.5, 0.5), z_src=z_src, z_rcv=z_rcv)
    warps = calibrate_delay_warps(absolute_curves(fs, tt), (1,), (10, 45),
                                  window=s.duration, sample_rate=s.sample_rate)
    return extract_dispersion(s, 3, warps, guide=guide), fs, tt


# ---------------------------------------------------------------- split

def test_split_at_hint_reassembles(signal_200):
    sp = split_signal(signal_200, hint=6.0)
    assert sp.split_time == 6.0
    assert sp.crossing.start_time == pytest.approx(6.0, abs=1 / 512)
    joined = np.concatenate([sp.noncrossing.samples, sp.crossing.samples])
    assert np.array_equal(joined, signal_200.samples)
    with pytest.raises(ConfigError):
        split_signal(signal_200, hint=99.0)


def test_band_split_sums_to_input(signal_200):
    sp = split_signal(signal_200, domain="band")
    assert np.allclose(sp.noncrossing.samples + sp.crossing.samples, signal_200.samples)


def test_split_near_model_crossover(signal_200, coarse_table):
    v = coarse_table.velocities(7.5, 69)
    xf = crossover_frequency(v, coarse_table.freqs)
    t_cross = 200e3 / np.interp(xf, coarse_table.freqs, v[0]) - 200e3 / 1500
    sp = split_signal(signal_200, crossover_freq=xf)
    assert sp.has_crossing
    assert abs(sp.split_time - t_cross) < 1.0


def test_single_duct_has_no_crossing(coarse_table, make_spec):
    assert crossover_frequency(coarse_table.velocities(0.0, 69), coarse_table.freqs) is None
    s = synthesize(make_spec(0.0, 69), 10, 10, 100e3, window=8, solve_df=2)
    sp = split_signal(s, crossover_freq=None)
    assert not sp.has_crossing and sp.crossing.samples.size == 0


def test_split_needs_two_windows():
    with pytest.raises(ExtractionError):
        split_signal(Signal(512, 0, np.ones(300)))


# ----------------------------------------------------------------- warp

def test_identity_warp():
    t = 1.0 + np.arange(2048) / 512
    s = Signal(512, 1.0, np.sin(2 * np.pi * 20 * t) * np.exp(-((t - 3) / 0.4) ** 2))
    y = warp(s, PowerLawWarp(1.0, 1.0, 0.0), s.sample_rate, s.start_time, s.samples.size)
    assert np.max(np.abs(y.samples - s.samples)) < 1e-9


def test_decreasing_warp_rejected():
    with pytest.raises(ConfigError):
        PowerLawWarp(beta=-0.5, reverse=False)
    with pytest.raises(ConfigError):
        PowerLawWarp(beta=0.5, reverse=True)
    with pytest.raises(ConfigError):
        PowerLawWarp.for_support(0.5, 5.0, 4.0, 6.0)


def test_calibrated_warp_turns_power_law_mode_into_tone():
    d = 6 + (20 / F_LOW) ** 2
    s = chirp_from_delays(F_LOW, d, (10, 45), window=16)
    w = calibrate_delay_warps(DispersionCurveSet({1: (F_LOW, d)}, "absolute"), (1,), (10, 45),
                              betas=(0.5, 1.0, 1.5, 2.0, 2.5), window=16, sample_rate=512)
    assert w[1].concentration >= 0.8


def test_calibrated_warp_on_model_mode(make_spec):
    # long-range mode 2: its arrival spans ~0.8 s, enough to resolve a 3 Hz band
    w = calibrate_mode_warps(make_spec(7.5, 69), 518e3, modes=(2,),
                             betas=(0.4, 0.45, 0.5, 0.55, 0.6), lead=np.geomspace(0.2, 0.6, 8))
    assert w[2].concentration >= 0.8


def test_concentration_of_tone():
    s = Signal(512, 0, np.sin(2 * np.pi * 30 * np.arange(4096) / 512))
    frac, centre = concentration(s, 3.0)
    assert frac > 0.99 and centre == pytest.approx(30, abs=1.5)


# ----------------------------------------------------------- extraction

def two_mode_chirps():
    d1, d2 = 6 + (8 / F_LOW) ** 2, 4 + (6 / F_LOW) ** 2
    x = (chirp_from_delays(F_LOW, d1, (10, 45), window=16).samples
         + 0.7 * chirp_from_delays(F_LOW, d2, (10, 45), window=16).samples)
    curves = DispersionCurveSet({1: (F_LOW, d1), 2: (F_LOW, d2)}, "absolute")
    return Signal(512, 0, x), curves


def test_noncrossing_two_modes():
    s, truth = two_mode_chirps()
    warps = calibrate_delay_warps(truth, (1, 2), (10, 45), betas=(0.5, 1.0, 1.5, 2.0, 2.5),
                                  window=16, sample_rate=512)
    curves = extract_noncrossing(s, 2, warps, (10, 45))
    assert [c.mode for c in curves] == [1, 2]
    for c in curves:
        f, t = truth.curves[c.mode]
        assert np.sqrt(np.mean((c.times - np.interp(c.freqs, f, t)) ** 2)) < 0.1
        assert np.all(c.provenance == "warped")
    # mode 2 (earlier) leads mode 1 at every shared frequency
    a, b = curves
    common = np.intersect1d(a.freqs, b.freqs)
    assert np.all(np.interp(common, b.freqs, b.times) < np.interp(common, a.freqs, a.times))


def test_noncrossing_single_mode_quality():
    d = 6 + (8 / F_LOW) ** 2
    s = chirp_from_delays(F_LOW, d, (10, 45), window=16)
    h = calibrate_delay_warps(DispersionCurveSet({1: (F_LOW, d)}, "absolute"), (1,), (10, 45),
                              window=16, sample_rate=512)[1].warp
    curves = extract_noncrossing(s, 1, h, (10, 45))
    assert len(curves) == 1 and curves[0].mode == 1
    assert np.all(curves[0].quality > 0)
    assert curves[0].freqs.min() < 12 and curves[0].freqs.max() > 43


def test_crossing_band_three_modes(make_spec):
    # source and receiver straddle both ducts so all three modes are excited
    spec, r, zs, zr = make_spec(7.5, 69), 200e3, 140.0, 290.0
    s = synthesize(spec, zs, zr, r)
    fs, tt = model_times(spec, r, zs, zr)
    guide = model_guide(spec, r, np.arange(10, 100.5, 0.5), z_src=zs, z_rcv=zr)
    curves = extract_crossing(s, 3, (50, 100), guide=guide, anchor_time=np.interp(20, fs, tt[0]))
    assert [c.mode for c in curves] == [1, 2, 3]
    for c in curves:
        assert len(c) >= 10
        err = c.times - np.interp(c.freqs, fs, tt[c.mode - 1])
        assert np.sqrt(np.mean(err ** 2)) <= 0.15
        assert np.all(c.provenance == "peak")


def three_chirps(order):
    f = np.linspace(50, 100, 51)
    x = 0
    for k, base in enumerate(order):
        x = x + chirp_from_delays(f, base + 0.002 * (f - 50), (50, 100), window=8).samples
    return Signal(512, 0, x)


def test_crossing_labels_by_arrival_order():
    curves = extract_crossing(three_chirps([2.0, 3.0, 4.5]), 3, (50, 100))
    assert [c.mode for c in curves] == [1, 2, 3]
    i90 = [int(np.argmin(np.abs(c.freqs - 90))) for c in curves]
    t90 = [c.times[i] for c, i in zip(curves, i90)]
    assert t90[0] < t90[1] < t90[2]
    assert t90 == pytest.approx([2.08, 3.08, 4.58], abs=0.03)


def test_single_peak_bins_give_mode_one():
    f = np.linspace(50, 100, 51)
    s = chirp_from_delays(f, 3.0 + 0 * f, (50, 100), window=8)
    curves = extract_crossing(s, 3, (52, 98))
    assert [c.mode for c in curves] == [1]


def test_extraction_translation_covariant():
    s = three_chirps([2.0, 3.0, 4.5])
    a = extract_crossing(s, 3, (50, 100))
    b = extract_crossing(s.delayed(17.25), 3, (50, 100))
    for ca, cb in zip(a, b):
        assert np.array_equal(ca.freqs, cb.freqs)
        assert np.allclose(cb.times - ca.times, 17.25, atol=1e-9)

    low, truth = two_mode_chirps()
    warps = calibrate_delay_warps(truth, (1, 2), (10, 45), betas=(1.5, 2.0, 2.5),
                                  window=16, sample_rate=512)
    moved = {m: dataclasses.replace(w, warp=dataclasses.replace(w.warp, origin=w.warp.origin + 3.5),
                                    support=tuple(np.add(w.support, 3.5)))
             for m, w in warps.items()}
    a = extract_noncrossing(low, 2, warps, (10, 45))
    b = extract_noncrossing(low.delayed(3.5), 2, moved, (10, 45))
    for ca, cb in zip(a, b):
        common = np.intersect1d(ca.freqs, cb.freqs)
        assert common.size > 0.9 * ca.freqs.size
        da = np.interp(common, ca.freqs, ca.times)
        db = np.interp(common, cb.freqs, cb.times)
        assert np.allclose(db - da, 3.5, atol=1e-6)
    ra, rb = merge_curves(a, [], (1, 20.0)), merge_curves(b, [], (1, 20.0))
    for m in ra.curves:
        fa, ta = ra.curves[m]
        fb, tb = rb.curves[m]
        common = np.intersect1d(fa, fb)
        assert np.allclose(np.interp(common, fa, ta), np.interp(common, fb, tb), atol=1e-6)


# ---------------------------------------------------------------- merge

def curve(mode, f, t, q=1.0, prov="peak"):
    f = np.asarray(f, float)
    return ExtractedCurve(mode, f, np.asarray(t, float), np.full(f.size, q),
                          np.array([prov] * f.size, dtype=object))


def test_merge_disjoint_and_overlap():
    low = [curve(1, [18, 20, 22], [5.0, 4.8, 4.7], 0.9, "warped")]
    high = [curve(1, [22, 24, 26], [9.0, 4.5, 4.4], 0.5), curve(2, [24, 26], [3.0, 3.1])]
    d = merge_curves(low, high, (1, 20.0))
    f, t = d.curves[1]
    assert np.array_equal(f, [18, 20, 22, 24, 26])
    assert np.allclose(t, [0.2, 0.0, -0.1, -0.3, -0.4])      # 22 Hz keeps the better pick
    assert d.provenance[1][2] == "warped" and d.provenance[1][3] == "peak"
    assert d.reference == (1, 20.0)
    assert np.allclose(d.curves[2][1], [-1.8, -1.7])


def test_merge_anchor_missing():
    with pytest.raises(ExtractionError):
        merge_curves([curve(1, [40, 42], [1, 1])], [], (1, 20.0))
    with pytest.raises(ExtractionError):
        merge_curves([curve(2, [18, 20], [1, 1])], [], (1, 20.0))


def test_curve_invariants():
    with pytest.raises(ConfigError):
        curve(1, [20, 20], [1, 2])
    with pytest.raises(ConfigError):
        ExtractedCurve(1, np.array([1.0]), np.array([1.0, 2.0]), np.ones(1), np.ones(1))


@settings(max_examples=50, deadline=None)
@given(st.floats(0, 1e6), st.floats(0, 1e6))
def test_quality_monotone_in_snr(a, b):
    qa, qb = snr_quality(a), snr_quality(b)
    assert 0 <= qa <= 1
    assert (qa <= qb) if a <= b else (qa >= qb)


# ------------------------------------------------------------ closed loop

def test_closed_loop_reference_case(signal_200, make_spec):
    rep, fs, tt = truth_guided_extraction(make_spec(7.5, 69), 200e3, signal_200)
    assert rep.curves.kind == "relative" and rep.curves.reference == (1, 20.0)
    rms = rms_against(rep.curves, fs, tt)
    assert set(rms) >= {1, 3}
    assert max(rms.values()) <= 0.15
    f1 = rep.curves.curves[1][0]
    assert f1.min() <= 12 and 1 in rep.curves.curves


@pytest.mark.parametrize("I", [3.0, 7.5, 12.0])
@pytest.mark.parametrize("W", [30.0, 69.0, 100.0])
def test_closed_loop_grid(make_spec, I, W):
    spec = make_spec(I, W)
    s = synthesize(spec, 10, 10, 200e3)
    rep, fs, tt = truth_guided_extraction(spec, 200e3, s)
    rms = rms_against(rep.curves, fs, tt)
    assert max(rms.values()) <= 0.15, rms
