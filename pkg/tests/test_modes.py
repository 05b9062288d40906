import io
import time
import warnings

import numpy as np
import pytest

from arcticduct.errors import ConfigError, ExtractionError, ParseError, ResolutionError
from arcticduct.modes import (DispersionCurveSet, GroupVelocityTable, WaveguideSpec,
                              build_gv_table, crossover_frequency, dispersion_curves,
                              group_velocity, group_velocity_fd, make_relative, mode_table,
                              read_curves_csv, solve_modes, table_cache_name)
from arcticduct.profile import DepthProfile, DualChannelParams, ParamGrid, build_profile

C, D = 1500.0, 100.0


def isovelocity(bottom="rigid", dz=0.1):
    return WaveguideSpec(DepthProfile([0, D], [C, C]), total_depth=D, dz=dz, bottom_bc=bottom,
                         trapped_only=False, truncate=False)


def ideal_k(f, bottom="rigid"):
    k0 = 2 * np.pi * f / C
    m = np.arange(1, 100)
    kz = (m - 0.5) * np.pi / D if bottom == "rigid" else m * np.pi / D
    kz = kz[kz < k0]
    return np.sqrt(k0 ** 2 - kz ** 2)


# ------------------------------------------------------------ isovelocity

def test_isovelocity_rigid_wavenumbers():
    ms = solve_modes(isovelocity(), 50.0, 20)
    k = ideal_k(50.0)
    assert ms.n_modes == k.size == 7
    assert np.max(np.abs(ms.wavenumbers / k - 1)) < 1e-3


def test_isovelocity_pressure_release_wavenumbers():
    ms = solve_modes(isovelocity("pressure-release"), 50.0, 20)
    k = ideal_k(50.0, "pressure-release")
    assert ms.n_modes == k.size
    assert np.max(np.abs(ms.wavenumbers / k - 1)) < 2e-3


def test_isovelocity_group_velocity():
    spec = isovelocity()
    ms = solve_modes(spec, 50.0, 20)
    k = ideal_k(50.0)
    vg = C ** 2 * k / (2 * np.pi * 50.0)
    assert np.max(np.abs(group_velocity(ms, spec) / vg - 1)) < 1e-3
    assert np.allclose(ms.group_velocities, group_velocity(ms, spec), rtol=1e-10)


def test_group_velocity_tends_to_sound_speed():
    spec = isovelocity(dz=0.05)
    ms = solve_modes(spec, 400.0, 1)
    assert ms.group_velocities[0] == pytest.approx(C, rel=1e-4)


def test_below_cutoff_is_empty():
    ms = solve_modes(isovelocity(), 3.0, 3)      # first cutoff at c / 4D = 3.75 Hz
    assert ms.n_modes == 0
    assert group_velocity(ms, isovelocity()).size == 0
    assert ms.at_depth(10.0).size == 0


def test_resolution_and_frequency_checks():
    with pytest.raises(ResolutionError):
        solve_modes(isovelocity(dz=5.0), 100.0, 3)
    with pytest.raises(ConfigError):
        solve_modes(isovelocity(), 0.5, 3)
    with pytest.raises(ConfigError):
        WaveguideSpec(DepthProfile([0, D], [C, C]), total_depth=100, dz=0.3)
    with pytest.raises(ConfigError):
        WaveguideSpec(DepthProfile([0, D], [C, C]), bottom_bc="soft")


# ---------------------------------------------------------- dual channel

def test_dual_channel_trapped_modes(make_spec):
    spec = make_spec(7.5, 69)
    ms = solve_modes(spec, 100.0, 3)
    assert ms.n_modes == 3
    assert np.all(ms.turning_depths < 450)
    assert np.all(np.diff(ms.wavenumbers) < 0) and np.all(ms.wavenumbers > 0)
    psi = ms.eigenfunctions
    norm = spec.dz * ((psi ** 2).sum(0) - 0.5 * (psi[0] ** 2 + psi[-1] ** 2))
    assert np.allclose(norm, 1, atol=1e-6)
    assert np.all(np.abs(psi[-1]) < 1e-3 * np.abs(psi).max(0))
    assert np.all((ms.group_velocities > 1300) & (ms.group_velocities < 1600))


@pytest.mark.parametrize("f", [10.0, 35.0, 100.0])
def test_eigen_residual(make_spec, f):
    spec = make_spec(7.5, 69)
    ms = solve_modes(spec, f, 3)
    s2 = spec.slowness2
    w = 2 * np.pi * f
    for j, k in enumerate(ms.wavenumbers):
        p = ms.eigenfunctions[:, j]
        lap = (p[2:] - 2 * p[1:-1] + p[:-2]) / spec.dz ** 2
        res = lap + (w ** 2 * s2[1:-1] - k ** 2) * p[1:-1]
        assert np.linalg.norm(res) <= 1e-6 * np.linalg.norm(p) * (1 / spec.dz ** 2)


@pytest.mark.parametrize("f", [12.0, 47.0, 93.0])
def test_group_velocity_integral_vs_finite_difference(make_spec, f):
    spec = make_spec(7.5, 69)
    vg = solve_modes(spec, f, 3).group_velocities
    fd = group_velocity_fd(spec, f, 3)
    assert np.all(np.abs(vg / fd - 1) < 5e-3)


def test_v_g_continuous_in_intensity(baseline):
    # 0.5 m/s intensity steps at 100 Hz never move v_g by more than 5 m/s
    out = []
    for I in np.arange(0, 15.01, 0.5):
        spec = WaveguideSpec(build_profile(baseline, DualChannelParams(I, 69)))
        out.append(mode_table(spec, [100.0], 3)[:, 0])
    jumps = np.abs(np.diff(np.array(out), axis=0))
    assert np.nanmax(jumps) < 5.0


# ----------------------------------------------------------------- curves

def test_dispersion_curve_arithmetic():
    d = dispersion_curves({1: ([10.0, 20.0], [1450.0, 1450.0])}, 200e3)
    assert d.time_at(1, 15.0) == pytest.approx(137.931, abs=1e-3)
    with pytest.raises(ConfigError):
        dispersion_curves({1: ([10.0], [1450.0])}, -1)


def test_arrival_order_flips_between_band_edges(coarse_table):
    v = coarse_table.velocities(7.5, 69)
    t = 200e3 / v
    f = coarse_table.freqs
    lo, hi = f == 15, f == 100
    assert t[2, lo] < t[1, lo] < t[0, lo]        # mode 3 first at low frequency
    assert t[0, hi] < t[2, hi]                   # mode 1 ahead of mode 3 at the top
    assert 30 < crossover_frequency(v, f) < 100


def test_no_crossover_without_duct(coarse_table):
    for W in coarse_table.W_values:
        assert crossover_frequency(coarse_table.velocities(0.0, W), coarse_table.freqs) is None


@pytest.mark.xfail(strict=True, reason="with this baseline the reversal moves above 100 Hz "
                                       "for many strong, mid-width ducts")
def test_crossover_everywhere_for_strong_ducts(coarse_table):
    for I in coarse_table.I_values[coarse_table.I_values >= 3]:
        for W in coarse_table.W_values[coarse_table.W_values >= 30]:
            assert crossover_frequency(coarse_table.velocities(I, W), coarse_table.freqs)


def test_spread_grows_with_range(coarse_table):
    v = coarse_table.velocities(7.5, 69)

    def spread(r):
        t = r / v
        return np.nanmax(t) - np.nanmin(t)
    assert spread(518e3) > spread(200e3)


def test_make_relative_properties():
    d = DispersionCurveSet({1: (np.array([10., 20., 30.]), np.array([5., 4., 3.])),
                            2: (np.array([15., 28.]), np.array([2., 6.]))})
    r = make_relative(d, (1, 20.0))
    assert r.time_at(1, 20.0) == 0
    again = make_relative(r, (1, 20.0))
    assert all(np.array_equal(again.curves[m][1], r.curves[m][1]) for m in r.curves)
    shifted = make_relative(d.shifted(123.4), (1, 20.0))
    assert all(np.allclose(shifted.curves[m][1], r.curves[m][1]) for m in r.curves)
    with pytest.raises(ExtractionError):
        make_relative(d, (3, 20.0))
    with pytest.raises(ExtractionError):
        make_relative(d, (1, 50.0))
    with pytest.raises(ConfigError):
        DispersionCurveSet({1: ([2., 1.], [0., 0.])})


def test_curves_csv_round_trip(tmp_path):
    d = make_relative(dispersion_curves({1: ([10., 20., 30.], [1450., 1460., 1470.]),
                                         2: ([20., 30.], [1440., 1445.])}, 200e3), (1, 20.0))
    path = tmp_path / "c.csv"
    d.to_csv(path, ["reference: 1,20.0"])
    back = read_curves_csv(path)
    assert back.kind == "relative" and back.reference == (1, 20.0)
    for m in d.curves:
        assert np.array_equal(back.curves[m][1], d.curves[m][1])
    (tmp_path / "bad.csv").write_text("mode,freq_hz,time_s,quality,provenance\n1,x,2,1,m\n")
    with pytest.raises(ParseError):
        read_curves_csv(tmp_path / "bad.csv")


# ----------------------------------------------------------------- tables

SMALL_I, SMALL_W = (0.0, 3.0, 1.5), (59.0, 69.0, 10.0)
SMALL_F = np.arange(20.0, 41.0, 10.0)


def test_single_point_table_matches_direct_solve(baseline):
    grid = ParamGrid([7.5], [69.0])
    t = build_gv_table(baseline, grid, SMALL_F)
    spec = WaveguideSpec(build_profile(baseline, DualChannelParams(7.5, 69)))
    direct = np.array([solve_modes(spec, f, 3).group_velocities for f in SMALL_F]).T
    assert np.array_equal(t.values[0, 0], direct)


def test_table_cache_round_trip(tmp_path, baseline):
    grid = ParamGrid.from_ranges(SMALL_I, SMALL_W)
    path = tmp_path / table_cache_name(baseline, grid, SMALL_F)
    t0 = time.perf_counter()
    a = build_gv_table(baseline, grid, SMALL_F, cache_path=path)
    cold = time.perf_counter() - t0
    raw = path.read_bytes()
    t0 = time.perf_counter()
    b = build_gv_table(baseline, grid, SMALL_F, cache_path=path)
    warm = time.perf_counter() - t0
    assert np.array_equal(a.values, b.values) and path.read_bytes() == raw
    assert warm * 5 < cold
    loaded = GroupVelocityTable.load(path)
    assert loaded.to_bytes() == a.to_bytes()
    assert not np.isnan(a.values).any()
    # a different grid under the same file name is rebuilt with a warning
    other = ParamGrid.from_ranges((0.0, 1.5, 1.5), SMALL_W)
    with warnings.catch_warnings(record=True) as w:
        warnings.simplefilter("always")
        c = build_gv_table(baseline, other, SMALL_F, cache_path=path)
    assert any("mismatch" in str(x.message) for x in w)
    assert c.values.shape[0] == 2


def test_table_rejects_corrupt_file(tmp_path):
    p = tmp_path / "x.gvtb"
    p.write_bytes(b"nope")
    with pytest.raises(ParseError):
        GroupVelocityTable.load(p)


def test_table_lookup_and_csv(coarse_table):
    assert coarse_table.index(7.5, 69) == (5, 6)
    with pytest.raises(ConfigError):
        coarse_table.index(7.4, 69)
    v = coarse_table.velocities(7.5, 69, [20.5])
    assert v.shape == (3, 1)
    assert v[0, 0] == pytest.approx(np.mean(coarse_table.velocities(7.5, 69)[0, 10:12]))
    small = GroupVelocityTable(coarse_table.I_values[:1], coarse_table.W_values[:1],
                               coarse_table.freqs[:2], coarse_table.values[:1, :1, :, :2])
    buf = io.StringIO()
    small.to_csv(buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "I,W,mode,freq_hz,vg_mps" and len(lines) == 1 + 3 * 2


def test_cache_name_is_content_addressed(baseline):
    g = ParamGrid.from_ranges(SMALL_I, SMALL_W)
    a = table_cache_name(baseline, g, SMALL_F)
    assert a == table_cache_name(baseline, g, SMALL_F)
    assert a != table_cache_name(baseline, g, SMALL_F + 1)
    assert a != table_cache_name(baseline, g, SMALL_F, dz=0.25)
