import json
import os

import numpy as np
import pytest

from arcticduct import __version__
from arcticduct.cli import RunConfig, build_parser, main, parse_config_text
from arcticduct.errors import ConfigError
from arcticduct.profile import DualChannelParams, build_profile, default_baseline, write_profile_csv

# a few profiles on a sparse frequency grid keeps table builds to seconds
TINY = ["--I-min", "0", "--I-max", "3", "--I-step", "1.5", "--W-min", "60", "--W-max", "70",
        "--W-step", "10", "--f-step", "5"]


def run(tmp_path, *argv):
    return main(list(argv) + ["--cache-dir", str(tmp_path / "cache"),
                              "--out-dir", str(tmp_path / "out")])


@pytest.fixture
def truth_csv(tmp_path):
    p = tmp_path / "truth.csv"
    write_profile_csv(build_profile(default_baseline(), DualChannelParams(7.5, 69.0)), p)
    return str(p)


def read_kv(path):
    out = {}
    for line in open(path):
        if line.startswith("#"):
            continue
        k, v = line.strip().split("=", 1)
        out[k] = v
    return out


# ------------------------------------------------------------------ config

def test_unknown_key_names_file_and_line(tmp_path):
    with pytest.raises(ConfigError, match=r"run.cfg:3: unknown key 'I_mx'"):
        parse_config_text("# grid\nI_min = 0\nI_mx = 4\n", "run.cfg")
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("I_mx = 4\n")
    assert run(tmp_path, "build-table", "-c", str(cfg)) == 2


def test_flags_override_file_override_defaults():
    cfg = RunConfig.resolve({"I_step": "1.5", "W_step": "2"}, {"W_step": "10", "I_max": None})
    assert cfg["I_step"] == 1.5 and cfg["W_step"] == 10.0 and cfg["I_max"] == 15.0


def test_hash_ignores_output_locations():
    a = RunConfig.resolve({}, {"out_dir": "x", "cache_dir": "y"})
    b = RunConfig.resolve({}, {"out_dir": "z"})
    c = RunConfig.resolve({}, {"W_step": "2"})
    assert a.hash == b.hash != c.hash


@pytest.mark.parametrize("argv", [["--I-step", "0"], ["--anchor-freq", "5"],
                                  ["--sample-rate", "150"], ["--invert-mode", "both"],
                                  ["--modes", "x"]])
def test_bad_settings_exit_2(tmp_path, argv):
    assert run(tmp_path, "build-table", *argv) == 2


def test_missing_input_exits_6(tmp_path):
    assert run(tmp_path, "fit-ssp", str(tmp_path / "nope.csv")) == 6
    assert run(tmp_path, "extract", str(tmp_path / "nope.wav")) == 6


def test_malformed_profile_exits_3_and_names_line(tmp_path, caplog):
    bad = tmp_path / "bad.csv"
    bad.write_text("depth_m,speed_mps\n0,1435\n50,fast\n")
    assert run(tmp_path, "fit-ssp", str(bad)) == 3
    assert "bad.csv:3" in caplog.text


def test_help_lists_defaults(capsys):
    with pytest.raises(SystemExit):
        build_parser().parse_args(["invert", "--help"])
    text = capsys.readouterr().out
    assert "(default: 0.5)" in text and "--invert-mode" in text


def test_version(capsys):
    with pytest.raises(SystemExit):
        main(["--version"])
    assert capsys.readouterr().out.strip() == f"arcticduct {__version__}"


# ------------------------------------------------------------------ fit-ssp

def test_fit_ssp_recovers_generated_profile(tmp_path, truth_csv):
    assert run(tmp_path, "fit-ssp", truth_csv) == 0
    kv = read_kv(tmp_path / "out" / "fit_params.txt")
    assert float(kv["I"]) == 7.5 and float(kv["W"]) == 69.0
    assert float(kv["cost"]) == 0.0 and kv["degenerate"] == "false"
    for name in ("fit_cost_surface.csv", "fit_comparison.csv", "fit_comparison.svg"):
        assert (tmp_path / "out" / name).exists()


def test_fit_ssp_on_baseline_is_degenerate(tmp_path):
    p = tmp_path / "base.csv"
    write_profile_csv(default_baseline(), p)
    assert run(tmp_path, "fit-ssp", str(p)) == 0
    kv = read_kv(tmp_path / "out" / "fit_params.txt")
    assert float(kv["I"]) == 0.0 and kv["degenerate"] == "true"
    assert int(kv["near_minimum"]) > 1


def test_outputs_carry_version_and_hash(tmp_path, truth_csv):
    assert run(tmp_path, "fit-ssp", truth_csv) == 0
    h = RunConfig.resolve().hash
    for name in ("fit_params.txt", "fit_cost_surface.csv", "fit_comparison.csv"):
        head = open(tmp_path / "out" / name).read().splitlines()[:2]
        assert head == [f"# arcticduct {__version__}", f"# config_sha256 {h}"]


def test_reruns_are_byte_identical(tmp_path, truth_csv):
    out = tmp_path / "out"
    assert run(tmp_path, "fit-ssp", truth_csv) == 0
    first = {n: (out / n).read_bytes() for n in os.listdir(out)}
    assert run(tmp_path, "fit-ssp", truth_csv) == 0
    assert first == {n: (out / n).read_bytes() for n in os.listdir(out)}


# ------------------------------------------------------------ table/forward

def test_build_table_second_run_hits_cache(tmp_path, caplog):
    caplog.set_level("INFO", logger="arcticduct")
    assert run(tmp_path, "build-table", *TINY) == 0
    assert "table cache hit" not in caplog.text
    first = (tmp_path / "out" / "gv_table.gvtb").read_bytes()
    caplog.clear()
    assert run(tmp_path, "build-table", *TINY, "--table-csv", "true") == 0
    assert "table cache hit" in caplog.text
    assert (tmp_path / "out" / "gv_table.gvtb").read_bytes() == first
    assert (tmp_path / "out" / "gv_table.csv").exists()


def test_forward_window_covers_arrivals(tmp_path):
    assert run(tmp_path, "forward", *TINY, "--I", "1.5", "--W", "60", "--range-km", "100",
               "--modes", "2") == 0
    rep = json.load(open(tmp_path / "out" / "forward_report.json"))
    r = rep["result"]["100km"]
    assert r["max_arrival_reduced_s"] < r["window_s"]
    assert 0 <= r["energy_span_s"][0] < r["energy_span_s"][1] <= r["window_s"]
    for name in ("curves_100km.csv", "signal_100km.wav", "spectrogram_100km.svg",
                 "group_velocity.csv"):
        assert (tmp_path / "out" / name).exists()


def test_export_field_from_segments(tmp_path):
    seg = tmp_path / "segments.csv"
    seg.write_text("r_start_m,r_end_m,I,W\n0,200000,9,69\n200000,300000,7.5,69\n")
    assert run(tmp_path, "export-field", str(seg), "--field-ranges", "5") == 0
    out = tmp_path / "out"
    assert {"field.csv", "segment1_profile.csv", "segment2_profile.csv"} <= set(os.listdir(out))
    seg.write_text("r_start_m,r_end_m,I,W\n0,200000,9,69\n250000,300000,7.5,69\n")
    assert run(tmp_path, "export-field", str(seg)) == 3


def test_noise_extract_does_not_crash(tmp_path):
    from arcticduct.synth import Signal, write_wav
    noise = Signal(512.0, 0.0, np.random.default_rng(3).normal(size=512 * 8))
    write_wav(noise, tmp_path / "noise.wav")
    rc = run(tmp_path, "extract", str(tmp_path / "noise.wav"), *TINY)
    assert rc in (0, 5)
