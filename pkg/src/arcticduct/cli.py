"""Command-line front end.

Settings come from built-in defaults, then an optional flat ``key = value``
config file (``--config``), then ``--key value`` flags.  Every output file
carries a header comment naming the tool version and a hash of the
settings that affect results.
"""
from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import os
import sys
import time
from dataclasses import dataclass
from typing import Dict, List, Optional

import numpy as np

from . import __version__
from ._svg import heatmap_svg, lines_svg
from .errors import (ArcticDuctError, ConfigError, ExtractionError, NumericalError, ParseError)
from .invert import (RangeSegments, invert_fixed_range, invert_joint_range, invert_segmented,
                     invert_segmented_signals, invert_signal, result_to_profiles)
from .modes import (C_REF, DispersionCurveSet, GroupVelocityTable, WaveguideSpec, build_gv_table,
                    dispersion_curves, make_relative, mode_table, read_curves_csv, table_cache_name)
from .profile import (DualChannelParams, ParamGrid, _write_csv, build_profile, default_baseline,
                      fit_params, iter_csv_rows, perturbation_grid, read_profile_csv,
                      write_profile_csv)
from .synth import (ARRIVAL_MARGIN, decimate, energy_span, modal_arrivals, read_signal,
                    slice_shots, spectrogram, synthesize_range_dependent, write_wav)

log = logging.getLogger("arcticduct.cli")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_PARSE = 3
EXIT_NUMERICAL = 4
EXIT_EXTRACTION = 5
EXIT_IO = 6


@dataclass(frozen=True)
class Option:
    name: str
    default: str
    kind: str   # float, int, str, bool, floats
    help: str
    affects_results: bool = True


OPTIONS = [
    Option("baseline", "builtin", "str", "baseline profile CSV (depth_m,speed_mps) or 'builtin'"),
    Option("I_min", "0", "float", "smallest channel intensity I (m/s)"),
    Option("I_max", "15", "float", "largest channel intensity I (m/s)"),
    Option("I_step", "0.5", "float", "intensity grid step (m/s)"),
    Option("W_min", "5", "float", "smallest channel width W (m)"),
    Option("W_max", "120", "float", "largest channel width W (m)"),
    Option("W_step", "1", "float", "width grid step (m)"),
    Option("f_min", "10", "float", "lower band edge (Hz)"),
    Option("f_max", "100", "float", "upper band edge (Hz)"),
    Option("f_step", "1", "float", "group-velocity table frequency step (Hz)"),
    Option("modes", "3", "int", "number of modes modelled and extracted"),
    Option("range_km", "200", "floats", "source range(s) in km, comma separated"),
    Option("r_min_km", "100", "float", "joint inversion: smallest range (km)"),
    Option("r_max_km", "600", "float", "joint inversion: largest range (km)"),
    Option("r_step_km", "5", "float", "joint inversion: range step (km)"),
    Option("anchor_mode", "1", "int", "mode whose arrival defines relative time zero"),
    Option("anchor_freq", "20", "float", "frequency (Hz) of the relative-time anchor"),
    Option("crossover_freq", "45", "float", "split between the non-crossing and crossing bands (Hz)"),
    Option("warp_betas", "0.25,0.35,0.5,0.7,1.0,1.5", "floats", "candidate warp exponents beta"),
    Option("I", "7.5", "float", "forward/synth: channel intensity (m/s)"),
    Option("W", "69", "float", "forward/synth: channel width (m)"),
    Option("segments", "", "str",
           "synth: range-dependent model as I:W pairs, one per range_km entry, e.g. 9:69,7.5:69"),
    Option("z_src", "10", "float", "source depth (m)"),
    Option("z_rcv", "10", "float", "receiver depth (m)"),
    Option("sample_rate", "512", "float", "synthesis and processing sample rate (Hz)"),
    Option("window", "0", "float", "synthesis window (s); 0 picks one covering the arrivals"),
    Option("total_depth", "3800", "float", "water depth of the mode solver (m)"),
    Option("dz", "0.5", "float", "mode solver depth step (m)"),
    Option("invert_mode", "fixed", "str", "invert: 'fixed' range or 'joint' range search"),
    Option("gate", "0.08", "float", "time gate (s) for labelling and scanning spectral peaks"),
    Option("max_iter", "3", "int", "extraction/inversion passes per signal"),
    Option("weighted", "false", "bool", "weight the cost by extraction quality"),
    Option("shot_interval", "0", "float", "cut recordings into shots of this length (s); 0 = off"),
    Option("shot_offset", "0", "float", "time of the first shot (s)"),
    Option("shot_index", "0", "int", "which shot to process"),
    Option("spec_window", "0.5", "float", "spectrogram window (s)"),
    Option("spec_hop", "0.05", "float", "spectrogram hop (s)"),
    Option("wav_format", "float32", "str", "WAV sample format: float32 or pcm16"),
    Option("table_csv", "false", "bool", "build-table: also write the table as CSV"),
    Option("field_ranges", "101", "int", "export-field: number of range samples"),
    Option("cache_dir", ".arcticduct-cache", "str", "group-velocity table cache directory", False),
    Option("out_dir", "arcticduct-out", "str", "output directory", False),
]
_BY_NAME = {o.name: o for o in OPTIONS}


def _convert(opt: Option, raw: str):
    raw = str(raw).strip()
    try:
        if opt.kind == "float":
            v = float(raw)
            if not np.isfinite(v):
                raise ValueError
            return v
        if opt.kind == "int":
            return int(raw)
        if opt.kind == "bool":
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError
        if opt.kind == "floats":
            return tuple(float(x) for x in raw.split(",") if x.strip())
    except ValueError:
        raise ConfigError(f"{opt.name}: cannot read {raw!r} as {opt.kind}") from None
    return raw


def parse_config_text(text: str, source: str = "<config>") -> Dict[str, str]:
    """Flat ``key = value`` lines; '#' starts a comment."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key = value")
        key, value = (x.strip() for x in line.split("=", 1))
        if key not in _BY_NAME:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        out[key] = value
    return out


@dataclass(frozen=True)
class RunConfig:
    """Resolved settings for one command."""

    values: Dict[str, object]

    @classmethod
    def resolve(cls, file_values: Optional[Dict[str, str]] = None,
                overrides: Optional[Dict[str, str]] = None) -> "RunConfig":
        raw = {o.name: o.default for o in OPTIONS}
        raw.update(file_values or {})
        raw.update({k: v for k, v in (overrides or {}).items() if v is not None})
        vals = {k: _convert(_BY_NAME[k], v) for k, v in raw.items()}
        cfg = cls(vals)
        cfg.validate()
        return cfg

    def __getitem__(self, key):
        return self.values[key]

    def validate(self):
        v = self.values
        if v["baseline"] != "builtin" and not os.path.isfile(v["baseline"]):
            raise ConfigError(f"baseline file not found: {v['baseline']}")
        self.grid()
        self.fgrid()
        self.r_grid
        if v["modes"] < 1:
            raise ConfigError("modes must be at least 1")
        if not 1 <= v["anchor_mode"] <= v["modes"]:
            raise ConfigError("anchor_mode must be one of the modelled modes")
        if not v["f_min"] <= v["anchor_freq"] <= v["f_max"]:
            raise ConfigError("anchor_freq must lie inside the band")
        if not v["range_km"] or any(r <= 0 for r in v["range_km"]):
            raise ConfigError("range_km must list positive ranges")
        if v["invert_mode"] not in ("fixed", "joint"):
            raise ConfigError("invert_mode must be 'fixed' or 'joint'")
        if v["sample_rate"] <= 2 * v["f_max"]:
            raise ConfigError("sample_rate must exceed twice f_max")
        if v["max_iter"] < 1:
            raise ConfigError("max_iter must be at least 1")
        if not v["warp_betas"]:
            raise ConfigError("warp_betas is empty")

    # derived settings

    def grid(self) -> ParamGrid:
        v = self.values
        return ParamGrid.from_ranges((v["I_min"], v["I_max"], v["I_step"]),
                                     (v["W_min"], v["W_max"], v["W_step"]))

    def fgrid(self) -> np.ndarray:
        v = self.values
        if not 0 < v["f_min"] < v["f_max"] or v["f_step"] <= 0:
            raise ConfigError("need 0 < f_min < f_max and f_step > 0")
        n = int(np.floor((v["f_max"] - v["f_min"]) / v["f_step"] + 1e-9)) + 1
        return v["f_min"] + v["f_step"] * np.arange(n)

    @property
    def band(self):
        return (self.values["f_min"], self.values["f_max"])

    @property
    def anchor(self):
        return (self.values["anchor_mode"], self.values["anchor_freq"])

    @property
    def ranges_m(self) -> np.ndarray:
        return np.array(self.values["range_km"], dtype=float) * 1e3

    @property
    def r_grid(self) -> np.ndarray:
        v = self.values
        if not 0 < v["r_min_km"] <= v["r_max_km"] or v["r_step_km"] <= 0:
            raise ConfigError("need 0 < r_min_km <= r_max_km and r_step_km > 0")
        n = int(np.floor((v["r_max_km"] - v["r_min_km"]) / v["r_step_km"] + 1e-9)) + 1
        return (v["r_min_km"] + v["r_step_km"] * np.arange(n)) * 1e3

    @property
    def spec_kwargs(self):
        return {"total_depth": self.values["total_depth"], "dz": self.values["dz"]}

    def baseline(self):
        b = self.values["baseline"]
        return default_baseline() if b == "builtin" else read_profile_csv(b)

    def canonical(self) -> str:
        lines = []
        for o in OPTIONS:
            if not o.affects_results:
                continue
            v = self.values[o.name]
            if o.name == "baseline":
                v = "sha256:" + self.baseline().content_hash()
            elif isinstance(v, tuple):
                v = ",".join(repr(x) for x in v)
            lines.append(f"{o.name}={v!r}" if isinstance(v, float) else f"{o.name}={v}")
        return "\n".join(lines)

    @property
    def hash(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()[:16]

    def header(self, command: str) -> List[str]:
        return [f"arcticduct {__version__}", f"config_sha256 {self.hash}", f"command {command}"]

    def echo(self) -> Dict[str, object]:
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.values.items()}


# ------------------------------------------------------------------ helpers

def _out(cfg: RunConfig, name: str) -> str:
    d = cfg["out_dir"]
    os.makedirs(d, exist_ok=True)
    return os.path.join(d, name)


def _write_text(path: str, text: str):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    log.info("wrote %s", path)


def _write_report(cfg: RunConfig, command: str, path: str, result: dict):
    doc = {"tool": f"arcticduct {__version__}", "config_sha256": cfg.hash, "command": command,
           "config": cfg.echo(), "result": result}
    _write_text(path, json.dumps(_plain(doc), sort_keys=True, indent=2) + "\n")


def _plain(x):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to strings."""
    if isinstance(x, dict):
        return {str(k): _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if np.isfinite(x) else str(x)
    if isinstance(x, np.bool_):
        return bool(x)
    if isinstance(x, np.ndarray):
        return _plain(x.tolist())
    return x


def _csv(cfg: RunConfig, command: str, obj, name: str, extra=()):
    path = _out(cfg, name)
    obj.to_csv(path, cfg.header(command) + list(extra))
    log.info("wrote %s", path)
    return path


def _svg(cfg: RunConfig, command: str, name: str, text_fn, **kwargs):
    path = _out(cfg, name)
    comment = "; ".join(cfg.header(command))
    _write_text(path, text_fn(comment=comment, **kwargs))
    return path


def _km(r_m: float) -> str:
    return f"{r_m / 1e3:g}km"


def _stem(path: str) -> str:
    return os.path.splitext(os.path.basename(path))[0]


def load_table(cfg: RunConfig) -> GroupVelocityTable:
    """Group-velocity table for the configured grid, from cache when possible."""
    baseline = cfg.baseline()
    grid, fgrid = cfg.grid(), cfg.fgrid()
    os.makedirs(cfg["cache_dir"], exist_ok=True)
    path = os.path.join(cfg["cache_dir"],
                        table_cache_name(baseline, grid, fgrid, cfg["modes"], **cfg.spec_kwargs))
    total = grid.shape[0] * grid.shape[1]
    if not os.path.exists(path):
        log.info("building group-velocity table: %d profiles x %d frequencies", total, fgrid.size)
    step = max(1, total // 10)

    def progress(done, n):
        if done % step == 0 or done == n:
            log.info("  %d/%d profiles", done, n)

    return build_gv_table(baseline, grid, fgrid, cfg["modes"], cache_path=path,
                          progress=progress, **cfg.spec_kwargs)


def _spec(cfg: RunConfig, baseline, p: DualChannelParams) -> WaveguideSpec:
    return WaveguideSpec(build_profile(baseline, p), **cfg.spec_kwargs)


def _auto_window(cfg: RunConfig, specs, bps) -> float:
    """Window covering every modelled arrival, rounded up to 4 s."""
    if cfg["window"] > 0:
        return cfg["window"]
    _, tt = modal_arrivals(specs, bps, cfg.band, cfg["modes"], solve_df=2.0,
                           z_src=cfg["z_src"], z_rcv=cfg["z_rcv"])
    reduced = tt - bps[-1] / C_REF
    if not np.any(np.isfinite(reduced)):
        raise NumericalError("no propagating modes in band")
    need = 1.05 * float(np.nanmax(reduced)) + ARRIVAL_MARGIN + 2.0
    return float(4 * np.ceil(need / 4))


def _synth(cfg: RunConfig, command: str, specs, bps):
    window = _auto_window(cfg, specs, bps)
    s = synthesize_range_dependent(specs, bps, cfg["z_src"], cfg["z_rcv"], cfg.band, window,
                                   sample_rate=cfg["sample_rate"], max_modes=cfg["modes"])
    note = f"arcticduct {__version__} config_sha256={cfg.hash}"
    return dataclasses.replace(s, comment=f"{s.comment}; {note}")


def ingest(cfg: RunConfig, path: str):
    """Read a WAV/CSV recording, cut out the selected shot and resample."""
    if not os.path.isfile(path):
        raise FileNotFoundError(f"no such signal file: {path}")
    s = read_signal(path)
    if cfg["shot_interval"] > 0:
        shots = slice_shots(s, cfg["shot_interval"], cfg["shot_offset"])
        k = cfg["shot_index"]
        if not 0 <= k < len(shots):
            raise ConfigError(f"shot_index {k} outside the {len(shots)} shots in {path}")
        s = shots[k]
        log.info("shot %d: %.3f-%.3f s", k, s.start_time, s.end_time)
    if abs(s.sample_rate - cfg["sample_rate"]) > 1e-9:
        log.info("resampling %g Hz -> %g Hz", s.sample_rate, cfg["sample_rate"])
        s = decimate(s, cfg["sample_rate"])
    return s


def _is_curve_file(path: str) -> bool:
    if not path.lower().endswith(".csv"):
        return False
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip() and not line.startswith("#"):
                return line.strip().lower().startswith("mode,")
    return False


def _relative_curves(cfg: RunConfig, path: str) -> DispersionCurveSet:
    d = read_curves_csv(path)
    if d.kind == "absolute":
        d = make_relative(d, cfg.anchor)
    return d


def _signal_kwargs(cfg: RunConfig) -> dict:
    return dict(n_modes=cfg["modes"], band=cfg.band, crossover_freq=cfg["crossover_freq"],
                anchor=cfg.anchor, max_iter=cfg["max_iter"], weighted=cfg["weighted"],
                gate=cfg["gate"], warp_betas=cfg["warp_betas"])


def _result_summary(res) -> dict:
    d = res.diagnostics
    return {"I": res.best[0], "W": res.best[1], "range_m": res.best[2], "min_cost": res.min_cost,
            "n_points": d.get("n_points"), "gap": d.get("gap"), "degenerate": res.degenerate,
            "ties": d.get("ties")}


def _ambiguity_svg(cfg, command, res, name):
    surf = res.profile_surface()
    return _svg(cfg, command, name, heatmap_svg, x=surf.W_values, y=surf.I_values, z=surf.costs,
                title="dispersion cost (minimum over range)" if res.r_values.size > 1
                else "dispersion cost", xlabel="W (m)", ylabel="I (m/s)",
                marker=(res.best[1], res.best[0]), log_scale=True)


def _write_inversion(cfg, command, res, stem, baseline):
    _csv(cfg, command, res, f"{stem}_ambiguity.csv")
    _ambiguity_svg(cfg, command, res, f"{stem}_ambiguity.svg")
    _csv(cfg, command, res.matched_curves, f"{stem}_model_curves.csv",
         [f"reference: {res.matched_curves.reference[0]},{res.matched_curves.reference[1]!r}"])
    path = _out(cfg, f"{stem}_profile.csv")
    write_profile_csv(build_profile(baseline, res.params), path,
                      cfg.header(command) + [f"I={res.best[0]!r} W={res.best[1]!r}"])
    log.info("wrote %s", path)


def _curve_extra(d: DispersionCurveSet):
    return [f"reference: {d.reference[0]},{d.reference[1]!r}"] if d.reference else []


# ----------------------------------------------------------------- commands

def cmd_fit_ssp(cfg: RunConfig, args) -> int:
    measured = read_profile_csv(args.profile)
    baseline = cfg.baseline()
    p, surf = fit_params(measured, baseline, cfg.grid())
    lines = [f"# {h}" for h in cfg.header("fit-ssp")]
    lines += [f"I={p.I!r}", f"W={p.W!r}", f"cost={surf.min_cost!r}",
              f"near_minimum={surf.near_minimum_count()}",
              f"degenerate={'true' if surf.degenerate else 'false'}"]
    _write_text(_out(cfg, "fit_params.txt"), "\n".join(lines) + "\n")
    _csv(cfg, "fit-ssp", surf, "fit_cost_surface.csv")
    z = perturbation_grid()
    fitted = build_profile(baseline, p)
    rows = zip(z, measured.speed_at(z), fitted.speed_at(z), baseline.speed_at(z))
    path = _out(cfg, "fit_comparison.csv")
    _write_csv(path, ["depth_m", "measured_mps", "fitted_mps", "baseline_mps"], rows,
               cfg.header("fit-ssp"))
    log.info("wrote %s", path)
    _svg(cfg, "fit-ssp", "fit_comparison.svg", lines_svg,
         series=[(measured.speed_at(z), z, "measured"), (fitted.speed_at(z), z, "fitted"),
                 (baseline.speed_at(z), z, "baseline")],
         title=f"fit I={p.I:g} m/s, W={p.W:g} m", xlabel="sound speed (m/s)",
         ylabel="depth (m)", invert_y=True)
    if surf.degenerate:
        log.warning("fit is degenerate: %d grid points share the minimum", surf.near_minimum_count())
    print(f"I={p.I:g} W={p.W:g} cost={surf.min_cost:.6g}"
          + (" (degenerate)" if surf.degenerate else ""))
    return EXIT_OK


def cmd_build_table(cfg: RunConfig, args) -> int:
    t0 = time.perf_counter()
    gv = load_table(cfg)
    path = _out(cfg, "gv_table.gvtb")
    gv.save(path)
    log.info("wrote %s", path)
    if cfg["table_csv"]:
        _csv(cfg, "build-table", gv, "gv_table.csv")
    missing = int(np.count_nonzero(np.isnan(gv.values)))
    print(f"table {gv.values.shape} ready in {time.perf_counter() - t0:.2f} s"
          + (f", {missing} missing entries" if missing else ""))
    return EXIT_OK


def _model_velocities(cfg, gv, baseline, p):
    try:
        return gv.velocities(p.I, p.W)
    except ConfigError:
        log.info("(I=%g, W=%g) off the table grid; solving directly", p.I, p.W)
        return mode_table(_spec(cfg, baseline, p), gv.freqs, cfg["modes"])


def cmd_forward(cfg: RunConfig, args) -> int:
    baseline = cfg.baseline()
    p = DualChannelParams(cfg["I"], cfg["W"])
    gv = load_table(cfg)
    v = _model_velocities(cfg, gv, baseline, p)
    rows = [(m + 1, f, v[m, k]) for m in range(v.shape[0]) for k, f in enumerate(gv.freqs)]
    path = _out(cfg, "group_velocity.csv")
    _write_csv(path, ["mode", "freq_hz", "vg_mps"], rows,
               cfg.header("forward") + [f"I={p.I!r} W={p.W!r}"])
    log.info("wrote %s", path)
    spec = _spec(cfg, baseline, p)
    summary = {}
    for r in cfg.ranges_m:
        tag = _km(r)
        curves = dispersion_curves(v, r, gv.freqs)
        _csv(cfg, "forward", curves, f"curves_{tag}.csv")
        s = _synth(cfg, "forward", [spec], np.array([0.0, r]))
        wav = _out(cfg, f"signal_{tag}.wav")
        write_wav(s, wav, cfg["wav_format"])
        log.info("wrote %s", wav)
        _spectrogram_svg(cfg, "forward", s, f"spectrogram_{tag}.svg", curves, r)
        t0, t1 = energy_span(s)
        summary[tag] = {"window_s": s.duration, "energy_span_s": [t0, t1],
                        "max_arrival_reduced_s": max(float(np.nanmax(t)) for _, t in
                                                     curves.curves.values()) - r / C_REF}
    _write_report(cfg, "forward", _out(cfg, "forward_report.json"), summary)
    return EXIT_OK


def _spectrogram_svg(cfg, command, s, name, curves=None, r=None):
    sg = spectrogram(s, cfg["spec_window"], cfg["spec_hop"]).band(*cfg.band)
    overlays = []
    if curves is not None:
        for m, (f, t) in curves.curves.items():
            overlays.append((t - r / C_REF + s.start_time if r is not None else t, f, f"mode {m}"))
    _svg(cfg, command, name, heatmap_svg, x=sg.times, y=sg.freqs, z=sg.magnitudes ** 2,
         title="spectrogram", xlabel="time (s)", ylabel="frequency (Hz)", log_scale=True,
         overlays=overlays)
    return sg


def _parse_segments(text: str) -> List[DualChannelParams]:
    out = []
    for item in text.split(","):
        item = item.strip()
        if not item:
            continue
        try:
            I, W = (float(x) for x in item.split(":"))
        except ValueError:
            raise ConfigError(f"segments: expected I:W, got {item!r}") from None
        out.append(DualChannelParams(I, W))
    return out


def cmd_synth(cfg: RunConfig, args) -> int:
    baseline = cfg.baseline()
    ranges = cfg.ranges_m
    if cfg["segments"]:
        params = _parse_segments(cfg["segments"])
        if len(params) != ranges.size:
            raise ConfigError(f"{len(params)} segments but {ranges.size} ranges")
        if np.any(np.diff(ranges) <= 0):
            raise ConfigError("range_km must increase for a range-dependent model")
        jobs = [([_spec(cfg, baseline, q) for q in params], np.concatenate([[0.0], ranges]))]
    else:
        spec = _spec(cfg, baseline, DualChannelParams(cfg["I"], cfg["W"]))
        jobs = [([spec], np.array([0.0, r])) for r in ranges]
    for specs, bps in jobs:
        s = _synth(cfg, "synth", specs, bps)
        path = _out(cfg, f"signal_{_km(bps[-1])}.wav")
        write_wav(s, path, cfg["wav_format"])
        log.info("wrote %s (%.1f s)", path, s.duration)
    return EXIT_OK


def cmd_spectrogram(cfg: RunConfig, args) -> int:
    s = ingest(cfg, args.signal)
    stem = _stem(args.signal)
    sg = _spectrogram_svg(cfg, "spectrogram", s, f"{stem}_spectrogram.svg")
    _csv(cfg, "spectrogram", sg, f"{stem}_spectrogram.csv")
    return EXIT_OK


def _invert_one(cfg, gv, s):
    if cfg["invert_mode"] == "joint":
        return invert_signal(s, gv, r_grid=cfg.r_grid, **_signal_kwargs(cfg))
    return invert_signal(s, gv, r=float(cfg.ranges_m[0]), **_signal_kwargs(cfg))


def _extraction_summary(out) -> dict:
    rep = out.extraction
    return {"guide": list(out.scan.best), "passes": [list(h) for h in out.history],
            "converged": out.converged, "notes": list(rep.notes), "stats": dict(rep.stats),
            "crossover_hz": rep.split.crossover_freq, "n_points": rep.curves.n_points(),
            "modes": rep.curves.modes}


def _require_files(*paths):
    """Fail on a missing input before any table is built."""
    for p in paths:
        if not os.path.isfile(p):
            raise FileNotFoundError(f"no such input file: {p}")


def cmd_extract(cfg: RunConfig, args) -> int:
    s = ingest(cfg, args.signal)
    gv = load_table(cfg)
    out = _invert_one(cfg, gv, s)
    stem = _stem(args.signal)
    curves = out.extraction.curves
    _csv(cfg, "extract", curves, f"{stem}_curves.csv", _curve_extra(curves))
    _write_report(cfg, "extract", _out(cfg, f"{stem}_extract.json"), _extraction_summary(out))
    print(f"extracted {curves.n_points()} points on modes {curves.modes}")
    return EXIT_OK


def cmd_invert(cfg: RunConfig, args) -> int:
    _require_files(args.signal)
    gv = load_table(cfg)
    baseline = cfg.baseline()
    stem = _stem(args.signal)
    report = {"input": os.path.basename(args.signal), "mode": cfg["invert_mode"]}
    if _is_curve_file(args.signal):
        measured = _relative_curves(cfg, args.signal)
        if cfg["invert_mode"] == "joint":
            res = invert_joint_range(measured, gv, cfg.r_grid, cfg["weighted"])
        else:
            res = invert_fixed_range(measured, gv, float(cfg.ranges_m[0]), cfg["weighted"])
    else:
        s = ingest(cfg, args.signal)
        out = _invert_one(cfg, gv, s)
        res = out.result
        curves = out.extraction.curves
        _csv(cfg, "invert", curves, f"{stem}_curves.csv", _curve_extra(curves))
        report["extraction"] = _extraction_summary(out)
    _write_inversion(cfg, "invert", res, stem, baseline)
    report["inversion"] = _result_summary(res)
    _write_report(cfg, "invert", _out(cfg, f"{stem}_report.json"), report)
    print(f"I={res.best[0]:g} W={res.best[1]:g} r={res.best[2] / 1e3:g} km "
          f"cost={res.min_cost:.4g}" + (" (degenerate)" if res.degenerate else ""))
    return EXIT_OK


def _split_input(item: str):
    head, sep, tail = item.rpartition(":")
    if sep:
        try:
            return head, float(tail) * 1e3
        except ValueError:
            pass
    return item, None


def _write_segments(cfg, command, segs: RangeSegments, baseline):
    _csv(cfg, command, segs, "segments.csv")
    profiles, fld = result_to_profiles(segs, baseline, n_ranges=cfg["field_ranges"])
    _csv(cfg, command, fld, "field.csv")
    for k, prof in enumerate(profiles):
        path = _out(cfg, f"segment{k + 1}_profile.csv")
        write_profile_csv(prof, path, cfg.header(command))
        log.info("wrote %s", path)


def cmd_invert_rd(cfg: RunConfig, args) -> int:
    items = [_split_input(x) for x in args.signals]
    _require_files(*(p for p, _ in items))
    gv = load_table(cfg)
    baseline = cfg.baseline()
    if any(r is None for _, r in items):
        if len(cfg.ranges_m) != len(items):
            raise ConfigError("give each input as PATH:RANGE_KM or list range_km in order")
        items = [(p, r) for (p, _), r in zip(items, cfg.ranges_m)]
    report = {"inputs": [[os.path.basename(p), r] for p, r in items]}
    curve_inputs = [_is_curve_file(p) for p, _ in items]
    if any(curve_inputs) and not all(curve_inputs):
        raise ConfigError("mix of curve files and signals; give one kind")
    try:
        if all(curve_inputs):
            segs = invert_segmented([(_relative_curves(cfg, p), r) for p, r in items], gv,
                                    cfg["weighted"])
        else:
            signals = [(ingest(cfg, p), r) for p, r in items]
            segs = invert_segmented_signals(signals, gv, **_signal_kwargs(cfg))
    except ExtractionError as exc:
        partial = getattr(exc, "partial", None)
        if partial is not None:
            _write_segments(cfg, "invert-rd", partial, baseline)
            log.error("segment %d failed; wrote the %d segments inverted so far",
                      len(partial) + 1, len(partial))
        raise
    for k, res in enumerate(segs.results):
        _csv(cfg, "invert-rd", res, f"segment{k + 1}_ambiguity.csv")
        _ambiguity_svg(cfg, "invert-rd", res, f"segment{k + 1}_ambiguity.svg")
    _write_segments(cfg, "invert-rd", segs, baseline)
    report["segments"] = [{"r_start_m": a, "r_end_m": b, **_result_summary(res)}
                          for a, b, res in zip(segs.breakpoints[:-1], segs.breakpoints[1:],
                                               segs.results)]
    _write_report(cfg, "invert-rd", _out(cfg, "invert_rd_report.json"), report)
    for a, b, p in zip(segs.breakpoints[:-1], segs.breakpoints[1:], segs.params):
        print(f"{a / 1e3:g}-{b / 1e3:g} km: I={p.I:g} W={p.W:g}")
    return EXIT_OK


def read_segments_csv(path) -> RangeSegments:
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    bps, params = [0.0], []
    for lineno, fields in iter_csv_rows(text, path, ("r_start_m", "r_end_m", "i", "w")):
        if len(fields) != 4:
            raise ParseError(f"expected 4 fields, got {len(fields)}", path, lineno)
        try:
            a, b, I, W = (float(x) for x in fields)
        except ValueError:
            raise ParseError("non-numeric value", path, lineno) from None
        if a != bps[-1]:
            raise ParseError(f"segment starts at {a:g} m, previous ended at {bps[-1]:g} m",
                             path, lineno)
        if b <= a:
            raise ParseError("segment end must exceed its start", path, lineno)
        bps.append(b)
        params.append(DualChannelParams(I, W))
    if not params:
        raise ParseError("no segments", path)
    return RangeSegments(np.array(bps), params)


def cmd_export_field(cfg: RunConfig, args) -> int:
    segs = read_segments_csv(args.segments)
    _write_segments(cfg, "export-field", segs, cfg.baseline())
    return EXIT_OK


# --------------------------------------------------------------------- main

COMMANDS = {
    "fit-ssp": (cmd_fit_ssp, "fit (I, W) to a measured profile CSV", [("profile", {})]),
    "build-table": (cmd_build_table, "build or load the cached group-velocity table", []),
    "forward": (cmd_forward, "table, dispersion curves, synthetic WAV and spectrogram", []),
    "synth": (cmd_synth, "synthesize WAV signals (optionally range dependent)", []),
    "spectrogram": (cmd_spectrogram, "spectrogram CSV/SVG of a recording", [("signal", {})]),
    "extract": (cmd_extract, "extract relative dispersion curves from a recording",
                [("signal", {})]),
    "invert": (cmd_invert, "invert one recording or curve CSV (fixed or joint range)",
               [("signal", {})]),
    "invert-rd": (cmd_invert_rd, "segmented inversion from recordings at increasing ranges",
                  [("signals", {"nargs": "+", "metavar": "PATH[:RANGE_KM]"})]),
    "export-field": (cmd_export_field, "range-depth sound speed field from a segments CSV",
                     [("segments", {})]),
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("settings (also accepted as key = value in --config)")
    common.add_argument("-c", "--config", help="flat key = value settings file")
    common.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    common.add_argument("-q", "--quiet", action="store_true", help="warnings and errors only")
    for o in OPTIONS:
        g.add_argument(f"--{o.name.replace('_', '-')}", dest=o.name, default=None,
                       metavar=o.kind.upper(), help=f"{o.help} (default: {o.default or 'none'})")
    parser = argparse.ArgumentParser(
        prog="arcticduct",
        description="Dual-duct sound speed inversion from modal dispersion of broadband pulses.",
        epilog="exit codes: 0 ok, 2 config, 3 parse, 4 numerical, 5 extraction, 6 I/O")
    parser.add_argument("--version", action="version", version=f"arcticduct {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (fn, help_text, positionals) in COMMANDS.items():
        p = sub.add_parser(name, parents=[common], help=help_text, description=help_text)
        for pos, kw in positionals:
            p.add_argument(pos, **kw)
        p.set_defaults(func=fn)
    return parser


def _setup_logging(args):
    root = logging.getLogger("arcticduct")
    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    root.setLevel(level)
    if not any(getattr(h, "_arcticduct", False) for h in root.handlers):
        h = logging.StreamHandler(sys.stderr)
        h.setFormatter(logging.Formatter("arcticduct: %(message)s"))
        h._arcticduct = True
        root.addHandler(h)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _setup_logging(args)
    try:
        file_values = {}
        if args.config:
            with open(args.config, encoding="utf-8") as fh:
                file_values = parse_config_text(fh.read(), args.config)
        overrides = {o.name: getattr(args, o.name) for o in OPTIONS}
        cfg = RunConfig.resolve(file_values, overrides)
        return args.func(cfg, args)
    except ParseError as exc:
        log.error("parse error: %s", exc)
        return EXIT_PARSE
    except ConfigError as exc:
        log.error("configuration error: %s", exc)
        return EXIT_CONFIG
    except ExtractionError as exc:
        log.error("extraction failed: %s", exc)
        return EXIT_EXTRACTION
    except NumericalError as exc:
        log.error("numerical failure: %s", exc)
        return EXIT_NUMERICAL
    except OSError as exc:
        log.error("I/O error: %s", exc)
        return EXIT_IO
    except ArcticDuctError as exc:
        log.error("%s", exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
