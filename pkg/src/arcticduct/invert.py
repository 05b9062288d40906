"""Grid-search inversion of duct parameters from relative dispersion curves.

Every model curve is relative to an anchor (mode, frequency), so for a
source at range r the modelled relative time of mode m at frequency f is

    r * (1/v_g(m, f) - 1/v_g(anchor)) = r * D(m, f).

D is evaluated once for the whole group-velocity table at the measured
points, after which fixed-range, joint-range and segmented searches are
plain array reductions.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import ConfigError, ExtractionError, InsufficientOverlapError
from .modes import DispersionCurveSet, GroupVelocityTable, dispersion_curves, make_relative
from .profile import (CostSurface, DepthProfile, DualChannelParams, ParamGrid, _write_csv,
                      build_profile)

log = logging.getLogger(__name__)

__all__ = ["ParamGrid", "InversionResult", "RangeSegments", "RangeField", "SignalInversion",
           "dispersion_cost", "invert_fixed_range", "invert_joint_range", "invert_segment",
           "invert_segmented", "invert_signal", "invert_segmented_signals", "scan_guides", "GuideScan",
           "result_to_profiles", "DEFAULT_RANGES", "MIN_POINTS"]

MIN_POINTS = 10
DEGENERACY_GAP = 0.01
# second-best search excludes the best point's neighbourhood (grid steps)
GAP_EXCLUSION = 2
DEFAULT_RANGES = np.arange(100e3, 600e3 + 1.0, 5e3)


def _flatten(d: DispersionCurveSet, quality: bool = False):
    """(modes, freqs, times[, quality]) of all finite points."""
    ms, fs, ts, qs = [], [], [], []
    for m, (f, t) in d.curves.items():
        ok = np.isfinite(t)
        ms.append(np.full(np.count_nonzero(ok), m))
        fs.append(f[ok])
        ts.append(t[ok])
        q = d.quality.get(m) if (quality and d.quality) else None
        qs.append(np.ones(ok.sum()) if q is None else np.asarray(q, float)[ok])
    cat = (lambda x: np.concatenate(x) if x else np.zeros(0))
    return cat(ms).astype(int), cat(fs), cat(ts), cat(qs)


def dispersion_cost(model: DispersionCurveSet, measured: DispersionCurveSet,
                    min_points: int = MIN_POINTS) -> Tuple[float, int]:
    """Sum of squared relative-time differences over shared points.

    A measured point is shared when its mode exists in ``model`` and its
    frequency lies inside that mode's modelled band; the model is linearly
    interpolated there.  Returns (cost in s^2, number of points).
    """
    for d, name in ((model, "model"), (measured, "measured")):
        if d.kind != "relative":
            raise ConfigError(f"{name} curves must be relative")
    if model.reference is None or measured.reference is None or \
            model.reference[0] != measured.reference[0] or \
            not np.isclose(model.reference[1], measured.reference[1]):
        raise ConfigError("model and measured curves use different anchors")
    total, n = 0.0, 0
    for m, (f, t) in measured.curves.items():
        if m not in model.curves:
            continue
        fm, tm = model.curves[m]
        ok = np.isfinite(t) & (f >= fm[0] - 1e-9) & (f <= fm[-1] + 1e-9)
        if not np.any(ok):
            continue
        d = np.interp(f[ok], fm, tm) - t[ok]
        total += float(np.dot(d, d))
        n += int(ok.sum())
    if n < min_points:
        raise InsufficientOverlapError(f"only {n} common points (need {min_points})")
    return total, n


# ---------------------------------------------------------------- surfaces

def _relative_slowness(gv: GroupVelocityTable, measured: DispersionCurveSet):
    """Grid-wide D(m, f) at the measured points, shape (nI, nW, n_points).

    Points outside the table band or whose bracketing table entries are
    missing come back NaN.
    """
    mode, fa = measured.reference
    if not 1 <= mode <= gv.n_modes:
        raise ConfigError(f"anchor mode {mode} not in table")
    ms, fs, ts, qs = _flatten(measured, quality=True)
    inband = (fs >= gv.freqs[0] - 1e-9) & (fs <= gv.freqs[-1] + 1e-9) & (ms <= gv.n_modes)
    D = np.full(gv.values.shape[:2] + (ms.size,), np.nan)
    if np.any(inband):
        s = gv.slowness(fs[inband])  # (nI, nW, M, n)
        D[..., inband] = s[:, :, ms[inband] - 1, np.arange(s.shape[-1])]
    s_anchor = gv.slowness(np.array([fa]))[:, :, mode - 1, 0]
    return D - s_anchor[..., None], ts, qs


@dataclass(frozen=True, eq=False)
class InversionResult:
    """Grid-search outcome.

    ``costs`` has shape (nI, nW, nr); fixed-range searches have nr == 1.
    Grid points with too few shared points hold +inf.
    """

    I_values: np.ndarray
    W_values: np.ndarray
    r_values: np.ndarray
    costs: np.ndarray
    best: Tuple[float, float, float]
    n_points: np.ndarray
    matched_curves: Optional[DispersionCurveSet] = None
    diagnostics: Dict[str, object] = field(default_factory=dict)

    @property
    def params(self) -> DualChannelParams:
        return DualChannelParams(self.best[0], self.best[1])

    @property
    def range_m(self) -> float:
        return self.best[2]

    @property
    def min_cost(self) -> float:
        return float(np.min(self.costs))

    @property
    def degenerate(self) -> bool:
        return bool(self.diagnostics.get("degenerate", False))

    def surface(self, r: Optional[float] = None) -> CostSurface:
        """2-D (I, W) slice at range ``r`` (default: best range)."""
        r = self.best[2] if r is None else r
        k = int(np.argmin(np.abs(self.r_values - r)))
        return CostSurface(self.I_values, self.W_values, self.costs[:, :, k])

    def profile_surface(self) -> CostSurface:
        """Cost minimised over range for every (I, W)."""
        return CostSurface(self.I_values, self.W_values, self.costs.min(axis=2))

    def to_csv(self, path_or_buf, header_lines: Sequence[str] = ()):
        if self.r_values.size == 1:
            self.surface().to_csv(path_or_buf, header_lines)
            return
        rows = [(I, W, r, self.costs[a, b, k])
                for a, I in enumerate(self.I_values)
                for b, W in enumerate(self.W_values)
                for k, r in enumerate(self.r_values)]
        _write_csv(path_or_buf, ["I", "W", "r_m", "cost"], rows, header_lines)


def _argmin3(costs):
    """Index of the minimum; ties go to smallest r, then W, then I."""
    best = costs.min()
    hits = np.argwhere(costs == best)
    return tuple(int(x) for x in min(map(tuple, hits), key=lambda t: (t[2], t[1], t[0])))


def _gap(costs, idx, exclusion=GAP_EXCLUSION):
    """(second-best - best) / (max - min) away from the best point's neighbourhood."""
    fin = np.isfinite(costs)
    span = float(costs[fin].max() - costs[fin].min()) if fin.any() else 0.0
    mask = fin.copy()
    sl = tuple(slice(max(i - exclusion, 0), i + exclusion + 1) for i in idx)
    mask[sl] = False
    if not mask.any() or span == 0:
        return float("nan")
    return float((costs[mask].min() - costs[idx]) / span)


def _finish(gv, measured, costs, n, r_values, weights_used, extra=None) -> InversionResult:
    if not np.any(np.isfinite(costs)):
        raise InsufficientOverlapError("no grid point shares enough points with the measurement")
    idx = _argmin3(costs)
    I, W, r = float(gv.I_values[idx[0]]), float(gv.W_values[idx[1]]), float(r_values[idx[2]])
    # with a range axis, measure the gap on the (I, W) surface minimised over
    # range: a shifted range alone should not count as a rival solution
    gap = _gap(costs.min(axis=2)[..., None], (idx[0], idx[1], 0))
    diag = {"n_points": int(n[idx[0], idx[1]]), "gap": gap,
            "degenerate": bool(np.isfinite(gap) and gap < DEGENERACY_GAP),
            "ties": int(np.count_nonzero(costs == costs[idx])),
            "weighted": weights_used}
    if extra:
        diag.update(extra)
    v = gv.values[idx[0], idx[1]]
    matched = make_relative(dispersion_curves(v, r, gv.freqs), measured.reference)
    return InversionResult(gv.I_values, gv.W_values, np.asarray(r_values, float), costs,
                           (I, W, r), n, matched, diag)


def _weights(qs, use):
    return qs if use else np.ones_like(qs)


def invert_joint_range(measured: DispersionCurveSet, gv: GroupVelocityTable,
                       r_grid=DEFAULT_RANGES, weighted: bool = False,
                       min_points: int = MIN_POINTS) -> InversionResult:
    """Exhaustive search over (I, W, r).

    The degeneracy flag is raised when the best cost outside a two-step
    neighbourhood of the optimum is within 1% (of the surface range) of
    the optimum itself.
    """
    if measured.kind != "relative":
        raise ConfigError("measured curves must be relative")
    r_grid = np.atleast_1d(np.asarray(r_grid, dtype=float))
    if r_grid.size == 0 or np.any(r_grid <= 0):
        raise ConfigError("range grid must be nonempty and positive")
    D, t, q = _relative_slowness(gv, measured)
    w = _weights(q, weighted)
    costs = np.empty(D.shape[:2] + (r_grid.size,))
    for k, r in enumerate(r_grid):
        costs[..., k], n = _direct_costs(D, t, w, 0.0, r)
    costs[n < min_points] = np.inf
    return _finish(gv, measured, costs, n, r_grid, weighted)


def invert_fixed_range(measured: DispersionCurveSet, gv: GroupVelocityTable, r: float,
                       weighted: bool = False, min_points: int = MIN_POINTS) -> InversionResult:
    """Exhaustive (I, W) search with the source range known."""
    if not r > 0:
        raise ConfigError("range must be positive")
    return invert_joint_range(measured, gv, [r], weighted, min_points)


def _direct_costs(D, t, w, offset, dr):
    """Cost per grid point of offset + dr * D against t (no quadratic shortcut)."""
    pred = offset + dr * D
    ok = np.isfinite(pred)
    res = np.where(ok, pred - t, 0.0)
    return (w * res * res).sum(-1), ok.sum(-1)


# --------------------------------------------------------------- segments

@dataclass(frozen=True, eq=False)
class RangeSegments:
    """Piecewise-constant duct parameters; segment k spans (b[k], b[k+1]]."""

    breakpoints: np.ndarray
    params: List[DualChannelParams]
    results: List[InversionResult] = field(default_factory=list)

    def __post_init__(self):
        b = np.asarray(self.breakpoints, dtype=float)
        if b.ndim != 1 or b.size < 2 or b[0] != 0 or np.any(np.diff(b) <= 0):
            raise ConfigError("breakpoints must start at 0 and increase strictly")
        if len(self.params) != b.size - 1:
            raise ConfigError("need one parameter pair per segment")
        object.__setattr__(self, "breakpoints", b)

    def __len__(self):
        return len(self.params)

    @property
    def midpoints(self) -> np.ndarray:
        return 0.5 * (self.breakpoints[:-1] + self.breakpoints[1:])

    def to_csv(self, path_or_buf, header_lines: Sequence[str] = ()):
        rows = [(a, b, p.I, p.W) for a, b, p in
                zip(self.breakpoints[:-1], self.breakpoints[1:], self.params)]
        _write_csv(path_or_buf, ["r_start_m", "r_end_m", "I", "W"], rows, header_lines)


def _check_ranges(ranges):
    ranges = np.asarray(ranges, dtype=float)
    if ranges.size == 0 or ranges[0] <= 0 or np.any(np.diff(ranges) <= 0):
        raise ConfigError("signal ranges must be positive and strictly increasing")
    return np.concatenate([[0.0], ranges])


def invert_segment(measured: DispersionCurveSet, gv: GroupVelocityTable, breakpoints,
                   fixed: Sequence[DualChannelParams] = (), weighted: bool = False,
                   min_points: int = MIN_POINTS) -> InversionResult:
    """Invert the last segment of ``breakpoints`` with earlier ones fixed.

    Modelled time is sum_i dr_i / v_g^(i); ``fixed`` holds the parameters
    of all but the last segment and must lie on the table grid.
    """
    bps = np.asarray(breakpoints, dtype=float)
    if len(fixed) != bps.size - 2:
        raise ConfigError("need parameters for every segment but the last")
    if measured.kind != "relative":
        raise ConfigError("measured curves must be relative")
    D, t, q = _relative_slowness(gv, measured)
    offset = np.zeros(t.size)
    for p, dr in zip(fixed, np.diff(bps)):
        a, b = gv.index(p.I, p.W)
        offset = offset + dr * D[a, b]
    costs, n = _direct_costs(D, t, _weights(q, weighted), offset, bps[-1] - bps[-2])
    costs = costs[..., None]
    costs[n < min_points] = np.inf
    k = bps.size - 2
    return _finish(gv, measured, costs, n, np.array([bps[-1]]), weighted,
                   {"segment": k, "segment_span_m": (float(bps[-2]), float(bps[-1]))})


def invert_segmented(measured_set: Sequence[Tuple[DispersionCurveSet, float]],
                     gv: GroupVelocityTable, weighted: bool = False,
                     min_points: int = MIN_POINTS) -> RangeSegments:
    """Segment-by-segment inversion from signals at increasing ranges.

    Signal k (range r_k) fixes segment (r_{k-1}, r_k]; earlier segments keep
    the parameters found from earlier signals.  If a segment fails, the
    error carries the segments inverted so far as ``partial``.
    """
    if not measured_set:
        raise ConfigError("no signals given")
    bps = _check_ranges([r for _, r in measured_set])
    params: List[DualChannelParams] = []
    results: List[InversionResult] = []
    for k, (meas, _) in enumerate(measured_set):
        try:
            res = invert_segment(meas, gv, bps[:k + 2], params, weighted, min_points)
        except InsufficientOverlapError as exc:
            if params:
                exc.partial = RangeSegments(bps[:k + 1], list(params), list(results))
            raise
        params.append(res.params)
        results.append(res)
        log.info("segment %d (%.0f-%.0f m): I=%g W=%g", k, bps[k], bps[k + 1], *res.best[:2])
    return RangeSegments(bps, params, results)


# ------------------------------------------------------- signal pipelines

GUIDE_GATE = 0.08


@dataclass(frozen=True, eq=False)
class GuideScan:
    """Label-free misfit of every table model against a signal's spectral peaks.

    ``scores`` (nI, nW, nr) is the truncated squared misfit (see
    ``scan_guides``); ``shifts`` the matching anchor arrival time on the
    signal clock.
    """

    I_values: np.ndarray
    W_values: np.ndarray
    r_values: np.ndarray
    scores: np.ndarray
    shifts: np.ndarray

    @property
    def best_index(self):
        return _argmin3(self.scores)

    @property
    def best(self) -> Tuple[float, float, float]:
        a, b, k = self.best_index
        return float(self.I_values[a]), float(self.W_values[b]), float(self.r_values[k])

    @property
    def best_shift(self) -> float:
        return float(self.shifts[self.best_index])

    def score_at(self, I: float, W: float, r: float) -> float:
        a = int(np.argmin(np.abs(self.I_values - I)))
        b = int(np.argmin(np.abs(self.W_values - W)))
        k = int(np.argmin(np.abs(self.r_values - r)))
        return float(self.scores[a, b, k])


def _model_relative(gv: GroupVelocityTable, freqs, anchor, breakpoints, fixed=()):
    """Relative model times (nI, nW, M, nF) for the last segment over the grid."""
    mode, fa = anchor
    s = gv.slowness(freqs)
    s = s - gv.slowness(np.array([fa]))[:, :, mode - 1, 0][..., None, None]
    bps = np.asarray(breakpoints, dtype=float)
    out = (bps[-1] - bps[-2]) * s
    for p, dr in zip(fixed, np.diff(bps)):
        a, b = gv.index(p.I, p.W)
        out = out + dr * s[a, b]
    return out


def scan_guides(signal, gv: GroupVelocityTable, r=None, r_grid=None, breakpoints=None,
                fixed: Sequence[DualChannelParams] = (), band=(10.0, 100.0),
                anchor=(1, 20.0), gate: float = GUIDE_GATE, n_peaks: int = 3,
                anchor_span: float = 5.0, **peak_kwargs) -> GuideScan:
    """Score every table model against the signal without labelling modes.

    Spectrogram peaks are taken once (``spectral_peaks``).  A model is
    aligned to the signal by trying each peak within ``anchor_span`` Hz of
    the anchor as the anchor arrival; every peak then costs
    min(d, gate)^2, d being its distance to the nearest model mode, and the
    best alignment is kept.  Peaks no model mode explains cost gate^2, so
    the score rewards models that account for all visible energy.
    """
    from .extract import spectral_peaks

    if sum(x is not None for x in (r, r_grid, breakpoints)) != 1:
        raise ConfigError("give exactly one of r, r_grid or breakpoints")
    if breakpoints is not None:
        bps_list = [np.asarray(breakpoints, dtype=float)]
        r_values = bps_list[0][-1:]
    else:
        r_values = np.atleast_1d(np.asarray(r if r is not None else r_grid, dtype=float))
        if r_values.size == 0 or np.any(r_values <= 0):
            raise ConfigError("ranges must be positive")
        bps_list = [np.array([0.0, rv]) for rv in r_values]
        fixed = ()
    lo, hi = max(band[0], gv.freqs[0]), min(band[1], gv.freqs[-1])
    freqs, peaks = spectral_peaks(signal, (lo, hi), n_peaks, **peak_kwargs)
    found = np.isfinite(peaks)
    if not found.any():
        raise InsufficientOverlapError("no spectral peaks in band")
    near = np.nonzero(np.abs(freqs - anchor[1]) <= anchor_span)[0]
    nI, nW = gv.values.shape[:2]
    scores = np.full((nI, nW, r_values.size), np.inf)
    shifts = np.full((nI, nW, r_values.size), np.nan)
    pk = np.where(found, peaks, np.inf)[None, None, :, :, None]   # (1,1,nF,P,1)
    for k, bps in enumerate(bps_list):
        R = np.moveaxis(_model_relative(gv, freqs, anchor, bps, fixed), 2, 3)  # nI,nW,nF,M
        R = np.where(np.isfinite(R), R, np.inf)
        for i in near:
            for j in np.nonzero(found[i])[0]:
                shift = peaks[i, j] - R[:, :, i, anchor[0] - 1]           # nI,nW
                ok = np.isfinite(shift)
                d = np.abs(pk - np.where(ok, shift, 0.0)[..., None, None, None]
                           - R[:, :, :, None, :])
                d = np.minimum(d.min(-1), gate)
                sc = np.where(found[None, None], d * d, 0.0).sum((-1, -2))
                sc = np.where(ok, sc, np.inf)
                better = sc < scores[:, :, k]
                scores[:, :, k] = np.where(better, sc, scores[:, :, k])
                shifts[:, :, k] = np.where(better, shift, shifts[:, :, k])
    if not np.isfinite(scores).any():
        raise InsufficientOverlapError(f"no peaks near the anchor frequency {anchor[1]:g} Hz")
    return GuideScan(gv.I_values, gv.W_values, r_values, scores, shifts)


@dataclass
class SignalInversion:
    """Result of ``invert_signal``: the inversion, its extraction and the scan."""

    result: InversionResult
    extraction: object
    scan: GuideScan
    history: List[Tuple[float, float, float]] = field(default_factory=list)
    converged: bool = True


def _table_curves(gv, p: DualChannelParams, bps, fixed, anchor) -> DispersionCurveSet:
    """Relative model curves for one grid point (segments as in ``_model_relative``)."""
    a, b = gv.index(p.I, p.W)
    s = 1.0 / gv.values
    t = (bps[-1] - bps[-2]) * s[a, b]
    for q, dr in zip(fixed, np.diff(bps)):
        i, j = gv.index(q.I, q.W)
        t = t + dr * s[i, j]
    curves = {m + 1: (gv.freqs[np.isfinite(t[m])], t[m][np.isfinite(t[m])])
              for m in range(t.shape[0]) if np.isfinite(t[m]).sum() >= 2}
    return make_relative(DispersionCurveSet(curves, "absolute", None, float(bps[-1])), anchor)


def invert_signal(signal, gv: GroupVelocityTable, r=None, r_grid=None, breakpoints=None,
                  fixed: Sequence[DualChannelParams] = (), n_modes: int = 3,
                  band=(10.0, 100.0), crossover_freq: float = 45.0, anchor=(1, 20.0),
                  warp_modes=(1,), max_iter: int = 3, weighted: bool = False,
                  gate: float = GUIDE_GATE, warp_betas=None) -> SignalInversion:
    """Extract dispersion curves from a signal and invert them.

    Extraction needs a model to calibrate warps and name ridges.  The model
    is chosen by ``scan_guides``; curves extracted under it are inverted
    with the dispersion cost.  Should the estimate differ from the guide,
    extraction is repeated under the estimate, up to ``max_iter`` passes;
    without agreement the pass whose estimate scores best in the scan wins.

    Exactly one of ``r`` (fixed range), ``r_grid`` (joint range search) or
    ``breakpoints`` (last segment of a segmented model, earlier segments
    given by ``fixed``) is used.  ``warp_betas`` overrides the candidate
    warp exponents.
    """
    from .extract import _anchor_time, calibrate_delay_warps, extract_dispersion

    scan = scan_guides(signal, gv, r, r_grid, breakpoints, fixed, band, anchor, gate)
    I, W, r_now = scan.best
    p, shift = DualChannelParams(I, W), scan.best_shift
    passes, history = [], []
    beta_kw = {} if warp_betas is None else {"betas": tuple(float(b) for b in warp_betas)}
    for _ in range(max_iter):
        bps = (np.asarray(breakpoints, dtype=float) if breakpoints is not None
               else np.array([0.0, r_now]))
        rel = _table_curves(gv, p, bps, fixed if breakpoints is not None else (), anchor)
        absolute = DispersionCurveSet({m: (f, t + shift) for m, (f, t) in rel.curves.items()},
                                      "absolute", None, rel.range_m)
        warps = calibrate_delay_warps(absolute, warp_modes, (band[0], crossover_freq),
                                      window=signal.duration, sample_rate=signal.sample_rate,
                                      start_time=signal.start_time, **beta_kw)
        rep = extract_dispersion(signal, n_modes, warps, band, crossover_freq, anchor,
                                 guide=rel, gate=gate)
        if breakpoints is not None:
            res = invert_segment(rep.curves, gv, breakpoints, fixed, weighted)
        elif r is not None:
            res = invert_fixed_range(rep.curves, gv, r, weighted)
        else:
            res = invert_joint_range(rep.curves, gv, r_grid, weighted)
        passes.append((res, rep))
        history.append(res.best)
        log.info("guide I=%g W=%g r=%g -> I=%g W=%g r=%g", p.I, p.W, r_now, *res.best)
        if (res.best[0], res.best[1]) == (p.I, p.W) and np.isclose(res.best[2], r_now):
            return SignalInversion(res, rep, scan, history, True)
        p, r_now = res.params, res.best[2]
        try:
            shift = _anchor_time(rep.low, anchor)
        except ExtractionError:
            break
    res, rep = min(passes, key=lambda o: scan.score_at(*o[0].best))
    return SignalInversion(res, rep, scan, history, False)


def invert_segmented_signals(signals: Sequence[Tuple[object, float]], gv: GroupVelocityTable,
                             **kwargs) -> RangeSegments:
    """Segmented inversion straight from signals at increasing ranges.

    Each signal is processed by ``invert_signal`` against a model whose
    earlier segments are fixed at their already inverted values.
    """
    if not signals:
        raise ConfigError("no signals given")
    bps = _check_ranges([r for _, r in signals])
    params: List[DualChannelParams] = []
    results: List[InversionResult] = []
    for k, (sig, _) in enumerate(signals):
        try:
            out = invert_signal(sig, gv, breakpoints=bps[:k + 2], fixed=params, **kwargs)
        except InsufficientOverlapError as exc:
            if params:
                exc.partial = RangeSegments(bps[:k + 1], list(params), list(results))
            raise
        params.append(out.result.params)
        results.append(out.result)
    return RangeSegments(bps, params, results)


@dataclass(frozen=True, eq=False)
class RangeField:
    """Sound speed on a (range, depth) grid."""

    ranges: np.ndarray
    depths: np.ndarray
    speeds: np.ndarray

    def to_csv(self, path_or_buf, header_lines: Sequence[str] = ()):
        rows = [(r, z, self.speeds[i, j]) for i, r in enumerate(self.ranges)
                for j, z in enumerate(self.depths)]
        _write_csv(path_or_buf, ["range_m", "depth_m", "speed_mps"], rows, header_lines)


def result_to_profiles(res: RangeSegments, baseline: DepthProfile, ranges=None,
                       n_ranges: int = 101):
    """Per-segment profiles plus a range-interpolated field.

    The field interpolates linearly in range between segment midpoints and
    is constant beyond the first and last midpoint.
    """
    profiles = [build_profile(baseline, p) for p in res.params]
    depths = profiles[0].depths
    if ranges is None:
        ranges = np.linspace(0.0, res.breakpoints[-1], n_ranges)
    ranges = np.asarray(ranges, dtype=float)
    table = np.array([p.speed_at(depths) for p in profiles])
    mids = res.midpoints
    speeds = np.empty((ranges.size, depths.size))
    for j in range(depths.size):
        speeds[:, j] = np.interp(ranges, mids, table[:, j])
    return profiles, RangeField(ranges, depths, speeds)
