"""Modal dispersion curve extraction from a single-hydrophone time series.

The received signal is divided into a non-crossing part, where modes arrive
in low-frequency order and are separated by a power-law warping transform,
and a crossing part, where arrival times are read from per-frequency energy
peaks of the spectrogram.  The two sets of partial curves are merged and
referenced to an anchor point.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.ndimage import uniform_filter1d
from scipy.signal import find_peaks

from .errors import ConfigError, ExtractionError
from .modes import DispersionCurveSet, make_relative
from .synth import Signal, Spectrogram, spectrogram

log = logging.getLogger(__name__)

DEFAULT_CROSSOVER = 45.0
QUALITY_FLOOR_RATIO = 3.0
ANCHOR_TOLERANCE = 2.0
PROVENANCE_WARPED = "warped"
PROVENANCE_PEAK = "peak"


# ------------------------------------------------------------------ warping

@dataclass(frozen=True)
class PowerLawWarp:
    """Time map t = h(w) = origin +/- t_ref * (w / t_ref) ** beta, for w > 0.

    With ``reverse`` the power law runs backwards from ``origin``, which
    suits refracted modes that arrive before a limiting time.  The map is
    increasing when ``beta > 0`` without reverse or ``beta < 0`` with it.
    """

    beta: float = 0.5
    t_ref: float = 1.0
    origin: float = 0.0
    reverse: bool = False

    def __post_init__(self):
        if self.beta == 0 or not np.isfinite(self.beta):
            raise ConfigError("warp exponent must be finite and nonzero")
        if self.t_ref <= 0:
            raise ConfigError("warp t_ref must be positive")
        if (self.beta > 0) == self.reverse:
            raise ConfigError("warp is not increasing: use beta > 0 forward or beta < 0 reversed")

    def __call__(self, w):
        u = self.t_ref * (np.asarray(w, dtype=float) / self.t_ref) ** self.beta
        return self.origin - u if self.reverse else self.origin + u

    def derivative(self, w):
        d = self.beta * (np.asarray(w, dtype=float) / self.t_ref) ** (self.beta - 1)
        return -d if self.reverse else d

    def inverse_at(self, t):
        t = np.asarray(t, dtype=float)
        u = self.origin - t if self.reverse else t - self.origin
        return self.t_ref * (u / self.t_ref) ** (1.0 / self.beta)

    def valid_time(self, t):
        """True where ``t`` lies in the image of the map."""
        t = np.asarray(t, dtype=float)
        return (t < self.origin) if self.reverse else (t > self.origin)

    def inverse(self) -> "InverseWarp":
        return InverseWarp(self)

    @classmethod
    def for_support(cls, beta: float, origin: float, t_a: float, t_b: float) -> "PowerLawWarp":
        """Warp whose preimage of [t_a, t_b] has the same length t_b - t_a.

        The direction follows the sign of ``beta``; keeping the warped span
        equal to the physical one makes warped frequencies comparable to
        physical ones.
        """
        reverse = beta < 0
        ua, ub = (origin - t_a, origin - t_b) if reverse else (t_a - origin, t_b - origin)
        if min(ua, ub) <= 0 or t_b <= t_a:
            raise ConfigError("support must lie strictly on one side of the warp origin")
        # w = t_ref**((beta-1)/beta) * u**(1/beta)
        span = abs(ua ** (1 / beta) - ub ** (1 / beta))
        t_ref = ((t_b - t_a) / span) ** (beta / (beta - 1)) if beta != 1 else 1.0
        return cls(beta, t_ref, origin, reverse)


@dataclass(frozen=True)
class InverseWarp:
    """Inverse of a warp: maps physical time back to the warped variable."""

    forward: PowerLawWarp

    def __call__(self, t):
        return self.forward.inverse_at(t)

    def derivative(self, t):
        return 1.0 / self.forward.derivative(self.forward.inverse_at(t))

    def inverse_at(self, w):
        return self.forward(w)

    def valid_time(self, w):
        return np.asarray(w, dtype=float) > 0

    def inverse(self) -> PowerLawWarp:
        return self.forward


def fourier_eval(s: Signal, t, rel_floor: float = 1e-13) -> np.ndarray:
    """Band-limited (periodic) interpolation of ``s`` at arbitrary times."""
    t = np.asarray(t, dtype=float)
    n = s.samples.size
    X = np.fft.rfft(s.samples)
    f = np.fft.rfftfreq(n, 1.0 / s.sample_rate)
    w = np.full(X.size, 2.0)
    w[0] = 1.0
    if n % 2 == 0:
        w[-1] = 1.0
    keep = np.abs(X) > rel_floor * np.abs(X).max() if np.any(X) else np.zeros(X.size, bool)
    fk, ck = f[keep], (w * X)[keep] / n
    out = np.zeros(t.size)
    tau = t - s.start_time
    step = max(1, int(4_000_000 // max(fk.size, 1)))
    for i in range(0, t.size, step):
        out[i:i + step] = np.real(np.exp(2j * np.pi * np.outer(tau[i:i + step], fk)) @ ck)
    return out


def _bandwidth(s: Signal, frac: float = 1 - 1e-12) -> float:
    """Frequency below which ``frac`` of the energy lies."""
    P = np.abs(np.fft.rfft(s.samples)) ** 2
    if P.sum() == 0:
        return 0.0
    c = np.cumsum(P) / P.sum()
    f = np.fft.rfftfreq(s.samples.size, 1.0 / s.sample_rate)
    return float(f[min(np.searchsorted(c, frac), f.size - 1)])


def warp(s: Signal, h, sample_rate: Optional[float] = None, start: Optional[float] = None,
         n_samples: Optional[int] = None, oversample: float = 2.5,
         max_samples: int = 1 << 20) -> Signal:
    """Unitary warping: out(w) = sqrt(h'(w)) * s(h(w)).

    The output grid spans the preimage of the signal support unless
    ``start``/``n_samples`` are given; its rate defaults to ``oversample``
    times the largest warped instantaneous frequency.  Points mapping
    outside the signal support are set to zero.
    """
    t_first, t_last = s.start_time, s.start_time + (s.samples.size - 1) / s.sample_rate
    if start is None or n_samples is None:
        ts = np.linspace(t_first, t_last, 4097)
        ts = ts[h.valid_time(ts)]
        if ts.size < 2:
            raise ConfigError("signal support lies outside the warp domain")
        wa, wb = float(h.inverse_at(ts[0])), float(h.inverse_at(ts[-1]))
        if sample_rate is None:
            wg = np.linspace(wa, wb, 4097)
            dmax = float(np.max(np.abs(h.derivative(wg))))
            fmax = _bandwidth(s)
            sample_rate = max(oversample * 2 * fmax * dmax, 1e-12)
        start = wa if start is None else start
        n_samples = int(np.floor((wb - start) * sample_rate)) + 1
    if sample_rate is None:
        raise ConfigError("sample_rate required with an explicit output grid")
    if n_samples > max_samples:
        raise ConfigError(f"warped grid needs {n_samples} samples (> {max_samples})")
    w = start + np.arange(n_samples) / sample_rate
    d = h.derivative(w)
    if np.any(~np.isfinite(d)) or np.any(d <= 0):
        ok = np.isfinite(d) & (d > 0)
        if not np.any(ok):
            raise ConfigError("warp is not strictly increasing on the signal support")
    else:
        ok = np.ones(w.size, bool)
    t = np.where(ok, h(np.where(ok, w, 1.0)) if ok.any() else 0.0, np.nan)
    inside = ok & (t >= t_first - 0.5 / s.sample_rate) & (t <= t_last + 0.5 / s.sample_rate)
    out = np.zeros(w.size)
    if np.any(inside):
        out[inside] = np.sqrt(d[inside]) * fourier_eval(s, t[inside])
    return Signal(sample_rate, start, out, s.comment)


def unwarp(y: Signal, h, like: Signal) -> Signal:
    """Map a warped signal back onto the time grid of ``like``."""
    return warp(y, h.inverse(), like.sample_rate, like.start_time, like.samples.size)


def concentration(y: Signal, width: float) -> Tuple[float, float]:
    """Largest energy fraction of ``y`` inside any spectral band of ``width``.

    Returns (fraction, band centre).
    """
    P = np.abs(np.fft.rfft(y.samples)) ** 2
    f = np.fft.rfftfreq(y.samples.size, 1.0 / y.sample_rate)
    tot = P.sum()
    if tot == 0:
        return 0.0, 0.0
    c = np.concatenate([[0.0], np.cumsum(P)])
    hi = np.searchsorted(f, f + width, side="right")
    frac = (c[hi] - c[np.arange(f.size)]) / tot
    i = int(np.argmax(frac))
    return float(frac[i]), float(f[i] + width / 2)


def energy_support(s: Signal, frac: float = 1e-4, pad: float = 0.0):
    """Interval holding all but ``frac`` of the energy, padded by ``pad`` s."""
    e = np.cumsum(s.samples ** 2)
    if e.size == 0 or e[-1] == 0:
        raise ExtractionError("signal has no energy")
    e = e / e[-1]
    t = s.times
    a = float(t[min(np.searchsorted(e, frac / 2), t.size - 1)])
    b = float(t[min(np.searchsorted(e, 1 - frac / 2), t.size - 1)])
    return max(a - pad, s.start_time), min(b + pad, t[-1])


def calibrate_warp(mode_signal: Signal, betas: Sequence[float], origins: Sequence[float],
                   width: float = 3.0, support=None, margin: float = 0.05):
    """Pick the power-law warp that best turns a single mode into a tone.

    ``mode_signal`` should contain one model-synthesized mode.  For each
    (beta, origin) the warp is scaled to the mode's energy support (see
    ``PowerLawWarp.for_support``) and the energy fraction inside a
    ``width`` band of the warped spectrum is measured; the best pair wins.
    Origins closer than ``margin`` to the support are skipped.  Returns
    (warp, fraction).
    """
    h, c, _ = _calibrate(mode_signal, betas, origins, width, support, margin)
    return h, c


def _calibrate(mode_signal, betas, origins, width, support, margin):
    t_a, t_b = energy_support(mode_signal) if support is None else support
    part = mode_signal.window(t_a, t_b)
    best, best_c, best_nu = None, -1.0, 0.0
    for b in betas:
        for o in origins:
            if (b < 0 and o < t_b + margin) or (b > 0 and o > t_a - margin):
                continue
            try:
                h = PowerLawWarp.for_support(float(b), float(o), t_a, t_b)
                y = warp(part, h)
            except ConfigError:
                continue
            c, nu = concentration(y, width)
            if c > best_c:
                best, best_c, best_nu = h, c, nu
    if best is None:
        raise ExtractionError("no admissible warp in the calibration set")
    return best, best_c, best_nu


@dataclass(frozen=True)
class ModeWarp:
    """A warp calibrated for one mode and where that mode lands once warped."""

    warp: PowerLawWarp
    centre: float
    concentration: float
    support: Optional[Tuple[float, float]] = None


# -------------------------------------------------------------- segmenting

@dataclass(frozen=True, eq=False)
class SegmentSplit:
    """Earlier (non-crossing) and later (crossing) parts of a signal."""

    split_time: float
    noncrossing: Signal
    crossing: Signal
    crossover_freq: Optional[float]
    has_crossing: bool = True
    domain: str = "time"


def _band_mask(s: Signal, lo: float, hi: float) -> Signal:
    X = np.fft.rfft(s.samples)
    f = np.fft.rfftfreq(s.samples.size, 1.0 / s.sample_rate)
    X[(f < lo) | (f >= hi)] = 0
    return Signal(s.sample_rate, s.start_time, np.fft.irfft(X, s.samples.size), s.comment)


def dominant_frequency_track(sg: Spectrogram, energy_floor: float = 0.01):
    """Frequency of the strongest bin per frame, NaN for quiet frames."""
    col = (sg.magnitudes ** 2).sum(axis=0)
    f = sg.freqs[np.argmax(sg.magnitudes, axis=0)].astype(float)
    f[col < energy_floor * col.max()] = np.nan
    return f


def split_signal(s: Signal, hint: Optional[float] = None,
                 crossover_freq: Optional[float] = DEFAULT_CROSSOVER,
                 window_len: float = 0.5, hop: float = 0.02,
                 domain: str = "time") -> SegmentSplit:
    """Divide a signal into non-crossing and crossing parts.

    In the time domain the split is at ``hint`` or, without one, at the
    first loud spectrogram frame whose dominant frequency exceeds
    ``crossover_freq``.  A ``crossover_freq`` of None means the modes never
    swap order: the crossing part is empty and ``has_crossing`` is False.

    ``domain="band"`` instead returns complementary low/high-pass parts
    (summing to the input) divided at ``crossover_freq``; ``split_time``
    is still reported.
    """
    if s.samples.size < 2 * int(round(window_len * s.sample_rate)):
        raise ExtractionError("signal shorter than two spectrogram windows")
    if domain not in ("time", "band"):
        raise ConfigError(f"unknown split domain {domain!r}")
    if crossover_freq is None:
        empty = Signal(s.sample_rate, s.end_time, np.zeros(0), s.comment)
        return SegmentSplit(s.end_time, s, empty, None, False, domain)
    if hint is not None:
        split = float(hint)
        if not s.start_time <= split <= s.end_time:
            raise ConfigError("split hint outside the signal")
    else:
        sg = spectrogram(s, window_len, hop)
        dom = dominant_frequency_track(sg)
        above = np.nonzero(dom > crossover_freq)[0]
        split = float(sg.times[above[0]]) if above.size else s.end_time
    if domain == "band":
        low = _band_mask(s, 0.0, crossover_freq)
        high = Signal(s.sample_rate, s.start_time, s.samples - low.samples, s.comment)
        return SegmentSplit(split, low, high, float(crossover_freq), True, domain)
    early = s.window(s.start_time, split)
    late = s.window(split, s.end_time + 1.0 / s.sample_rate)
    return SegmentSplit(split, early, late, float(crossover_freq), late.samples.size > 0, domain)


# -------------------------------------------------------------- extraction

@dataclass(frozen=True, eq=False)
class ExtractedCurve:
    """Arrival times picked for one mode; ``provenance`` is 'warped' or 'peak'."""

    mode: int
    freqs: np.ndarray
    times: np.ndarray
    quality: np.ndarray
    provenance: np.ndarray

    def __post_init__(self):
        n = np.asarray(self.freqs).size
        for a in (self.times, self.quality, self.provenance):
            if np.asarray(a).size != n:
                raise ConfigError("extracted curve arrays differ in length")
        if np.any(np.diff(self.freqs) <= 0):
            raise ConfigError("extracted curve frequencies must be strictly increasing")

    def __len__(self):
        return np.asarray(self.freqs).size

    def shifted(self, dt: float) -> "ExtractedCurve":
        return ExtractedCurve(self.mode, self.freqs, self.times + dt, self.quality, self.provenance)


def snr_quality(snr):
    """Map ridge SNR (peak over median) to a quality in [0, 1)."""
    snr = np.asarray(snr, dtype=float)
    return np.clip(1.0 - 1.0 / np.maximum(snr, 1.0), 0.0, 1.0)


def _parabolic(y, i):
    """Sub-sample offset of a peak at index ``i`` from its two neighbours."""
    if i <= 0 or i >= y.size - 1:
        return 0.0
    a, b, c = y[i - 1], y[i], y[i + 1]
    den = a - 2 * b + c
    return 0.0 if den >= 0 else float(np.clip(0.5 * (a - c) / den, -0.5, 0.5))


def ridge(sg: Spectrogram, band, floor_ratio: float = QUALITY_FLOOR_RATIO,
          rel_floor: float = 0.0):
    """Time of maximum magnitude in each frequency bin of ``band``.

    Bins whose peak is below ``floor_ratio`` times the bin median, or below
    ``rel_floor`` times the global maximum, are skipped.  Returns
    (freqs, times, quality).
    """
    lo, hi = band
    sel = np.nonzero((sg.freqs >= lo) & (sg.freqs <= hi))[0]
    gmax = sg.magnitudes.max() if sg.magnitudes.size else 0.0
    dt = sg.times[1] - sg.times[0] if sg.times.size > 1 else 0.0
    fo, to, qo = [], [], []
    for i in sel:
        row = sg.magnitudes[i]
        j = int(np.argmax(row))
        med = float(np.median(row))
        peak = float(row[j])
        if peak <= 0 or peak < floor_ratio * med or peak < rel_floor * gmax:
            continue
        off = _parabolic(np.log(np.maximum(row, 1e-300)), j)
        fo.append(sg.freqs[i])
        to.append(sg.times[j] + off * dt)
        qo.append(snr_quality(peak / max(med, 1e-300)))
    return np.array(fo), np.array(to), np.array(qo)


def _warped_tonals(y: Signal, n_modes: int, rel_height: float, smooth_hz: float):
    """Warped-spectrum peaks and separating boundaries, sorted by frequency."""
    P = np.abs(np.fft.rfft(y.samples))
    nu = np.fft.rfftfreq(y.samples.size, 1.0 / y.sample_rate)
    dnu = nu[1] - nu[0]
    k = max(1, int(round(smooth_hz / dnu)))
    Ps = uniform_filter1d(P, k) if k > 1 else P
    pk, props = find_peaks(Ps, height=rel_height * Ps.max(), distance=max(1, k))
    if pk.size == 0:
        return [], []
    pk = pk[np.argsort(Ps[pk])[::-1][:n_modes]]
    pk = np.sort(pk)
    # boundaries at the spectral minima between neighbouring tonals
    bounds = [0.0]
    for a, b in zip(pk[:-1], pk[1:]):
        bounds.append(float(nu[a + int(np.argmin(Ps[a:b + 1]))]) - 0.5 * dnu)
    bounds.append(float(nu[-1]) + dnu)
    return list(nu[pk]), bounds


def _tonal_bounds(Ps, nu, k, floor: float = 0.1):
    """Walk down from peak ``k`` to the nearest minimum or ``floor`` level."""
    lim = floor * Ps[k]
    a = k
    while a > 0 and Ps[a - 1] <= Ps[a] and Ps[a] > lim:
        a -= 1
    b = k
    while b < Ps.size - 1 and Ps[b + 1] <= Ps[b] and Ps[b] > lim:
        b += 1
    # half-bin edges so rounding in nu never moves a bin across the boundary
    dnu = nu[1] - nu[0]
    return float(nu[a]) - 0.5 * dnu, float(nu[b]) + 0.5 * dnu


def _domain_part(low: Signal, h, pad: float, margin: float, frac: float = 0.01,
                 support=None) -> Signal:
    """Energetic part of ``low`` kept at least ``margin`` s inside the warp domain.

    With ``support`` (the model mode's arrival span) the part is that span
    widened by ``pad`` or a quarter of its length, whichever is larger.
    """
    if support is None:
        t_a, t_b = energy_support(low, frac, pad)
    else:
        w = max(pad, 0.25 * (support[1] - support[0]))
        t_a, t_b = max(support[0] - w, low.start_time), min(support[1] + w, low.end_time)
    t = low.times
    if isinstance(h, PowerLawWarp):
        if h.reverse:
            t_b = min(t_b, h.origin - margin)
        else:
            t_a = max(t_a, h.origin + margin)
    inside = t[(t >= t_a) & (t <= t_b) & h.valid_time(t)]
    if inside.size < 2:
        raise ExtractionError("segment lies outside the warp domain")
    return low.window(inside[0], inside[-1] + 0.5 / low.sample_rate)


def _component_ridge(y: Signal, a: float, b: float, h, part: Signal, low: Signal, band,
                     window_len, hop, nfft_factor, rel_floor):
    """Isolate warped band [a, b), unwarp onto ``low``'s grid and take its ridge."""
    ym = _band_mask(y, a, b)
    sm = unwarp(ym, h, part)
    full = np.zeros(low.samples.size)
    i0 = int(round((part.start_time - low.start_time) * low.sample_rate))
    full[i0:i0 + sm.samples.size] = sm.samples[:low.samples.size - i0]
    sig = Signal(low.sample_rate, low.start_time, full)
    nper = int(round(window_len * low.sample_rate))
    sg = spectrogram(sig, window_len, hop, nfft=nfft_factor * nper)
    return ridge(sg, band, rel_floor=rel_floor)


def _warped_curve(f, t, q, mode):
    return ExtractedCurve(mode, f, t, q, np.array([PROVENANCE_WARPED] * f.size, dtype=object))


def _drop_duplicates(curves: List[ExtractedCurve], scores: Dict[int, float], tol: float):
    """Remove curves that retrace another one (unresolved modes).

    Two curves are duplicates when over half of their shared frequencies
    differ by less than ``tol`` seconds; the one with the lower score goes.
    """
    keep = {c.mode: c for c in curves}
    modes = sorted(keep)
    for i, a in enumerate(modes):
        for b in modes[i + 1:]:
            if a not in keep or b not in keep:
                continue
            ca, cb = keep[a], keep[b]
            common, ia, ib = np.intersect1d(np.round(ca.freqs, 9), np.round(cb.freqs, 9),
                                            return_indices=True)
            if common.size == 0:
                continue
            close = np.abs(ca.times[ia] - cb.times[ib]) < tol
            if np.count_nonzero(close) > 0.5 * common.size:
                loser = a if scores.get(a, 0) < scores.get(b, 0) else b
                log.info("mode %d retraces mode %d; dropped", loser, b if loser == a else a)
                del keep[loser]
    return [keep[m] for m in sorted(keep)]


def extract_noncrossing(seg: Signal, n_modes: int, h, band=(10.0, DEFAULT_CROSSOVER),
                        window_len: float = 0.5, hop: float = 0.01, nfft_factor: int = 4,
                        tonal_height: float = 0.05, smooth_hz: Optional[float] = None,
                        rel_floor: float = 0.01, margin: float = 0.05, pad: float = 0.1,
                        duplicate_tol: float = 0.03) -> List[ExtractedCurve]:
    """Warping-based mode separation and ridge extraction on the low band.

    ``h`` is either one warp or a mapping mode -> warp.

    With one warp, each quasi-tonal peak of the warped spectrum is isolated
    between its neighbouring minima, unwarped, and its spectrogram ridge
    taken per frequency bin.  Curves are labelled by arrival order: the
    latest is mode 1, the earliest mode ``n_modes``, others in between.

    With a mapping (typically from ``calibrate_mode_warps``) each mode is
    isolated as one tonal under its own warp: the one nearest the
    calibrated warped frequency for ``ModeWarp`` values, the strongest for
    bare warps.  Curves that retrace
    another mode's curve are dropped, keeping the one whose tonal is the
    more concentrated.

    Fewer curves than ``n_modes`` are returned when modes cannot be
    separated.
    """
    if n_modes < 1:
        raise ConfigError("n_modes must be >= 1")
    lo, hi = band
    low = _band_mask(seg, lo, hi)
    args = (window_len, hop, nfft_factor, rel_floor)

    if isinstance(h, dict):
        curves, scores = [], {}
        for mode in sorted(h):
            if not 1 <= mode <= n_modes:
                continue
            hm, centre, support = h[mode], None, None
            if isinstance(hm, ModeWarp):
                hm, centre, support = hm.warp, hm.centre, hm.support
            part = _domain_part(low, hm, pad, margin, support=support)
            y = warp(part, hm)
            P = np.abs(np.fft.rfft(y.samples))
            nu = np.fft.rfftfreq(y.samples.size, 1.0 / y.sample_rate)
            k = max(1, int(round((smooth_hz or 2.0 / y.duration) / (nu[1] - nu[0]))))
            Ps = uniform_filter1d(P, k) if k > 1 else P
            if centre is None:
                kp = int(np.argmax(Ps[1:])) + 1
            else:
                # the local maximum closest to where calibration put the mode
                pk, _ = find_peaks(Ps, height=tonal_height * Ps.max())
                if pk.size == 0:
                    continue
                kp = int(pk[np.argmin(np.abs(nu[pk] - centre))])
            a, b = _tonal_bounds(Ps, nu, kp)
            band_sel = (nu >= a) & (nu < b)
            scores[mode] = float((P[band_sel] ** 2).sum() / max((P ** 2).sum(), 1e-300))
            f, t, q = _component_ridge(y, a, b, hm, part, low, band, *args)
            if f.size:
                curves.append(_warped_curve(f, t, q, mode))
        out = _drop_duplicates(curves, scores, duplicate_tol)
        if len(out) < n_modes:
            log.info("non-crossing extraction separated %d of %d modes", len(out), n_modes)
        return out

    part = _domain_part(low, h, pad, margin)
    y = warp(part, h)
    if smooth_hz is None:
        smooth_hz = 2.0 / max(y.duration, 1e-12)
    tonals, bounds = _warped_tonals(y, n_modes, tonal_height, smooth_hz)
    if len(tonals) < n_modes:
        log.info("found %d of %d warped tonals", len(tonals), n_modes)
    pieces = []
    for a, b in zip(bounds[:-1], bounds[1:]):
        f, t, q = _component_ridge(y, a, b, h, part, low, band, *args)
        if f.size:
            pieces.append((float(np.average(t, weights=np.maximum(q, 1e-12))), f, t, q))
    pieces.sort(key=lambda p: -p[0])  # latest first
    k = len(pieces)
    labels = [1] + list(range(n_modes - k + 2, n_modes + 1)) if k else []
    out = [_warped_curve(f, t, q, lab) for lab, (_, f, t, q) in zip(labels, pieces)]
    return sorted(out, key=lambda c: c.mode)


def calibrate_mode_warps(spec, r, modes=(1, 2, 3), band=(10.0, DEFAULT_CROSSOVER),
                         z_src: float = 10.0, z_rcv: float = 10.0,
                         betas=(0.25, 0.35, 0.5, 0.7, 1.0, 1.5),
                         lead=(0.05, 0.1, 0.2, 0.3, 0.5, 0.8, 1.2, 2.0),
                         width: float = 3.0, **synth_kwargs):
    """One calibrated forward warp per mode from a guess waveguide.

    ``spec``/``r`` are a waveguide and range or segment waveguides and
    breakpoints, as for ``model_guide``.
    Each mode is synthesized alone at range ``r`` over ``band``; origins
    are tried at ``lead`` seconds before its energy support.  Returns
    {mode: ModeWarp}; modes absent from the model are skipped.
    """
    from .synth import synthesize_range_dependent
    specs, bps = _segments(spec, r)
    signals = {}
    for m in modes:
        sm = synthesize_range_dependent(specs, bps, z_src, z_rcv, band=band, modes=[m],
                                        **synth_kwargs)
        if np.any(sm.samples):
            signals[m] = sm
    return _mode_warps(signals, betas, lead, width)


def calibrate_delay_warps(curves: DispersionCurveSet, modes=(1,), band=(10.0, DEFAULT_CROSSOVER),
                          betas=(0.25, 0.35, 0.5, 0.7, 1.0, 1.5),
                          lead=(0.05, 0.1, 0.2, 0.3, 0.5, 0.8, 1.2, 2.0),
                          width: float = 3.0, **chirp_kwargs):
    """Like ``calibrate_mode_warps`` but from model arrival times alone.

    ``curves`` holds absolute arrival times on the clock of the signal to
    be warped (pass its ``start_time``, ``window`` and ``sample_rate``
    through ``chirp_kwargs``); each mode is stood in for by
    ``chirp_from_delays``, so no mode solves are needed.
    """
    from .synth import chirp_from_delays
    if curves.kind != "absolute":
        raise ConfigError("warp calibration needs absolute arrival times")
    start = chirp_kwargs.pop("start_time", 0.0)
    signals = {}
    for m in modes:
        if m not in curves.curves:
            continue
        f, t = curves.curves[m]
        sel = (f >= band[0] - 1) & (f <= band[1] + 1)
        if np.count_nonzero(sel) >= 2:
            signals[m] = chirp_from_delays(f[sel], t[sel] - start, band,
                                           **chirp_kwargs).delayed(start)
    return _mode_warps(signals, betas, lead, width)


def _mode_warps(signals, betas, lead, width):
    warps = {}
    for m, sm in signals.items():
        t_a, t_b = energy_support(sm, 0.01)
        h, c, nu = _calibrate(sm, betas, t_a - np.asarray(lead), width, (t_a, t_b), 0.05)
        warps[m] = ModeWarp(h, nu, c, (t_a, t_b))
    return warps


def _peaks_per_bin(sg: Spectrogram, band, n_modes, floor_ratio, peak_ratio=0.1,
                   min_sep=0.0):
    """Up to ``n_modes`` resolvable maxima per frequency bin.

    Secondary peaks must reach ``peak_ratio`` of the strongest one and lie
    ``min_sep`` seconds from any stronger kept peak.  Returns per bin
    (freq, times, qualities, index of the strongest) with times sorted.
    """
    lo, hi = band
    sel = np.nonzero((sg.freqs >= lo) & (sg.freqs <= hi))[0]
    dt = sg.times[1] - sg.times[0] if sg.times.size > 1 else 0.0
    out = []
    for i in sel:
        row = sg.magnitudes[i]
        med = float(np.median(row))
        pk, _ = find_peaks(row, height=max(floor_ratio * med, 1e-300))
        if pk.size == 0:
            out.append((sg.freqs[i], np.zeros(0), np.zeros(0), -1))
            continue
        pk = pk[np.argsort(row[pk])[::-1]]
        pk = pk[row[pk] >= peak_ratio * row[pk[0]]]
        kept = []
        for j in pk:
            if all(abs(sg.times[j] - sg.times[i]) >= min_sep for i in kept):
                kept.append(j)
        pk = np.array(kept[:n_modes], dtype=int)
        lg = np.log(np.maximum(row, 1e-300))
        t = np.array([sg.times[j] + _parabolic(lg, j) * dt for j in pk])
        q = snr_quality(row[pk] / max(med, 1e-300))
        order = np.argsort(t)
        out.append((sg.freqs[i], t[order], q[order], int(np.nonzero(order == 0)[0][0])))
    return out


def spectral_peaks(s: Signal, band=(10.0, 100.0), n_peaks: int = 3, window_len: float = 0.5,
                   hop: float = 0.01, nfft_factor: int = 4,
                   floor_ratio: float = QUALITY_FLOOR_RATIO, peak_ratio: float = 0.1):
    """Label-free arrival candidates: the ``_peaks_per_bin`` picks of a whole signal.

    Returns (freqs, times) with ``times`` of shape (n_freqs, n_peaks),
    NaN-padded and sorted per row.
    """
    nper = int(round(window_len * s.sample_rate))
    if s.samples.size < nper:
        raise ExtractionError("signal shorter than one spectrogram window")
    sg = spectrogram(s, window_len, hop, nfft=nfft_factor * nper)
    bins = _peaks_per_bin(sg, band, n_peaks, floor_ratio, peak_ratio, 0.5 * window_len)
    freqs = np.array([b[0] for b in bins], dtype=float)
    times = np.full((freqs.size, n_peaks), np.nan)
    for i, b in enumerate(bins):
        times[i, :b[1].size] = b[1]
    return freqs, times


def extract_crossing(seg: Signal, n_modes: int, band=(DEFAULT_CROSSOVER, 100.0),
                     seeds: Optional[Sequence[ExtractedCurve]] = None,
                     window_len: float = 0.5, hop: float = 0.01, nfft_factor: int = 4,
                     floor_ratio: float = QUALITY_FLOOR_RATIO, rel_floor: float = 0.01,
                     gate: float = 0.08, max_gap_hz: float = 3.0,
                     guide=None, anchor_time: Optional[float] = None,
                     peak_ratio: float = 0.1, dominance: float = 10.0,
                     stats: Optional[dict] = None) -> List[ExtractedCurve]:
    """Per-frequency energy peaks on the crossing part.

    Each bin contributes up to ``n_modes`` spectrogram maxima above
    ``floor_ratio`` times the bin median.  Without ``seeds`` the peaks in a
    bin are labelled by arrival order, earliest first as mode 1.  With
    seeds (curves from the neighbouring band) each seeded mode is tracked
    across frequency by continuity: a peak joins the track whose predicted
    time is nearest, within ``gate`` seconds; tracks that go ``max_gap_hz``
    without a peak stop.

    With ``guide`` (relative model curves, e.g. from ``model_guide``) and
    ``anchor_time`` (absolute arrival of the anchor in ``seg``) each peak is
    instead labelled with the guide mode predicted nearest, within ``gate``.
    When several guide modes fall inside the gate, a mode whose predicted
    amplitude is ``dominance`` times the other's takes the peak; otherwise
    the nearest must be at most half the distance to the runner-up.  Guide
    labelling takes precedence over ``seeds``.  If a ``stats`` dict is
    passed, guide labelling records how many bins left their strongest
    peak unlabelled ("unexplained") out of how many had peaks ("bins").
    """
    if seg.samples.size == 0:
        return []
    nper = int(round(window_len * seg.sample_rate))
    if seg.samples.size < nper:
        raise ExtractionError("crossing segment shorter than one spectrogram window")
    sg = spectrogram(seg, window_len, hop, nfft=nfft_factor * nper)
    bins = _peaks_per_bin(sg, band, n_modes, floor_ratio, peak_ratio, 0.5 * window_len)
    prov = PROVENANCE_PEAK
    found: Dict[int, list] = {}
    if guide is not None:
        if anchor_time is None:
            raise ConfigError("guide labelling needs the anchor arrival time")
        gm = [m for m in guide.modes if m <= n_modes]
        unexplained = 0
        for f, t, q, top in bins:
            pred = np.array([guide.time_at(m, f) + anchor_time for m in gm])
            amp = np.array([_guide_amplitude(guide, m, f) for m in gm])
            cand = []
            for j, tt in enumerate(t):
                d = np.abs(tt - pred)
                d[~np.isfinite(d)] = np.inf
                near = np.nonzero(d <= gate)[0]
                if near.size == 0:
                    continue
                i = int(near[np.argmin(d[near])])
                rivals = near[near != i]
                # near a crossing two guide modes fit: the much stronger one
                # wins, otherwise the pick must be clearly closer
                if rivals.size:
                    k = int(rivals[np.argmin(d[rivals])])
                    if amp[k] >= dominance * amp[i]:
                        i, k = k, i
                    elif not (amp[i] >= dominance * amp[k] or d[i] <= 0.5 * d[k]):
                        continue
                cand.append((d[i], i, j))
            cand.sort()
            used_i, used_j = set(), set()
            for d, i, j in cand:
                if i in used_i or j in used_j:
                    continue
                used_i.add(i)
                used_j.add(j)
                found.setdefault(gm[i], []).append((f, t[j], q[j]))
            if top >= 0 and top not in used_j:
                unexplained += 1
        if stats is not None:
            stats["unexplained"] = unexplained
            stats["bins"] = sum(1 for b in bins if b[3] >= 0)
    elif not seeds:
        for f, t, q, _ in bins:
            for rank, (tt, qq) in enumerate(zip(t, q)):
                found.setdefault(rank + 1, []).append((f, tt, qq))
    else:
        tracks = {}
        for c in seeds:
            if len(c) == 0:
                continue
            f, t = np.asarray(c.freqs), np.asarray(c.times)
            slope = np.polyfit(f[-5:], t[-5:], 1)[0] if f.size >= 5 else 0.0
            tracks[c.mode] = {"f": float(f[-1]), "t": float(t[-1]), "slope": float(slope),
                              "alive": True, "hist": []}
        for f, t, q, _ in bins:
            live = [m for m, tr in tracks.items() if tr["alive"]]
            if not live:
                break
            cand = []
            for m in live:
                tr = tracks[m]
                pred = tr["t"] + tr["slope"] * (f - tr["f"])
                for j, tt in enumerate(t):
                    d = abs(tt - pred)
                    if d <= gate:
                        cand.append((d, m, j))
            cand.sort()
            used_m, used_j = set(), set()
            for d, m, j in cand:
                if m in used_m or j in used_j:
                    continue
                used_m.add(m)
                used_j.add(j)
                tr = tracks[m]
                tr["hist"].append((f, t[j]))
                if len(tr["hist"]) >= 3:
                    hf = np.array([p[0] for p in tr["hist"][-8:]])
                    ht = np.array([p[1] for p in tr["hist"][-8:]])
                    tr["slope"] = float(np.polyfit(hf, ht, 1)[0])
                tr["f"], tr["t"] = f, t[j]
                found.setdefault(m, []).append((f, t[j], q[j]))
            for m in live:
                if m not in used_m and f - tracks[m]["f"] > max_gap_hz:
                    tracks[m]["alive"] = False
    out = []
    for m, pts in sorted(found.items()):
        pts.sort()
        f = np.array([p[0] for p in pts])
        t = np.array([p[1] for p in pts])
        q = np.array([p[2] for p in pts])
        out.append(ExtractedCurve(m, f, t, q, np.array([prov] * f.size, dtype=object)))
    return out


def _segments(spec, r):
    """Normalise (spec, range) or (specs, breakpoints) to lists."""
    if isinstance(spec, (list, tuple)):
        return list(spec), np.asarray(r, dtype=float)
    return [spec], np.array([0.0, float(r)])


def model_guide(spec, r, freqs, max_modes: int = 3, anchor=(1, 20.0),
                z_src: float = 10.0, z_rcv: float = 10.0) -> DispersionCurveSet:
    """Relative model dispersion curves used to label extracted ridges.

    ``spec`` and ``r`` are a waveguide and a range, or a list of segment
    waveguides and their breakpoints.  The ``quality`` of each point holds
    the mode's predicted amplitude |psi(z_src) psi(z_rcv)| / sqrt(k),
    normalised to the strongest mode at that frequency.
    """
    from .synth import _modal_terms
    specs, bps = _segments(spec, r)
    freqs = np.asarray(freqs, dtype=float)
    kbar, ex, tt = _modal_terms(specs, bps, freqs, z_src, z_rcv, max_modes)
    with np.errstate(invalid="ignore"):
        amp = np.abs(ex) / np.sqrt(kbar)
        amp = amp / np.nanmax(np.where(np.isfinite(amp), amp, np.nan), axis=0)
    curves, qual = {}, {}
    for m in range(max_modes):
        ok = np.isfinite(tt[m])
        if np.any(ok):
            curves[m + 1] = (freqs[ok], tt[m, ok])
            qual[m + 1] = amp[m, ok]
    return make_relative(DispersionCurveSet(curves, "absolute", None, float(bps[-1]), qual), anchor)


def _guide_amplitude(guide, m, f):
    if not guide.quality or m not in guide.quality:
        return 1.0
    fr, _ = guide.curves[m]
    return float(np.interp(f, fr, guide.quality[m]))


def merge_curves(low: Sequence[ExtractedCurve], high: Sequence[ExtractedCurve],
                 anchor=(1, 20.0), tolerance: float = ANCHOR_TOLERANCE) -> DispersionCurveSet:
    """Join low- and high-band curves per mode and reference them to ``anchor``.

    Where both bands report the same frequency the higher-quality point
    wins.  The anchor mode needs a point within ``tolerance`` Hz of the
    anchor frequency.
    """
    pts: Dict[int, Dict[float, tuple]] = {}
    for c in list(low) + list(high):
        d = pts.setdefault(c.mode, {})
        for f, t, q, p in zip(c.freqs, c.times, c.quality, c.provenance):
            key = round(float(f), 9)
            if key not in d or q > d[key][1]:
                d[key] = (float(t), float(q), p)
    curves, qual, prov = {}, {}, {}
    for m, d in pts.items():
        fs = np.array(sorted(d))
        curves[m] = (fs, np.array([d[f][0] for f in fs]))
        qual[m] = np.array([d[f][1] for f in fs])
        prov[m] = np.array([d[f][2] for f in fs], dtype=object)
    absolute = DispersionCurveSet(curves, "absolute", None, None, qual, prov)
    return make_relative(absolute, anchor, tolerance=tolerance)


def _trim(c: ExtractedCurve, fmax: float) -> ExtractedCurve:
    k = c.freqs <= fmax
    return ExtractedCurve(c.mode, c.freqs[k], c.times[k], c.quality[k], c.provenance[k])


def _anchor_time(curves, anchor, tolerance: float = ANCHOR_TOLERANCE) -> float:
    m, fa = anchor
    for c in curves:
        if c.mode == m and len(c) and c.freqs[0] - tolerance <= fa <= c.freqs[-1] + tolerance:
            return float(np.interp(fa, c.freqs, c.times))
    raise ExtractionError(f"anchor mode {m} at {fa} Hz not extracted")


@dataclass
class ExtractionReport:
    """Everything produced by ``extract_dispersion``."""

    curves: DispersionCurveSet
    split: SegmentSplit
    low: List[ExtractedCurve]
    high: List[ExtractedCurve]
    warp: object
    notes: List[str] = field(default_factory=list)
    stats: Dict[str, int] = field(default_factory=dict)


def extract_dispersion(s: Signal, n_modes: int, h, band=(10.0, 100.0),
                       crossover_freq: Optional[float] = DEFAULT_CROSSOVER,
                       anchor=(1, 20.0), split_domain: str = "band",
                       window_len: float = 0.5, hop: float = 0.01, guide=None,
                       gate: float = 0.08, edge_hz: float = 5.0) -> ExtractionReport:
    """Full two-segment extraction returning relative curves.

    The low band goes through ``extract_noncrossing`` with warp(s) ``h``;
    the crossing band through ``extract_crossing``, labelled by ``guide``
    when given (anchored on the extracted anchor-mode arrival) and by
    continuity from the low-band curves otherwise.  Low-band picks within
    ``edge_hz`` of the split frequency are dropped: the band mask biases
    ridges there.
    """
    lo, hi = band
    notes, stats = [], {}
    split = split_signal(s, crossover_freq=crossover_freq, domain=split_domain,
                         window_len=window_len)
    xf = hi if split.crossover_freq is None else split.crossover_freq
    low = extract_noncrossing(split.noncrossing, n_modes, h, (lo, xf),
                              window_len=window_len, hop=hop)
    if xf < hi and edge_hz > 0:
        low = [c for c in (_trim(c, xf - edge_hz) for c in low) if len(c)]
    if len(low) < n_modes:
        notes.append(f"non-crossing band yielded {len(low)} of {n_modes} modes")
    high = []
    if split.has_crossing and xf < hi:
        anchor_time = None
        if guide is not None:
            anchor_time = _anchor_time(low, anchor)
        high = extract_crossing(split.crossing, n_modes, (xf, hi), seeds=low,
                                window_len=window_len, hop=hop, guide=guide,
                                anchor_time=anchor_time, gate=gate, stats=stats)
    curves = merge_curves(low, high, anchor)
    return ExtractionReport(curves, split, low, high, h, notes, stats)
