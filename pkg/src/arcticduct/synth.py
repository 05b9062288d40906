"""Broadband mode-sum synthesis, spectrograms and signal I/O.

Time series are built in reduced time t' = t - r/c_ref from the frequency
domain mode sum

    P(f) = S(f) * exp(i pi/4) / sqrt(8 pi) * sum_m psi_m(zs) psi_m(zr) exp(i k_m r) / sqrt(k_m r)

under the exp(-i w t) convention.  Modes are solved on a coarse frequency
grid and the wavenumbers and excitation products are interpolated with
cubic splines onto the 1/window FFT grid.
"""
from __future__ import annotations

import io
import os
import struct
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.io import wavfile
from scipy.signal import resample_poly, spectrogram as _spectrogram

from .errors import ConfigError, ParseError, WindowError
from .modes import C_REF, WaveguideSpec, solve_modes
from .profile import _write_csv, iter_csv_rows

DEFAULT_RATE = 512.0
DEFAULT_WINDOW = 32.0
DEFAULT_BAND = (10.0, 100.0)
ARRIVAL_MARGIN = 1.0


@dataclass(frozen=True, eq=False)
class Signal:
    """Uniformly sampled pressure time series."""

    sample_rate: float
    start_time: float
    samples: np.ndarray
    comment: str = ""

    def __post_init__(self):
        x = np.asarray(self.samples, dtype=float).ravel()
        if self.sample_rate <= 0:
            raise ConfigError("sample rate must be positive")
        if not np.all(np.isfinite(x)):
            raise ConfigError("signal contains non-finite samples")
        object.__setattr__(self, "samples", x)
        object.__setattr__(self, "sample_rate", float(self.sample_rate))
        object.__setattr__(self, "start_time", float(self.start_time))

    def __len__(self):
        return self.samples.size

    @property
    def times(self) -> np.ndarray:
        return self.start_time + np.arange(self.samples.size) / self.sample_rate

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate

    @property
    def end_time(self) -> float:
        return self.start_time + self.duration

    def energy(self) -> float:
        return float(np.dot(self.samples, self.samples) / self.sample_rate)

    def delayed(self, dt: float) -> "Signal":
        return Signal(self.sample_rate, self.start_time + dt, self.samples, self.comment)

    def window(self, t0: float, t1: float) -> "Signal":
        """Samples with times in [t0, t1)."""
        i0 = int(np.clip(np.ceil((t0 - self.start_time) * self.sample_rate - 1e-9), 0, self.samples.size))
        i1 = int(np.clip(np.ceil((t1 - self.start_time) * self.sample_rate - 1e-9), i0, self.samples.size))
        return Signal(self.sample_rate, self.start_time + i0 / self.sample_rate,
                      self.samples[i0:i1], self.comment)


@dataclass(frozen=True, eq=False)
class Spectrogram:
    """STFT magnitude; ``magnitudes[i, j]`` is at freqs[i], times[j]."""

    times: np.ndarray
    freqs: np.ndarray
    magnitudes: np.ndarray
    window_len: float = 1.0
    hop: float = 0.1
    window_shape: str = "hann"

    def __post_init__(self):
        if self.magnitudes.shape != (self.freqs.size, self.times.size):
            raise ConfigError("spectrogram dimensions inconsistent")
        if np.any(self.magnitudes < 0):
            raise ConfigError("spectrogram magnitudes must be nonnegative")

    def band(self, f_lo: float, f_hi: float) -> "Spectrogram":
        m = (self.freqs >= f_lo) & (self.freqs <= f_hi)
        return Spectrogram(self.times, self.freqs[m], self.magnitudes[m],
                           self.window_len, self.hop, self.window_shape)

    def to_csv(self, path_or_buf, header_lines: Sequence[str] = ()):
        rows = ((t, f, self.magnitudes[i, j]) for j, t in enumerate(self.times)
                for i, f in enumerate(self.freqs))
        _write_csv(path_or_buf, ["time_s", "freq_hz", "magnitude"], rows, header_lines)


# ------------------------------------------------------------- synthesis

def source_spectrum(freqs, band=DEFAULT_BAND, taper: float = 0.1) -> np.ndarray:
    """Flat spectrum over ``band`` with raised-cosine edges.

    ``taper`` is the fraction of the band covered by the two cosine edges
    together.
    """
    freqs = np.asarray(freqs, dtype=float)
    f_lo, f_hi = band
    out = np.zeros(freqs.size)
    inside = (freqs >= f_lo) & (freqs <= f_hi)
    if not np.any(inside):
        return out
    u = (freqs[inside] - f_lo) / (f_hi - f_lo)
    edge = taper / 2
    w = np.ones(u.size)
    if edge > 0:
        lo = u < edge
        hi = u > 1 - edge
        w[lo] = 0.5 * (1 - np.cos(np.pi * u[lo] / edge))
        w[hi] = 0.5 * (1 - np.cos(np.pi * (1 - u[hi]) / edge))
    out[inside] = w
    return out


def _solve_grid(band, solve_df):
    f_lo, f_hi = band
    n = int(np.ceil((f_hi - f_lo) / solve_df - 1e-9))
    return np.linspace(f_lo, f_hi, n + 1)


def _modal_terms(specs, breakpoints, fs, z_src, z_rcv, max_modes):
    """Range-integrated wavenumber, excitation and slowness on grid ``fs``.

    Returns arrays (max_modes, n_f) of phase/r, psi(zs)psi(zr) and
    travel time, NaN where a mode is absent in any segment.
    """
    dr = np.diff(breakpoints)
    r = breakpoints[-1]
    kbar = np.zeros((max_modes, fs.size))
    tt = np.zeros((max_modes, fs.size))
    count = np.full(fs.size, max_modes)
    psi_src = np.full((max_modes, fs.size), np.nan)
    psi_rcv = np.full((max_modes, fs.size), np.nan)
    for i, (spec, d) in enumerate(zip(specs, dr)):
        for j, f in enumerate(fs):
            ms = solve_modes(spec, f, max_modes)
            n = ms.n_modes
            count[j] = min(count[j], n)
            if n == 0:
                continue
            kbar[:n, j] += ms.wavenumbers * d / r
            tt[:n, j] += d / ms.group_velocities
            if i == 0:
                psi_src[:n, j] = ms.at_depth(z_src)
            if i == len(specs) - 1:
                psi_rcv[:n, j] = ms.at_depth(z_rcv)
    ex = psi_src * psi_rcv
    for j in range(fs.size):
        kbar[count[j]:, j] = np.nan
        tt[count[j]:, j] = np.nan
        ex[count[j]:, j] = np.nan
    return kbar, ex, tt


def chirp_from_delays(freqs, delays, band=DEFAULT_BAND, window: float = DEFAULT_WINDOW,
                      sample_rate: float = DEFAULT_RATE, taper: float = 0.1) -> Signal:
    """Unit-amplitude pulse whose group delay follows ``delays`` (s) over ``freqs``.

    The phase is 2 pi times the running integral of the delay, so the
    result is a stationary-phase stand-in for one mode when only its
    arrival times are known.  Frequencies outside ``freqs`` get no energy.
    """
    freqs = np.asarray(freqs, dtype=float)
    delays = np.asarray(delays, dtype=float)
    ok = np.isfinite(delays)
    freqs, delays = freqs[ok], delays[ok]
    if freqs.size < 2:
        raise ConfigError("need at least two finite delays")
    n = int(round(window * sample_rate))
    fg = np.fft.rfftfreq(n, 1.0 / sample_rate)
    S = source_spectrum(fg, band, taper)
    S[(fg < freqs[0]) | (fg > freqs[-1])] = 0.0
    tau = CubicSpline(freqs, delays)(np.clip(fg, freqs[0], freqs[-1]))
    phase = 2 * np.pi * np.concatenate([[0.0], np.cumsum(0.5 * (tau[1:] + tau[:-1]) * np.diff(fg))])
    x = np.fft.irfft(S * np.exp(-1j * phase), n) * sample_rate
    return Signal(sample_rate, 0.0, x, "delay-matched chirp")


def modal_arrivals(specs, breakpoints, band=DEFAULT_BAND, max_modes=3, solve_df=0.5,
                   z_src=10.0, z_rcv=10.0):
    """Solve-grid frequencies and absolute arrival times (max_modes, n_f)."""
    breakpoints = np.asarray(breakpoints, dtype=float)
    fs = _solve_grid(band, solve_df)
    _, _, tt = _modal_terms(list(specs), breakpoints, fs, z_src, z_rcv, max_modes)
    return fs, tt


def synthesize_range_dependent(specs, breakpoints, z_src: float, z_rcv: float,
                               band=DEFAULT_BAND, window: float = DEFAULT_WINDOW,
                               sample_rate: float = DEFAULT_RATE, max_modes: int = 3,
                               taper: float = 0.1, solve_df: float = 0.5,
                               c_ref: float = C_REF, modes=None) -> Signal:
    """Adiabatic mode sum through piecewise range-independent segments.

    ``breakpoints`` are ranges 0 = r_0 < r_1 < ... < r_N and ``specs[i]``
    describes (r_i, r_{i+1}].  Mode m accumulates phase sum_i k_m^(i) dr_i;
    it is excited with the first segment's eigenfunction at ``z_src`` and
    received with the last segment's at ``z_rcv``.  ``modes`` restricts the
    sum to the given 1-based mode numbers.
    """
    specs = list(specs)
    breakpoints = np.asarray(breakpoints, dtype=float)
    if breakpoints.size != len(specs) + 1 or breakpoints[0] != 0 or np.any(np.diff(breakpoints) <= 0):
        raise ConfigError("breakpoints must be 0 < r_1 < ... with one more entry than segments")
    f_lo, f_hi = map(float, band)
    if not 0 < f_lo < f_hi:
        raise ConfigError(f"invalid band {band}")
    if sample_rate <= 2 * f_hi:
        raise ConfigError(f"sample rate {sample_rate:g} Hz too low for {f_hi:g} Hz")
    if window <= 0:
        raise ConfigError("window must be positive")
    for spec in specs:
        if not (0 <= z_src <= spec.total_depth and 0 <= z_rcv <= spec.total_depth):
            raise ConfigError("source and receiver must lie within the water column")
    r = float(breakpoints[-1])

    fs = _solve_grid((f_lo, f_hi), solve_df)
    kbar, ex, tt = _modal_terms(specs, breakpoints, fs, z_src, z_rcv, max_modes)
    reduced = tt - r / c_ref
    if np.any(np.isfinite(reduced)):
        t_min, t_max = np.nanmin(reduced), np.nanmax(reduced)
        if t_min < 0:
            raise WindowError(f"modeled arrival {t_min:.3f} s precedes the reduced-time origin "
                              f"(c_ref={c_ref:g} m/s too slow)")
        need = t_max + ARRIVAL_MARGIN
        if need > window:
            raise WindowError(f"arrival spread needs a window of at least {need:.2f} s, "
                              f"got {window:g} s")

    n = int(round(window * sample_rate))
    freqs = np.fft.rfftfreq(n, 1.0 / sample_rate)
    S = source_spectrum(freqs, (f_lo, f_hi), taper)
    active = S > 0
    fa = freqs[active]
    P = np.zeros(fa.size, dtype=complex)
    wanted = range(max_modes) if modes is None else [m - 1 for m in modes if 1 <= m <= max_modes]
    for m in wanted:
        ok = np.isfinite(kbar[m])
        if np.count_nonzero(ok) < 2:
            continue
        # modes may appear above some frequency; interpolate over that span only
        fm = fs[ok]
        sel = (fa >= fm[0]) & (fa <= fm[-1])
        if not np.any(sel):
            continue
        k = CubicSpline(fm, kbar[m, ok])(fa[sel])
        a = CubicSpline(fm, ex[m, ok])(fa[sel])
        phase = k * r - 2 * np.pi * fa[sel] * r / c_ref
        P[sel] += a * np.exp(1j * phase) / np.sqrt(k * r)
    P *= np.exp(1j * np.pi / 4) / np.sqrt(8 * np.pi)
    X = np.zeros(freqs.size, dtype=complex)
    X[active] = S[active] * np.conj(P)
    x = np.fft.irfft(X, n) * sample_rate
    return Signal(sample_rate, 0.0, x, f"reduced time t-r/{c_ref:g}, r={r:g} m")


def synthesize(spec: WaveguideSpec, z_src: float, z_rcv: float, r: float,
               band=DEFAULT_BAND, window: float = DEFAULT_WINDOW, **kwargs) -> Signal:
    """Range-independent mode-sum time series in reduced time."""
    if r <= 0:
        raise ConfigError("range must be positive")
    return synthesize_range_dependent([spec], [0.0, r], z_src, z_rcv, band, window, **kwargs)


def energy_span(s: Signal, lo: float = 0.05, hi: float = 0.95):
    """Times at which cumulative energy reaches ``lo`` and ``hi`` fractions."""
    e = np.cumsum(s.samples ** 2)
    if e[-1] == 0:
        raise ConfigError("signal has no energy")
    e /= e[-1]
    t = s.times
    return float(np.interp(lo, e, t)), float(np.interp(hi, e, t))


def half_energies(s: Signal, lo: float = 0.005, hi: float = 0.995):
    """Energy before and after the midpoint of the (lo, hi) energy span."""
    t0, t1 = energy_span(s, lo, hi)
    mid = 0.5 * (t0 + t1)
    t = s.times
    x2 = s.samples ** 2
    return float(x2[(t >= t0) & (t < mid)].sum()), float(x2[(t >= mid) & (t <= t1)].sum())


# ----------------------------------------------------------- spectrogram

def spectrogram(s: Signal, window_len: float = 1.0, hop: float = 0.1,
                window_shape: str = "hann", nfft: Optional[int] = None) -> Spectrogram:
    """Magnitude STFT with times at window centres."""
    nper = int(round(window_len * s.sample_rate))
    if nper < 16:
        raise ConfigError(f"window of {nper} samples is shorter than 16")
    if hop > window_len:
        raise ConfigError("hop must not exceed the window length")
    if s.samples.size < nper:
        raise ConfigError("signal shorter than one spectrogram window")
    step = max(1, int(round(hop * s.sample_rate)))
    nfft = nper if nfft is None else max(int(nfft), nper)
    f, t, mag = _spectrogram(s.samples, fs=s.sample_rate, window=window_shape, nperseg=nper,
                             noverlap=nper - step, nfft=nfft, detrend=False,
                             scaling="spectrum", mode="magnitude")
    return Spectrogram(t + s.start_time, f, mag, window_len, step / s.sample_rate, window_shape)


# ------------------------------------------------------------------- I/O

def _riff_comment_chunk(text: str) -> bytes:
    data = text.encode("utf-8") + b"\x00"
    if len(data) % 2:
        data += b"\x00"
    icmt = b"ICMT" + struct.pack("<I", len(data)) + data
    return b"LIST" + struct.pack("<I", 4 + len(icmt)) + b"INFO" + icmt


def write_wav(s: Signal, path, fmt: str = "float32"):
    """Mono WAV; ``fmt`` is 'float32' or 'pcm16' (peak-normalised)."""
    rate = int(round(s.sample_rate))
    if abs(rate - s.sample_rate) > 1e-9:
        raise ConfigError("WAV needs an integer sample rate")
    if fmt == "float32":
        data = s.samples.astype(np.float32)
    elif fmt == "pcm16":
        peak = np.abs(s.samples).max() or 1.0
        data = np.round(s.samples / peak * 32767).astype(np.int16)
    else:
        raise ConfigError(f"unknown WAV format {fmt!r}")
    buf = io.BytesIO()
    wavfile.write(buf, rate, data)
    raw = bytearray(buf.getvalue())
    comment = f"start_time={s.start_time!r}"
    if s.comment:
        comment += f"; {s.comment}"
    raw += _riff_comment_chunk(comment)
    raw[4:8] = struct.pack("<I", len(raw) - 8)
    with open(path, "wb") as fh:
        fh.write(bytes(raw))


def _read_wav_comment(raw: bytes) -> str:
    pos = 12
    while pos + 8 <= len(raw):
        cid, size = raw[pos:pos + 4], struct.unpack("<I", raw[pos + 4:pos + 8])[0]
        body = raw[pos + 8:pos + 8 + size]
        if cid == b"LIST" and body[:4] == b"INFO":
            q = 4
            while q + 8 <= len(body):
                sid, ssz = body[q:q + 4], struct.unpack("<I", body[q + 4:q + 8])[0]
                if sid == b"ICMT":
                    return body[q + 8:q + 8 + ssz].rstrip(b"\x00").decode("utf-8", "replace")
                q += 8 + ssz + (ssz % 2)
        pos += 8 + size + (size % 2)
    return ""


def read_wav(path) -> Signal:
    """Read a mono WAV; the first channel is used for multichannel files."""
    import warnings
    with open(path, "rb") as fh:
        raw = fh.read()
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", wavfile.WavFileWarning)
            rate, data = wavfile.read(io.BytesIO(raw))
    except (ValueError, EOFError) as exc:
        raise ParseError(f"unreadable WAV: {exc}", path) from None
    if data.ndim > 1:
        data = data[:, 0]
    if data.dtype == np.int16:
        x = data.astype(float) / 32768.0
    elif data.dtype == np.int32:
        x = data.astype(float) / 2147483648.0
    elif data.dtype == np.uint8:
        x = (data.astype(float) - 128.0) / 128.0
    else:
        x = data.astype(float)
    comment = _read_wav_comment(raw)
    start = 0.0
    if comment.startswith("start_time="):
        head = comment.split(";", 1)[0]
        try:
            start = float(head.split("=", 1)[1])
        except ValueError:
            start = 0.0
        comment = comment.split(";", 1)[1].strip() if ";" in comment else ""
    return Signal(float(rate), start, x, comment)


def write_signal_csv(s: Signal, path_or_buf, header_lines: Sequence[str] = ()):
    _write_csv(path_or_buf, ["time_s", "amplitude"], zip(s.times, s.samples), header_lines)


def read_signal_csv(path) -> Signal:
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    t, x = [], []
    for lineno, fields in iter_csv_rows(text, path, ("time_s", "amplitude")):
        if len(fields) != 2:
            raise ParseError(f"expected 2 fields, got {len(fields)}", path, lineno)
        try:
            t.append(float(fields[0]))
            x.append(float(fields[1]))
        except ValueError:
            raise ParseError("non-numeric value", path, lineno) from None
    if len(t) < 2:
        raise ParseError("signal needs at least two samples", path)
    dt = np.diff(t)
    if np.any(dt <= 0) or np.ptp(dt) > 1e-6 * dt.mean():
        raise ParseError("time column is not uniformly increasing", path)
    return Signal(1.0 / dt.mean(), t[0], np.array(x))


def read_signal(path) -> Signal:
    ext = os.path.splitext(str(path))[1].lower()
    return read_wav(path) if ext == ".wav" else read_signal_csv(path)


def decimate(s: Signal, target_rate: float = DEFAULT_RATE) -> Signal:
    """Anti-aliased polyphase resampling to ``target_rate``."""
    if abs(s.sample_rate - target_rate) < 1e-9:
        return s
    frac = Fraction(target_rate / s.sample_rate).limit_denominator(10000)
    y = resample_poly(s.samples, frac.numerator, frac.denominator)
    return Signal(target_rate, s.start_time, y, s.comment)


def slice_shots(s: Signal, interval: float, offset: float = 0.0,
                duration: Optional[float] = None):
    """Cut a recording into consecutive shot windows of fixed ``interval``."""
    if interval <= 0:
        raise ConfigError("shot interval must be positive")
    duration = interval if duration is None else duration
    out = []
    t = s.start_time + offset
    while t + duration <= s.end_time + 1e-9:
        out.append(s.window(t, t + duration))
        t += interval
    return out
