"""Depth-separated normal modes, group velocities and dispersion curves.

The vertical problem psi'' + (w^2/c^2 - k^2) psi = 0 is discretised with
second-order finite differences on a uniform grid.  The surface is
pressure-release; the bottom is either rigid (ghost-point, symmetrised) or
pressure-release.  Only the top ``max_modes`` eigenvalues are computed, by
bisection on the symmetric tridiagonal matrix.

For refracting profiles the computational domain is cut below the deepest
turning point once the evanescent tail has decayed by ``exp(-DECAY_EXPONENT)``;
the eigenfunctions are zero-padded back to the full depth.
"""
from __future__ import annotations

import hashlib
import json
import logging
import os
import struct
import warnings
from dataclasses import dataclass, field
from functools import cached_property
from typing import Dict, Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import eigh_tridiagonal

from . import __version__
from .errors import ConfigError, ExtractionError, ParseError, ResolutionError
from .profile import DepthProfile, DualChannelParams, ParamGrid, build_profile, _write_csv

log = logging.getLogger(__name__)

C_REF = 1500.0
DECAY_EXPONENT = 40.0
POINTS_PER_WAVELENGTH = 20
TRAPPED_DECAY = 1e-3
DEFAULT_FREQS = np.arange(10.0, 100.0 + 1e-9, 1.0)

BOTTOM_RIGID = "rigid"
BOTTOM_PRESSURE_RELEASE = "pressure-release"


@dataclass(frozen=True, eq=False)
class WaveguideSpec:
    """Range-independent water column for the mode solver.

    ``trapped_only`` keeps only modes whose eigenfunction has decayed to
    below 1e-3 of its peak at the computational bottom; turn it off for
    bottom-interacting test cases such as the ideal isovelocity waveguide.
    """

    profile: DepthProfile
    total_depth: float = 3800.0
    dz: float = 0.5
    bottom_bc: str = BOTTOM_RIGID
    trapped_only: bool = True
    truncate: bool = True

    def __post_init__(self):
        if self.total_depth <= 0 or self.dz <= 0:
            raise ConfigError("total_depth and dz must be positive")
        n = self.total_depth / self.dz
        if abs(n - round(n)) > 1e-9 * n:
            raise ConfigError(f"dz={self.dz:g} does not divide total_depth={self.total_depth:g}")
        if self.bottom_bc not in (BOTTOM_RIGID, BOTTOM_PRESSURE_RELEASE):
            raise ConfigError(f"unknown bottom condition {self.bottom_bc!r}")

    @property
    def n_cells(self) -> int:
        return int(round(self.total_depth / self.dz))

    @cached_property
    def depths(self) -> np.ndarray:
        """Grid 0, dz, ..., total_depth."""
        return np.arange(self.n_cells + 1) * self.dz

    @cached_property
    def speeds(self) -> np.ndarray:
        """Sound speed on the grid, extended by the deepest gradient."""
        c = self.profile.speed_at(self.depths, extrapolate=True)
        if np.any(c <= 0):
            raise ConfigError("extrapolated sound speed is non-positive")
        return c

    @cached_property
    def slowness2(self) -> np.ndarray:
        return 1.0 / self.speeds ** 2

    def settings(self) -> dict:
        return {"total_depth": float(self.total_depth), "dz": float(self.dz),
                "bottom_bc": self.bottom_bc, "trapped_only": bool(self.trapped_only),
                "truncate": bool(self.truncate)}


@dataclass(frozen=True, eq=False)
class ModeSet:
    """Modes at one frequency, ordered by descending wavenumber."""

    frequency: float
    wavenumbers: np.ndarray
    eigenfunctions: np.ndarray  # (n_depths, n_modes)
    depths: np.ndarray
    group_velocities: np.ndarray
    turning_depths: np.ndarray
    n_discarded: int = 0
    diagnostic: str = ""

    @property
    def n_modes(self) -> int:
        return self.wavenumbers.size

    def __len__(self):
        return self.n_modes

    def at_depth(self, z) -> np.ndarray:
        """Eigenfunction values at depth ``z`` (linear interpolation)."""
        if self.n_modes == 0:
            return np.zeros(0)
        return np.array([np.interp(z, self.depths, self.eigenfunctions[:, m])
                         for m in range(self.n_modes)])


def _empty_modeset(f, depths, n_discarded, diagnostic):
    return ModeSet(float(f), np.zeros(0), np.zeros((depths.size, 0)), depths,
                   np.zeros(0), np.zeros(0), n_discarded, diagnostic)


def _wkb_truncation_index(spec: WaveguideSpec, omega: float, n_modes: int) -> int:
    """Grid index below which modes ``1..n_modes`` are negligible.

    Uses the phase integral to estimate the wavenumber of mode ``n_modes+1``
    and returns the depth where its evanescent tail below the deepest turning
    point has accumulated ``DECAY_EXPONENT`` nepers.  Returns the full grid
    when the estimate is not trapped.
    """
    s2 = spec.slowness2
    w2s = omega ** 2 * s2
    dz = spec.dz
    lo, hi = w2s[-1], w2s.max()  # bounds on k^2 for refracted modes
    if hi <= lo:
        return spec.n_cells

    def phase(k2):
        return np.sum(np.sqrt(np.maximum(w2s - k2, 0.0))) * dz

    target = (n_modes + 1 - 0.25) * np.pi
    if phase(lo) < target:
        return spec.n_cells
    a, b = lo, hi
    for _ in range(60):
        mid = 0.5 * (a + b)
        if phase(mid) > target:
            a = mid
        else:
            b = mid
    k2 = a
    prop = np.nonzero(w2s >= k2)[0]
    jt = int(prop[-1])
    kappa = np.sqrt(np.maximum(k2 - w2s[jt:], 0.0))
    acc = np.cumsum(kappa) * dz
    past = np.nonzero(acc >= DECAY_EXPONENT)[0]
    if past.size == 0:
        return spec.n_cells
    j = jt + int(past[0]) + 1
    return min(max(j, 8), spec.n_cells)


def _check_resolution(spec: WaveguideSpec, f: float):
    cmin = float(spec.speeds.min())
    limit = cmin / (POINTS_PER_WAVELENGTH * f)
    if spec.dz > limit * (1 + 1e-12):
        raise ResolutionError(
            f"dz={spec.dz:g} m too coarse at {f:g} Hz; need dz <= {limit:.4g} m "
            f"({POINTS_PER_WAVELENGTH} points per wavelength)")


def solve_modes(spec: WaveguideSpec, f: float, max_modes: int = 3) -> ModeSet:
    """Compute up to ``max_modes`` propagating modes at frequency ``f``."""
    f = float(f)
    if not 1.0 <= f <= 500.0:
        raise ConfigError(f"frequency {f:g} Hz outside [1, 500] Hz")
    if max_modes < 1:
        raise ConfigError("max_modes must be >= 1")
    _check_resolution(spec, f)
    omega = 2 * np.pi * f
    dz = spec.dz
    n_full = spec.n_cells
    n_cut = _wkb_truncation_index(spec, omega, max_modes) if spec.truncate else n_full

    rigid = spec.bottom_bc == BOTTOM_RIGID
    # unknowns psi_1..psi_n (rigid) or psi_1..psi_{n-1} (pressure release)
    n = n_cut if rigid else n_cut - 1
    if n < max_modes:
        raise ResolutionError("water column has fewer grid points than requested modes")
    w2s = omega ** 2 * spec.slowness2[1:n + 1]
    diag = -2.0 / dz ** 2 + w2s
    off = np.full(n - 1, 1.0 / dz ** 2)
    if rigid:
        # ghost point psi_{n+1} = psi_{n-1}; scaling the last unknown by
        # 1/sqrt(2) makes the matrix symmetric
        off[-1] *= np.sqrt(2.0)
    m_req = min(max_modes, n)
    k2, vec = eigh_tridiagonal(diag, off, select="i", select_range=(n - m_req, n - 1))
    k2, vec = k2[::-1], vec[:, ::-1]

    keep = k2 > 0
    k2, vec = k2[keep], vec[:, keep]
    n_cut_modes = int(np.count_nonzero(~keep))

    # back to psi on 0..n_cut, trapezoid-normalised
    psi = np.zeros((n_cut + 1, k2.size))
    if rigid:
        vec = vec.copy()
        vec[-1] *= np.sqrt(2.0)
        psi[1:n + 1] = vec
    else:
        psi[1:n + 1] = vec
    norms = np.sqrt(_trapz_sq(psi, dz))
    psi /= norms
    # deterministic sign: first sizeable lobe positive
    for j in range(psi.shape[1]):
        col = psi[:, j]
        first = int(np.argmax(np.abs(col) > 0.1 * np.abs(col).max()))
        if col[first] < 0:
            psi[:, j] = -col

    discarded = n_cut_modes
    if spec.trapped_only and k2.size:
        tail = np.abs(psi[-1]) / np.abs(psi).max(axis=0)
        if not rigid:
            # bottom value is forced to zero; test the last free sample
            tail = np.abs(psi[-2]) / np.abs(psi).max(axis=0)
        ok = tail < TRAPPED_DECAY
        discarded += int(np.count_nonzero(~ok))
        k2, psi = k2[ok], psi[:, ok]

    depths = spec.depths
    if k2.size == 0:
        return _empty_modeset(f, depths, discarded,
                              f"no trapped modes at {f:g} Hz ({discarded} discarded)")
    if n_cut < n_full:
        psi = np.vstack([psi, np.zeros((n_full - n_cut, psi.shape[1]))])
    k = np.sqrt(k2)
    vg = _group_velocity(k, psi, spec.slowness2, dz, omega)
    w2s_full = omega ** 2 * spec.slowness2
    turning = np.array([depths[np.nonzero(w2s_full >= kk ** 2)[0][-1]]
                        if np.any(w2s_full >= kk ** 2) else 0.0 for kk in k])
    diag_msg = f"{discarded} mode(s) discarded" if discarded else ""
    return ModeSet(f, k, psi, depths, vg, turning, discarded, diag_msg)


def _trapz_sq(psi, dz, weight=None):
    q = psi ** 2 if weight is None else psi ** 2 * weight[:psi.shape[0], None]
    return dz * (q.sum(axis=0) - 0.5 * (q[0] + q[-1]))


def _group_velocity(k, psi, slowness2, dz, omega):
    # v_g = k / (w * int psi^2/c^2 dz) for unit-norm psi; exact derivative of
    # the discrete dispersion relation because the trapezoid weights match
    # the symmetrised matrix
    return k / (omega * _trapz_sq(psi, dz, slowness2))


def group_velocity(ms: ModeSet, spec: WaveguideSpec) -> np.ndarray:
    """Group velocity (m/s) of every mode in ``ms`` by the integral formula."""
    if ms.n_modes == 0:
        return np.zeros(0)
    omega = 2 * np.pi * ms.frequency
    psi = ms.eigenfunctions
    norm = _trapz_sq(psi, spec.dz)
    return ms.wavenumbers * norm / (omega * _trapz_sq(psi, spec.dz, spec.slowness2))


def group_velocity_fd(spec: WaveguideSpec, f: float, max_modes: int = 3, df: float = 0.1):
    """Centred finite-difference d(omega)/dk; NaN where a mode is missing."""
    a = solve_modes(spec, f - df, max_modes)
    b = solve_modes(spec, f + df, max_modes)
    out = np.full(max_modes, np.nan)
    n = min(a.n_modes, b.n_modes)
    out[:n] = 2 * np.pi * 2 * df / (b.wavenumbers[:n] - a.wavenumbers[:n])
    return out


def mode_table(spec: WaveguideSpec, freqs, max_modes: int = 3) -> np.ndarray:
    """Group velocities, shape (max_modes, n_freqs), NaN for missing modes."""
    freqs = np.asarray(freqs, dtype=float)
    out = np.full((max_modes, freqs.size), np.nan)
    for j, f in enumerate(freqs):
        ms = solve_modes(spec, f, max_modes)
        out[:ms.n_modes, j] = ms.group_velocities
    return out


# ------------------------------------------------------------------ curves

@dataclass(frozen=True, eq=False)
class DispersionCurveSet:
    """Arrival time against frequency for each mode.

    ``curves`` maps mode number (1-based) to ``(freqs, times)`` arrays.
    Relative sets carry the ``reference`` (mode, frequency) whose time is 0.
    Optional ``quality`` and ``provenance`` map mode to per-point arrays.
    """

    curves: Dict[int, Tuple[np.ndarray, np.ndarray]]
    kind: str = "absolute"
    reference: Optional[Tuple[int, float]] = None
    range_m: Optional[float] = None
    quality: Optional[Dict[int, np.ndarray]] = None
    provenance: Optional[Dict[int, np.ndarray]] = None

    def __post_init__(self):
        if self.kind not in ("absolute", "relative"):
            raise ConfigError(f"unknown curve kind {self.kind!r}")
        if self.kind == "relative" and self.reference is None:
            raise ConfigError("relative curve set needs a reference")
        clean = {}
        for m, (f, t) in self.curves.items():
            f = np.asarray(f, dtype=float)
            t = np.asarray(t, dtype=float)
            if f.shape != t.shape or f.ndim != 1:
                raise ConfigError(f"mode {m}: freqs and times must be matching 1-D arrays")
            if np.any(np.diff(f) <= 0):
                raise ConfigError(f"mode {m}: frequencies must be strictly increasing")
            clean[int(m)] = (f, t)
        object.__setattr__(self, "curves", dict(sorted(clean.items())))

    @property
    def modes(self):
        return list(self.curves)

    def n_points(self) -> int:
        return int(sum(np.count_nonzero(np.isfinite(t)) for _, t in self.curves.values()))

    def time_at(self, mode: int, f: float) -> float:
        fr, t = self.curves[mode]
        return float(np.interp(f, fr, t))

    def shifted(self, dt: float) -> "DispersionCurveSet":
        return DispersionCurveSet({m: (f, t + dt) for m, (f, t) in self.curves.items()},
                                  self.kind, self.reference, self.range_m,
                                  self.quality, self.provenance)

    def to_csv(self, path_or_buf, header_lines: Sequence[str] = ()):
        rows = []
        for m, (f, t) in self.curves.items():
            q = self.quality.get(m) if self.quality else None
            p = self.provenance.get(m) if self.provenance else None
            for i in range(f.size):
                rows.append((m, f[i], t[i], 1.0 if q is None else q[i],
                             "model" if p is None else str(p[i])))
        _write_csv(path_or_buf, ["mode", "freq_hz", "reltime_s" if self.kind == "relative" else "time_s",
                                 "quality", "provenance"], rows, header_lines)


def read_curves_csv(path) -> DispersionCurveSet:
    """Read a curve CSV written by ``DispersionCurveSet.to_csv``.

    The anchor is recovered from a ``# reference: mode,freq`` comment when present.
    """
    from .profile import iter_csv_rows
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    reference = None
    for line in text.splitlines():
        if line.startswith("# reference:"):
            m, f = line.split(":", 1)[1].split(",")
            reference = (int(m), float(f))
    first = next((ln for ln in text.splitlines() if ln.strip() and not ln.startswith("#")), "")
    kind = "relative" if "reltime_s" in first else "absolute"
    cols = ("mode", "freq_hz", "reltime_s" if kind == "relative" else "time_s", "quality", "provenance")
    data: Dict[int, list] = {}
    for lineno, fields in iter_csv_rows(text, path, cols):
        if len(fields) != 5:
            raise ParseError(f"expected 5 fields, got {len(fields)}", path, lineno)
        try:
            row = (float(fields[1]), float(fields[2]), float(fields[3]), fields[4])
            m = int(fields[0])
        except ValueError:
            raise ParseError("non-numeric value", path, lineno) from None
        data.setdefault(m, []).append(row)
    curves, qual, prov = {}, {}, {}
    for m, rows in data.items():
        rows.sort()
        curves[m] = (np.array([r[0] for r in rows]), np.array([r[1] for r in rows]))
        qual[m] = np.array([r[2] for r in rows])
        prov[m] = np.array([r[3] for r in rows], dtype=object)
    if kind == "relative" and reference is None:
        raise ParseError("relative curve file lacks '# reference:' line", path)
    return DispersionCurveSet(curves, kind, reference, None, qual, prov)


def dispersion_curves(gv, r: float, freqs=None) -> DispersionCurveSet:
    """Absolute arrival times t = r / v_g.

    ``gv`` is either a mapping mode -> (freqs, v_g) or an array of shape
    (n_modes, n_freqs) together with ``freqs``.  NaN velocities are dropped.
    """
    if r <= 0:
        raise ConfigError("range must be positive")
    if not isinstance(gv, dict):
        gv = np.atleast_2d(np.asarray(gv, dtype=float))
        if freqs is None:
            raise ConfigError("freqs required with an array of group velocities")
        freqs = np.asarray(freqs, dtype=float)
        gv = {m + 1: (freqs, gv[m]) for m in range(gv.shape[0])}
    curves = {}
    for m, (f, v) in gv.items():
        f = np.asarray(f, dtype=float)
        v = np.asarray(v, dtype=float)
        ok = np.isfinite(v)
        if np.any(ok):
            curves[m] = (f[ok], r / v[ok])
    return DispersionCurveSet(curves, "absolute", None, float(r))


def make_relative(d: DispersionCurveSet, anchor=(1, 20.0), tolerance: Optional[float] = None):
    """Shift all times so the anchor point sits at time zero.

    The anchor time is interpolated linearly within the anchor mode's
    frequency support.  With ``tolerance`` the nearest sample must also lie
    within that many Hz of the anchor frequency.
    """
    mode, fa = int(anchor[0]), float(anchor[1])
    if mode not in d.curves:
        raise ExtractionError(f"anchor mode {mode} absent from curve set")
    f, t = d.curves[mode]
    if f.size == 0 or fa < f[0] - (tolerance or 0) or fa > f[-1] + (tolerance or 0):
        raise ExtractionError(f"anchor {fa:g} Hz outside mode {mode} support")
    if tolerance is not None and np.min(np.abs(f - fa)) > tolerance:
        raise ExtractionError(f"no mode {mode} sample within {tolerance:g} Hz of {fa:g} Hz")
    t0 = float(np.interp(fa, f, t))
    curves = {m: (ff, tt - t0) for m, (ff, tt) in d.curves.items()}
    return DispersionCurveSet(curves, "relative", (mode, fa), d.range_m, d.quality, d.provenance)


def crossover_frequency(gv: np.ndarray, freqs, a: int = 1, b: int = 3) -> Optional[float]:
    """Frequency where modes ``a`` and ``b`` swap arrival order, if any.

    ``gv`` has shape (n_modes, n_freqs).  Linear interpolation of the
    slowness difference; returns None when the order never reverses.
    """
    freqs = np.asarray(freqs, dtype=float)
    d = 1.0 / gv[a - 1] - 1.0 / gv[b - 1]
    ok = np.isfinite(d)
    f, d = freqs[ok], d[ok]
    s = np.sign(d)
    idx = np.nonzero(s[:-1] * s[1:] < 0)[0]
    if idx.size == 0:
        return None
    i = int(idx[0])
    return float(f[i] + (f[i + 1] - f[i]) * d[i] / (d[i] - d[i + 1]))


# ------------------------------------------------------------------ tables

TABLE_MAGIC = b"GVTB"
TABLE_VERSION = 1


@dataclass(frozen=True, eq=False)
class GroupVelocityTable:
    """v_g over an (I, W) grid; ``values[i, j, m, k]`` is mode m+1 at freqs[k]."""

    I_values: np.ndarray
    W_values: np.ndarray
    freqs: np.ndarray
    values: np.ndarray
    metadata: dict = field(default_factory=dict)

    @property
    def n_modes(self) -> int:
        return self.values.shape[2]

    @property
    def grid(self) -> ParamGrid:
        return ParamGrid(self.I_values, self.W_values)

    def index(self, I: float, W: float) -> Tuple[int, int]:
        i = np.nonzero(np.isclose(self.I_values, I, rtol=0, atol=1e-9))[0]
        j = np.nonzero(np.isclose(self.W_values, W, rtol=0, atol=1e-9))[0]
        if i.size == 0 or j.size == 0:
            raise ConfigError(f"(I={I:g}, W={W:g}) not on the table grid")
        return int(i[0]), int(j[0])

    def velocities(self, I: float, W: float, freqs=None) -> np.ndarray:
        """(n_modes, n_freqs) velocities, linearly interpolated in frequency."""
        i, j = self.index(I, W)
        v = self.values[i, j]
        if freqs is None:
            return v
        freqs = np.asarray(freqs, dtype=float)
        if freqs.min() < self.freqs[0] - 1e-9 or freqs.max() > self.freqs[-1] + 1e-9:
            raise ConfigError("requested frequency outside table band")
        return np.array([np.interp(freqs, self.freqs, v[m]) for m in range(self.n_modes)])

    def slowness(self, freqs=None) -> np.ndarray:
        """1/v_g for the whole grid, shape (nI, nW, n_modes, n_f)."""
        s = 1.0 / self.values
        if freqs is None:
            return s
        freqs = np.asarray(freqs, dtype=float)
        # linear interpolation along the last axis
        k = np.clip(np.searchsorted(self.freqs, freqs) - 1, 0, self.freqs.size - 2)
        f0, f1 = self.freqs[k], self.freqs[k + 1]
        w = (freqs - f0) / (f1 - f0)
        return s[..., k] * (1 - w) + s[..., k + 1] * w

    def header(self) -> dict:
        return {"I_values": [float(x) for x in self.I_values],
                "W_values": [float(x) for x in self.W_values],
                "freqs": [float(x) for x in self.freqs],
                "n_modes": int(self.n_modes),
                "metadata": self.metadata}

    def to_bytes(self) -> bytes:
        head = json.dumps(self.header(), sort_keys=True, separators=(",", ":")).encode()
        body = np.ascontiguousarray(self.values, dtype="<f8").tobytes()
        return TABLE_MAGIC + struct.pack("<II", TABLE_VERSION, len(head)) + head + body

    def save(self, path):
        tmp = f"{path}.tmp"
        with open(tmp, "wb") as fh:
            fh.write(self.to_bytes())
        os.replace(tmp, path)

    @classmethod
    def from_bytes(cls, raw: bytes, path=None) -> "GroupVelocityTable":
        if raw[:4] != TABLE_MAGIC:
            raise ParseError("not a group-velocity table (bad magic)", path)
        version, hlen = struct.unpack("<II", raw[4:12])
        if version != TABLE_VERSION:
            raise ParseError(f"unsupported table version {version}", path)
        try:
            head = json.loads(raw[12:12 + hlen].decode())
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise ParseError(f"corrupt table header: {exc}", path) from None
        shape = (len(head["I_values"]), len(head["W_values"]), head["n_modes"], len(head["freqs"]))
        body = raw[12 + hlen:]
        if len(body) != 8 * int(np.prod(shape)):
            raise ParseError("table body size does not match header", path)
        values = np.frombuffer(body, dtype="<f8").reshape(shape).astype(float)
        return cls(np.array(head["I_values"]), np.array(head["W_values"]),
                   np.array(head["freqs"]), values, head["metadata"])

    @classmethod
    def load(cls, path) -> "GroupVelocityTable":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read(), path)

    def to_csv(self, path_or_buf, header_lines: Sequence[str] = ()):
        def rows():
            for a, I in enumerate(self.I_values):
                for b, W in enumerate(self.W_values):
                    for m in range(self.n_modes):
                        for k, f in enumerate(self.freqs):
                            yield I, W, m + 1, f, self.values[a, b, m, k]
        _write_csv(path_or_buf, ["I", "W", "mode", "freq_hz", "vg_mps"], rows(), header_lines)


def table_metadata(baseline: DepthProfile, max_modes: int, spec_kwargs: dict) -> dict:
    probe = WaveguideSpec(baseline, **spec_kwargs)
    return {"baseline_sha256": baseline.content_hash(), "solver": probe.settings(),
            "max_modes": int(max_modes), "version": __version__}


def build_gv_table(baseline: DepthProfile, grid: Optional[ParamGrid] = None, fgrid=None,
                   max_modes: int = 3, cache_path=None, progress=None,
                   **spec_kwargs) -> GroupVelocityTable:
    """Group velocities for every (I, W, mode, f), optionally cached on disk.

    A cache file whose grids and metadata match is loaded instead of
    recomputed; a mismatching one triggers a warning and is overwritten.
    """
    grid = grid or ParamGrid.default()
    fgrid = DEFAULT_FREQS if fgrid is None else np.asarray(fgrid, dtype=float)
    if fgrid.size == 0:
        raise ConfigError("frequency grid is empty")
    if np.any(np.diff(fgrid) <= 0):
        raise ConfigError("frequency grid must be strictly increasing")
    meta = table_metadata(baseline, max_modes, spec_kwargs)
    want = {"I_values": [float(x) for x in grid.I_values],
            "W_values": [float(x) for x in grid.W_values],
            "freqs": [float(x) for x in fgrid], "n_modes": int(max_modes), "metadata": meta}
    if cache_path is not None and os.path.exists(cache_path):
        try:
            cached = GroupVelocityTable.load(cache_path)
        except ParseError as exc:
            warnings.warn(f"unreadable table cache {cache_path} ({exc}); recomputing")
            cached = None
        if cached is not None:
            if json.dumps(cached.header(), sort_keys=True) == json.dumps(want, sort_keys=True):
                log.info("table cache hit: %s", cache_path)
                return cached
            warnings.warn(f"table cache {cache_path} metadata mismatch; recomputing")

    values = np.full((grid.I_values.size, grid.W_values.size, max_modes, fgrid.size), np.nan)
    total = values.shape[0] * values.shape[1]
    done = 0
    for a, I in enumerate(grid.I_values):
        for b, W in enumerate(grid.W_values):
            spec = WaveguideSpec(build_profile(baseline, DualChannelParams(I, W)), **spec_kwargs)
            values[a, b] = mode_table(spec, fgrid, max_modes)
            done += 1
            if progress is not None:
                progress(done, total)
    table = GroupVelocityTable(grid.I_values.copy(), grid.W_values.copy(), fgrid.copy(), values, meta)
    holes = int(np.count_nonzero(np.isnan(values)))
    if holes:
        log.warning("group-velocity table has %d missing (mode, f) entries", holes)
    if cache_path is not None:
        table.save(cache_path)
        log.info("table written: %s", cache_path)
    return table


def table_cache_name(baseline: DepthProfile, grid: ParamGrid, fgrid, max_modes: int = 3,
                     **spec_kwargs) -> str:
    """Content-addressed file name for a table with these inputs."""
    meta = table_metadata(baseline, max_modes, spec_kwargs)
    blob = json.dumps({"m": meta, "I": list(map(float, grid.I_values)),
                       "W": list(map(float, grid.W_values)),
                       "f": list(map(float, np.asarray(fgrid)))}, sort_keys=True)
    return "gv_" + hashlib.sha256(blob.encode()).hexdigest()[:16] + ".gvtb"
