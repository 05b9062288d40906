"""Sound speed profiles and the two-parameter dual-duct perturbation.

A dual-duct profile is built from a baseline c0(z) plus a piecewise linear
perturbation controlled by an intensity ``I`` (m/s) and a width ``W`` (m):

    z <= 30                      -1
    31 <= z <= 31+W              rises 0 -> I
    31+W < z <= 31+3W            falls I -> 0
    31+3W < z <= 31+3W+L         falls 0 -> -I
    31+3W+L < z <= 400           rises -I -> 0
    z >= 401                     0

with L = (400 - 31 - 3W) / 3.  The formula is evaluated on integer metres and
linearly interpolated in between, so the only discontinuity of the
underlying formula (the -1 -> 0 step between 30 and 31 m) becomes a ramp.
"""
from __future__ import annotations

import csv
import io
import os
from dataclasses import dataclass
from importlib import resources
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import ConfigError, CoverageError, InvalidParamsError, OutOfRangeError, ParseError

SPEED_MIN = 1380.0
SPEED_MAX = 1600.0

# depth bounds of the perturbation, whole metres
SURFACE_STEP_DEPTH = 30
DUCT_TOP = 31
DUCT_BOTTOM = 400
PERTURBATION_END = 501

BASELINE_RESOURCE = "baseline_central_ice.csv"


@dataclass(frozen=True, eq=False)
class DepthProfile:
    """Sound speed sampled at increasing depths starting at the surface."""

    depths: np.ndarray
    speeds: np.ndarray
    label: str = ""

    def __post_init__(self):
        z = np.array(self.depths, dtype=float).ravel()
        c = np.array(self.speeds, dtype=float).ravel()
        if z.size != c.size:
            raise ConfigError(f"depths ({z.size}) and speeds ({c.size}) differ in length")
        if z.size < 2:
            raise ConfigError("a profile needs at least two samples")
        if not (np.all(np.isfinite(z)) and np.all(np.isfinite(c))):
            raise ConfigError("profile contains non-finite values")
        if z[0] != 0.0:
            raise ConfigError(f"profile must start at 0 m, got {z[0]:g} m")
        if np.any(np.diff(z) <= 0):
            i = int(np.argmax(np.diff(z) <= 0)) + 1
            raise ConfigError(f"depths not strictly increasing at index {i} ({z[i]:g} m)")
        if c.min() < SPEED_MIN or c.max() > SPEED_MAX:
            raise ConfigError(
                f"sound speed outside [{SPEED_MIN:g}, {SPEED_MAX:g}] m/s "
                f"(range {c.min():g}..{c.max():g})")
        z.flags.writeable = False
        c.flags.writeable = False
        object.__setattr__(self, "depths", z)
        object.__setattr__(self, "speeds", c)

    @property
    def max_depth(self) -> float:
        return float(self.depths[-1])

    def __len__(self):
        return self.depths.size

    def __eq__(self, other):
        if not isinstance(other, DepthProfile):
            return NotImplemented
        return (np.array_equal(self.depths, other.depths)
                and np.array_equal(self.speeds, other.speeds))

    def __hash__(self):
        return hash((self.depths.tobytes(), self.speeds.tobytes()))

    def speed_at(self, z, extrapolate: bool = False):
        """Linear interpolation of the speed at depth(s) ``z``.

        With ``extrapolate`` the end gradients are continued beyond the
        samples; otherwise queries outside the support raise OutOfRangeError.
        """
        z = np.asarray(z, dtype=float)
        lo, hi = self.depths[0], self.depths[-1]
        if not extrapolate:
            if np.any(z < lo) or np.any(z > hi):
                raise OutOfRangeError(
                    f"query depths outside profile support [{lo:g}, {hi:g}] m")
            return np.interp(z, self.depths, self.speeds)
        out = np.interp(z, self.depths, self.speeds)
        g_top = (self.speeds[1] - self.speeds[0]) / (self.depths[1] - self.depths[0])
        g_bot = (self.speeds[-1] - self.speeds[-2]) / (self.depths[-1] - self.depths[-2])
        out = np.where(z > hi, self.speeds[-1] + g_bot * (z - hi), out)
        out = np.where(z < lo, self.speeds[0] + g_top * (z - lo), out)
        return out

    def content_hash(self) -> str:
        import hashlib
        h = hashlib.sha256()
        h.update(self.depths.astype("<f8").tobytes())
        h.update(self.speeds.astype("<f8").tobytes())
        return h.hexdigest()


@dataclass(frozen=True)
class DualChannelParams:
    """Duct intensity ``I`` (m/s) and width parameter ``W`` (m)."""

    I: float
    W: float

    def __post_init__(self):
        I, W = float(self.I), float(self.W)
        if not (np.isfinite(I) and np.isfinite(W)):
            raise InvalidParamsError(f"non-finite parameters I={I}, W={W}")
        if I < 0:
            raise InvalidParamsError(f"intensity must be >= 0, got {I:g}")
        if W < 1:
            raise InvalidParamsError(f"width must be >= 1 m, got {W:g}")
        if DUCT_TOP + 3 * W > DUCT_BOTTOM:
            raise InvalidParamsError(
                f"31 + 3W = {DUCT_TOP + 3 * W:g} m exceeds {DUCT_BOTTOM} m")
        object.__setattr__(self, "I", I)
        object.__setattr__(self, "W", W)

    @property
    def duct_width(self) -> float:
        """Full width of the warm layer, 3W."""
        return 3.0 * self.W

    @property
    def peak_depth(self) -> float:
        return DUCT_TOP + self.W


@dataclass(frozen=True, eq=False)
class ParamGrid:
    """Search grid over (I, W) and optionally source range r (m)."""

    I_values: np.ndarray
    W_values: np.ndarray
    r_values: Optional[np.ndarray] = None

    def __post_init__(self):
        I = np.array(self.I_values, dtype=float).ravel()
        W = np.array(self.W_values, dtype=float).ravel()
        if I.size == 0 or W.size == 0:
            raise ConfigError("parameter grid is empty")
        for a, name in ((I, "I"), (W, "W")):
            if np.any(np.diff(a) <= 0):
                raise ConfigError(f"{name} grid must be strictly increasing")
        # validates every corner, which covers the whole grid
        for i in (I[0], I[-1]):
            for w in (W[0], W[-1]):
                DualChannelParams(i, w)
        object.__setattr__(self, "I_values", I)
        object.__setattr__(self, "W_values", W)
        if self.r_values is not None:
            r = np.array(self.r_values, dtype=float).ravel()
            if r.size == 0:
                raise ConfigError("range grid is empty")
            if np.any(r <= 0) or np.any(np.diff(r) <= 0):
                raise ConfigError("range grid must be positive and strictly increasing")
            object.__setattr__(self, "r_values", r)

    @classmethod
    def default(cls, r_values=None) -> "ParamGrid":
        return cls(np.arange(0.0, 15.0 + 1e-9, 0.5), np.arange(5.0, 120.0 + 1e-9, 1.0), r_values)

    @classmethod
    def from_ranges(cls, I_range, W_range, r_range=None) -> "ParamGrid":
        """Build from (start, stop, step) triples, stop inclusive."""
        def span(t):
            a, b, s = map(float, t)
            if s <= 0:
                raise ConfigError(f"grid step must be positive, got {s:g}")
            n = int(np.floor((b - a) / s + 1e-9)) + 1
            return a + s * np.arange(n)
        r = None if r_range is None else span(r_range)
        return cls(span(I_range), span(W_range), r)

    @property
    def shape(self):
        return (self.I_values.size, self.W_values.size)

    def __eq__(self, other):
        if not isinstance(other, ParamGrid):
            return NotImplemented
        same_r = (self.r_values is None and other.r_values is None) or (
            self.r_values is not None and other.r_values is not None
            and np.array_equal(self.r_values, other.r_values))
        return (np.array_equal(self.I_values, other.I_values)
                and np.array_equal(self.W_values, other.W_values) and same_r)

    def params(self) -> Iterable[DualChannelParams]:
        for i in self.I_values:
            for w in self.W_values:
                yield DualChannelParams(i, w)


def _perturbation_knots(I: float, W: float):
    """Breakpoints (depth, value) of the perturbation on the integer grid."""
    a = DUCT_TOP + W
    b = DUCT_TOP + 3 * W
    L = (DUCT_BOTTOM - b) / 3.0
    c = b + L
    return a, b, c, L


def _perturbation_integer(zi: np.ndarray, I: float, W: float) -> np.ndarray:
    """Evaluate the branch formula at integer depths ``zi``."""
    a, b, c, L = _perturbation_knots(I, W)
    out = np.zeros(zi.shape, dtype=float)
    out[zi <= SURFACE_STEP_DEPTH] = -1.0
    m = (zi >= DUCT_TOP) & (zi <= a)
    out[m] = (zi[m] - DUCT_TOP) * I / W
    m = (zi > a) & (zi <= b)
    out[m] = I - (zi[m] - a) * I / (2 * W)
    if L > 0:
        m = (zi > b) & (zi <= c)
        out[m] = -(zi[m] - b) * I / L
        m = (zi > c) & (zi <= DUCT_BOTTOM)
        out[m] = -(DUCT_BOTTOM - zi[m]) * I / (2 * L)
    return out


def eval_perturbation(z, params: DualChannelParams):
    """Perturbation (m/s) at depth(s) ``z`` for the given parameters."""
    if not isinstance(params, DualChannelParams):
        params = DualChannelParams(*params)
    z = np.asarray(z, dtype=float)
    if np.any(z < 0) or not np.all(np.isfinite(z)):
        raise OutOfRangeError("perturbation depth must be finite and >= 0")
    top = int(np.ceil(z.max())) if z.size else 0
    zi = np.arange(0, max(top, DUCT_BOTTOM + 1) + 1, dtype=float)
    vals = _perturbation_integer(zi, params.I, params.W)
    out = np.interp(z, zi, vals)
    return out if out.ndim else float(out)


def perturbation_grid() -> np.ndarray:
    """The 1 m depth grid on which profiles are perturbed and compared."""
    return np.arange(0.0, PERTURBATION_END + 1.0)


def resample_profile(p: DepthProfile, grid) -> DepthProfile:
    """Linear interpolation of ``p`` onto ``grid`` (must lie within support)."""
    grid = np.asarray(grid, dtype=float)
    return DepthProfile(grid, p.speed_at(grid), p.label)


def build_profile(baseline: DepthProfile, params: DualChannelParams) -> DepthProfile:
    """Baseline plus perturbation on 0..501 m; deeper samples pass through."""
    if baseline.max_depth < PERTURBATION_END:
        raise CoverageError(
            f"baseline reaches {baseline.max_depth:g} m, needs {PERTURBATION_END} m")
    zg = perturbation_grid()
    c = baseline.speed_at(zg) + eval_perturbation(zg, params)
    deep = baseline.depths > PERTURBATION_END
    z = np.concatenate([zg, baseline.depths[deep]])
    c = np.concatenate([c, baseline.speeds[deep]])
    return DepthProfile(z, c, f"I={params.I:g} W={params.W:g}")


@dataclass(frozen=True, eq=False)
class CostSurface:
    """Cost over an (I, W) grid; ``costs[i, j]`` belongs to (I[i], W[j])."""

    I_values: np.ndarray
    W_values: np.ndarray
    costs: np.ndarray

    @property
    def argmin(self):
        """Grid indices of the minimum; ties go to smallest W then smallest I."""
        best = self.costs.min()
        hits = np.argwhere(self.costs == best)
        # sort by W index, then I index
        i, j = min(map(tuple, hits), key=lambda t: (t[1], t[0]))
        return int(i), int(j)

    @property
    def min_cost(self) -> float:
        return float(self.costs.min())

    def near_minimum_count(self, rel_tol: float = 1e-9) -> int:
        """Number of grid points within ``rel_tol * mean`` of the minimum."""
        c = self.costs
        tol = rel_tol * abs(float(np.mean(c)))
        return int(np.count_nonzero(c - c.min() <= tol))

    @property
    def degenerate(self) -> bool:
        return self.near_minimum_count() > 1

    def to_csv(self, path_or_buf, header_lines: Sequence[str] = ()):
        rows = [(i, w, self.costs[a, b])
                for a, i in enumerate(self.I_values)
                for b, w in enumerate(self.W_values)]
        _write_csv(path_or_buf, ["I", "W", "cost"], rows, header_lines)


def _profile_cost(c_model: np.ndarray, c_meas: np.ndarray) -> float:
    d = c_model - c_meas
    return float(np.dot(d, d))


def fit_params(measured: DepthProfile, baseline: DepthProfile, grid: Optional[ParamGrid] = None):
    """Exhaustive least-squares fit of (I, W) to a measured profile.

    The sum of squared speed differences is taken over the 1 m grid 0..501 m.
    Returns the best parameters and the full cost surface.
    """
    if grid is None:
        grid = ParamGrid.default()
    for p, name in ((measured, "measured"), (baseline, "baseline")):
        if p.max_depth < PERTURBATION_END:
            raise CoverageError(f"{name} profile reaches {p.max_depth:g} m, needs {PERTURBATION_END} m")
    zg = perturbation_grid()
    c0 = baseline.speed_at(zg)
    cm = measured.speed_at(zg)
    costs = np.empty(grid.shape)
    for a, i in enumerate(grid.I_values):
        for b, w in enumerate(grid.W_values):
            costs[a, b] = _profile_cost(c0 + eval_perturbation(zg, DualChannelParams(i, w)), cm)
    surf = CostSurface(grid.I_values, grid.W_values, costs)
    a, b = surf.argmin
    return DualChannelParams(grid.I_values[a], grid.W_values[b]), surf


@dataclass(frozen=True, eq=False)
class DifferenceCurve:
    """Dual-duct minus baseline speed on a 1 m grid."""

    depths: np.ndarray
    delta_speeds: np.ndarray

    @property
    def max_positive(self) -> float:
        return float(max(self.delta_speeds.max(), 0.0))

    @property
    def max_negative(self) -> float:
        """Magnitude of the most negative deviation."""
        return float(max(-self.delta_speeds.min(), 0.0))

    @property
    def zero_crossing(self) -> Optional[float]:
        """Depth where the positive lobe first returns to zero.

        Linear interpolation between the last positive sample after the peak
        and the first non-positive one; None if there is no positive lobe or
        it never returns to zero.
        """
        d = self.delta_speeds
        if d.max() <= 0:
            return None
        k = int(np.argmax(d))
        after = np.nonzero(d[k:] <= 0)[0]
        if after.size == 0:
            return None
        j = k + int(after[0])
        z0, z1, d0, d1 = self.depths[j - 1], self.depths[j], d[j - 1], d[j]
        return float(z0 + (z1 - z0) * d0 / (d0 - d1))

    def integral(self, z_lo: float, z_hi: float) -> float:
        m = (self.depths >= z_lo) & (self.depths <= z_hi)
        return float(np.trapezoid(self.delta_speeds[m], self.depths[m]))

    def to_csv(self, path_or_buf, header_lines: Sequence[str] = ()):
        _write_csv(path_or_buf, ["depth_m", "delta_speed_mps"],
                   zip(self.depths, self.delta_speeds), header_lines)


def difference_curve(dual: DepthProfile, baseline: DepthProfile) -> DifferenceCurve:
    """Pointwise ``dual - baseline`` on the common 1 m grid."""
    top = min(dual.max_depth, baseline.max_depth)
    if top < DUCT_BOTTOM:
        raise CoverageError(f"profiles overlap only to {top:g} m, need {DUCT_BOTTOM} m")
    zg = np.arange(0.0, np.floor(top) + 1.0)
    return DifferenceCurve(zg, dual.speed_at(zg) - baseline.speed_at(zg))


# ---------------------------------------------------------------- file I/O

def _write_csv(path_or_buf, columns, rows, header_lines=()):
    own = isinstance(path_or_buf, (str, os.PathLike))
    fh = open(path_or_buf, "w", newline="", encoding="utf-8") if own else path_or_buf
    try:
        for line in header_lines:
            fh.write(f"# {line}\n")
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")
    finally:
        if own:
            fh.close()


def _fmt(v) -> str:
    if isinstance(v, (str, bytes)):
        return v if isinstance(v, str) else v.decode()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def iter_csv_rows(text: str, path=None, expected_header=None):
    """Yield (line_number, fields) for data rows, skipping comments/blanks."""
    header_seen = expected_header is None
    for lineno, raw in enumerate(io.StringIO(text), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        fields = [f.strip() for f in next(csv.reader([line]))]
        if not header_seen:
            if [f.lower() for f in fields] != list(expected_header):
                raise ParseError(
                    f"expected header {','.join(expected_header)}, got {line}", path, lineno)
            header_seen = True
            continue
        yield lineno, fields
    if not header_seen:
        raise ParseError("missing header", path)


def parse_profile_csv(text: str, path=None, label: str = "") -> DepthProfile:
    depths, speeds = [], []
    for lineno, fields in iter_csv_rows(text, path, ("depth_m", "speed_mps")):
        if len(fields) != 2:
            raise ParseError(f"expected 2 fields, got {len(fields)}", path, lineno)
        try:
            z, c = float(fields[0]), float(fields[1])
        except ValueError:
            raise ParseError(f"non-numeric value in {','.join(fields)}", path, lineno) from None
        if not (np.isfinite(z) and np.isfinite(c)):
            raise ParseError("non-finite value", path, lineno)
        if depths and z <= depths[-1]:
            raise ParseError(f"depth {z:g} m not greater than previous {depths[-1]:g} m", path, lineno)
        if not SPEED_MIN <= c <= SPEED_MAX:
            raise ParseError(f"speed {c:g} m/s outside [{SPEED_MIN:g}, {SPEED_MAX:g}]", path, lineno)
        depths.append(z)
        speeds.append(c)
    if len(depths) < 2:
        raise ParseError("profile needs at least two rows", path)
    if depths[0] != 0:
        raise ParseError(f"first depth must be 0 m, got {depths[0]:g}", path)
    return DepthProfile(np.array(depths), np.array(speeds), label)


def read_profile_csv(path, label: Optional[str] = None) -> DepthProfile:
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    return parse_profile_csv(text, path, label if label is not None else os.path.basename(str(path)))


def write_profile_csv(p: DepthProfile, path_or_buf, header_lines: Sequence[str] = ()):
    _write_csv(path_or_buf, ["depth_m", "speed_mps"], zip(p.depths, p.speeds), header_lines)


def default_baseline() -> DepthProfile:
    """Shipped two-gradient synthetic baseline (0-3800 m)."""
    text = resources.files("arcticduct.data").joinpath(BASELINE_RESOURCE).read_text(encoding="utf-8")
    return parse_profile_csv(text, BASELINE_RESOURCE, "central-ice baseline")
