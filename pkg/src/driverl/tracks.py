"""Closed-track geometry: arc-length parameterization, Frenet projection, racelines.

A track is a closed centerline with per-point lateral clearances. Both the
centerline and the (optional) raceline are represented as :class:`ReferenceLine`
objects: closed curves fit with a periodic cubic spline, sampled at uniform
arc-length spacing, carrying heading, signed curvature, wall clearances, and a
speed profile. Lateral offsets are signed positive to the left of the travel
direction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.interpolate import CubicSpline

RESAMPLE_SPACING = 0.05  # m
CLOSURE_TOL = 1e-6  # m
MAX_HEADING_STEP = 0.3  # rad between consecutive resampled points
RACELINE_MARGIN = 0.1  # m, default wall margin for raceline generation
RACELINE_SWEEPS = 200

TRACK_CSV_HEADER = "x_m,y_m,w_left_m,w_right_m"
RACELINE_CSV_HEADER = "x_m,y_m,v_ref_mps"


class TrackError(Exception):
    """Base class for track loading and validation failures."""


class TrackParseError(TrackError):
    """Malformed track file; carries the offending line number."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class TrackValidationError(TrackError):
    """Geometrically invalid track (open loop, bad widths, kinks)."""


@dataclass(frozen=True)
class FrenetPose:
    """Position relative to a reference line: arc length, lateral offset, heading error."""

    s: float
    n: float
    dphi: float


def wrap_angle(a):
    """Wrap angle(s) to (-pi, pi]."""
    w = -((-np.asarray(a) + np.pi) % (2.0 * np.pi) - np.pi)
    return float(w) if np.ndim(a) == 0 else w


def _fd_heading_and_curvature(pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Central-difference heading and signed curvature on a closed point loop.

    The parametric formula (x'y'' - y'x'') / |p'|^3 is invariant to sample
    speed, so the (unknown) true spacing drops out.
    """
    xp = np.roll(pts[:, 0], -1) - np.roll(pts[:, 0], 1)
    yp = np.roll(pts[:, 1], -1) - np.roll(pts[:, 1], 1)
    xpp = np.roll(pts[:, 0], -1) - 2.0 * pts[:, 0] + np.roll(pts[:, 0], 1)
    ypp = np.roll(pts[:, 1], -1) - 2.0 * pts[:, 1] + np.roll(pts[:, 1], 1)
    # derivatives above are per unit index; rescale x'' by the factor 2 mismatch
    speed_sq = (xp / 2.0) ** 2 + (yp / 2.0) ** 2
    kappa = ((xp / 2.0) * ypp - (yp / 2.0) * xpp) / np.maximum(speed_sq, 1e-300) ** 1.5
    heading = np.arctan2(yp, xp)
    return heading, kappa


def _spline_resample(points: np.ndarray, columns: np.ndarray | None, spacing: float):
    """Fit a periodic cubic spline through a closed point loop and sample it at
    uniform arc spacing.

    Returns (sample points, heading, signed curvature, resampled columns,
    total arc length). Heading and curvature come from exact spline
    derivatives, so densely sampled circles keep kappa = 1/R to high accuracy.
    """
    closed = np.vstack([points, points[:1]])
    chord = np.linalg.norm(np.diff(closed, axis=0), axis=1)
    t_knots = np.concatenate(([0.0], np.cumsum(chord)))
    spline = CubicSpline(t_knots, closed, bc_type="periodic")

    # dense arc-length table: t -> s
    t_dense = np.linspace(0.0, t_knots[-1], max(8 * len(points), 512) + 1)
    d = spline(t_dense, 1)
    speed = np.hypot(d[:, 0], d[:, 1])
    s_dense = np.concatenate(([0.0], np.cumsum(
        0.5 * (speed[1:] + speed[:-1]) * np.diff(t_dense))))
    total = float(s_dense[-1])
    if total <= 0:
        raise TrackValidationError("track has zero length")

    m = max(int(round(total / spacing)), 8)
    s_grid = np.arange(m) * (total / m)
    t_grid = np.interp(s_grid, s_dense, t_dense)

    pts = spline(t_grid)
    d1 = spline(t_grid, 1)
    d2 = spline(t_grid, 2)
    speed_sq = d1[:, 0] ** 2 + d1[:, 1] ** 2
    kappa = (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]) / speed_sq**1.5
    heading = np.arctan2(d1[:, 1], d1[:, 0])

    out_cols = None
    if columns is not None:
        cols_closed = np.vstack([columns, columns[:1]])
        out_cols = np.column_stack(
            [np.interp(t_grid, t_knots, cols_closed[:, j]) for j in range(columns.shape[1])]
        )
    return pts, heading, kappa, out_cols, total


def speed_profile(kappa, alat_max: float, v_cap: float):
    """Curvature-limited speed reference: min(v_cap, sqrt(alat_max / |kappa|))."""
    return np.minimum(v_cap, np.sqrt(alat_max / np.maximum(np.abs(kappa), 1e-6)))


class ReferenceLine:
    """A closed curve sampled at uniform arc-length spacing.

    ``s`` is the canonical arc-length coordinate: sample k sits at
    ``k * spacing``. Projection uses a global nearest-segment search refined by
    a few Newton steps in the smooth heading field, which makes
    ``to_cartesian`` and ``project`` exact inverses of each other on-track.
    Arrays are write-locked after construction; instances are shareable.
    """

    def __init__(self, points, heading, kappa, d_left, d_right, total_length,
                 v_ref=None):
        pts = np.asarray(points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 8:
            raise TrackValidationError("reference line needs >= 8 planar points")
        self.points = pts
        m = pts.shape[0]
        self.total_length = float(total_length)
        self.spacing = self.total_length / m
        self.s = np.arange(m) * self.spacing
        self.heading = np.asarray(heading, dtype=float)
        self.kappa = np.asarray(kappa, dtype=float)
        self._heading_unwrapped = np.unwrap(self.heading)
        steps = np.abs(wrap_angle(np.roll(self.heading, -1) - self.heading))
        self.max_heading_step = float(np.max(steps))

        # chord segments for the global projection pre-search
        self._seg = np.roll(pts, -1, axis=0) - pts
        self._seg_len_sq = np.maximum(np.einsum("ij,ij->i", self._seg, self._seg), 1e-300)

        self.d_left = np.broadcast_to(np.asarray(d_left, dtype=float), (m,)).copy()
        self.d_right = np.broadcast_to(np.asarray(d_right, dtype=float), (m,)).copy()
        self.v_ref = None if v_ref is None else np.asarray(v_ref, dtype=float).copy()
        arrays = [self.points, self.s, self.heading, self.kappa, self.d_left,
                  self.d_right, self._heading_unwrapped, self._seg, self._seg_len_sq]
        if self.v_ref is not None:
            arrays.append(self.v_ref)
        for arr in arrays:
            arr.setflags(write=False)

    # -- interpolation ---------------------------------------------------------

    def _locate(self, s):
        if np.ndim(s) == 0:  # scalar fast path; hot in simulation loops
            sw = float(s) % self.total_length
            idx = int(sw / self.spacing)
            if idx >= len(self.s):
                idx = len(self.s) - 1
            return idx, sw / self.spacing - idx
        sw = np.mod(s, self.total_length)
        idx = np.minimum((sw / self.spacing).astype(int), len(self.s) - 1)
        frac = sw / self.spacing - idx
        return idx, frac

    def _interp(self, values, s):
        idx, frac = self._locate(s)
        if np.ndim(s) == 0:
            nxt = idx + 1 if idx + 1 < len(values) else 0
            return values[idx] * (1.0 - frac) + values[nxt] * frac
        nxt = (idx + 1) % len(values)
        return values[idx] * (1.0 - frac) + values[nxt] * frac

    def point_at(self, s):
        """Linear interpolation between on-curve samples (sagitta error ~1e-5 m)."""
        idx, frac = self._locate(s)
        frac = np.reshape(frac, np.shape(frac) + (1,)) if np.ndim(s) else frac
        nxt = (idx + 1) % len(self.points)
        return self.points[idx] * (1.0 - frac) + self.points[nxt] * frac

    def heading_at(self, s):
        idx, frac = self._locate(s)
        nxt = (idx + 1) % len(self.heading)
        h0 = self._heading_unwrapped[idx]
        h1 = h0 + wrap_angle(self._heading_unwrapped[nxt] - self._heading_unwrapped[idx])
        return wrap_angle(h0 * (1.0 - frac) + h1 * frac)

    def kappa_at(self, s):
        return self._interp(self.kappa, s)

    def d_left_at(self, s):
        return self._interp(self.d_left, s)

    def d_right_at(self, s):
        return self._interp(self.d_right, s)

    def v_ref_at(self, s):
        if self.v_ref is None:
            raise TrackError("reference line has no speed profile")
        return self._interp(self.v_ref, s)

    # -- projection ------------------------------------------------------------

    def project(self, position, s_hint: float | None = None) -> tuple[float, float]:
        """Nearest-point projection; returns (s, signed lateral offset).

        The search is global unless ``s_hint`` (a nearby arc position, e.g. the
        previous simulation step's) is given, in which case Newton refinement
        starts there and falls back to the global search if it fails to settle.
        """
        p = np.asarray(position, dtype=float)
        if s_hint is not None:
            out = self._newton_project(p, float(s_hint))
            if out is not None:
                return out
        rel = p[None, :] - self.points
        t = np.clip(np.einsum("ij,ij->i", rel, self._seg) / self._seg_len_sq, 0.0, 1.0)
        foot = self.points + self._seg * t[:, None]
        d2 = np.sum((foot - p) ** 2, axis=1)
        i = int(np.argmin(d2))
        s = (i + t[i]) * self.spacing
        out = self._newton_project(p, s)
        if out is not None:
            return out
        # Newton failed on a degenerate spot; fall back to the raw foot point
        tang = self._seg[i] / math.sqrt(self._seg_len_sq[i])
        delta = p - foot[i]
        return float(s % self.total_length), float(tang[0] * delta[1] - tang[1] * delta[0])

    def _newton_project(self, p: np.ndarray, s: float) -> tuple[float, float] | None:
        """Solve e(s) . tangent(s) = 0 in the smooth heading field."""
        px, py = float(p[0]), float(p[1])
        for _ in range(6):
            h = float(self.heading_at(s))
            tx, ty = math.cos(h), math.sin(h)
            c = self.point_at(s)
            ex, ey = px - float(c[0]), py - float(c[1])
            tau = ex * tx + ey * ty
            n_est = -ex * ty + ey * tx
            denom = 1.0 - n_est * float(self.kappa_at(s))
            s = (s + tau / max(denom, 0.05)) % self.total_length
            if abs(tau) < 1e-9:
                h = float(self.heading_at(s))
                c = self.point_at(s)
                n = -(px - float(c[0])) * math.sin(h) + (py - float(c[1])) * math.cos(h)
                return float(s % self.total_length), float(n)
        return None

    def to_cartesian(self, s, n):
        """Map (s, n) back to a planar point; n positive to the left."""
        base = self.point_at(s)
        h = self.heading_at(s)
        normal = np.stack([-np.sin(h), np.cos(h)], axis=-1)
        return base + (np.reshape(n, np.shape(n) + (1,)) if np.ndim(s) else n) * normal

    def rms_curvature(self) -> float:
        return float(np.sqrt(np.mean(self.kappa**2)))


@dataclass
class TrackGeometry:
    """A closed track: centerline with clearances plus an optional raceline."""

    centerline: ReferenceLine
    name: str = "track"
    raceline: ReferenceLine | None = None
    raceline_converged: bool = True

    @property
    def total_length(self) -> float:
        return self.centerline.total_length

    @property
    def curvature(self) -> np.ndarray:
        return self.centerline.kappa

    @property
    def width_left(self) -> np.ndarray:
        return self.centerline.d_left

    @property
    def width_right(self) -> np.ndarray:
        return self.centerline.d_right

    def reference(self, use_raceline: bool) -> ReferenceLine:
        if use_raceline:
            if self.raceline is None:
                raise TrackError(f"track '{self.name}' has no raceline")
            return self.raceline
        return self.centerline

    def frenet_project(self, position, heading: float, use_raceline: bool = False) -> FrenetPose:
        ref = self.reference(use_raceline)
        s, n = ref.project(position)
        return FrenetPose(s=s, n=n, dphi=wrap_angle(heading - float(ref.heading_at(s))))

    def frenet_to_cartesian(self, s: float, n: float, dphi: float = 0.0,
                            use_raceline: bool = False):
        """Returns (point, heading) for a Frenet pose on the selected line."""
        ref = self.reference(use_raceline)
        return ref.to_cartesian(s, n), wrap_angle(float(ref.heading_at(s)) + dphi)

    def clearance_at(self, s: float, side: float) -> float:
        """Centerline wall clearance at arc position s, on the side the offset points to."""
        line = self.centerline
        return float(line.d_left_at(s)) if side >= 0 else float(line.d_right_at(s))


# -- construction ----------------------------------------------------------------


def _kept_indices(points: np.ndarray) -> np.ndarray:
    """Indices surviving consecutive-duplicate removal and closure-point removal."""
    keep = [0]
    for i in range(1, len(points)):
        if np.linalg.norm(points[i] - points[keep[-1]]) > CLOSURE_TOL:
            keep.append(i)
    if len(keep) > 1 and np.linalg.norm(points[keep[0]] - points[keep[-1]]) <= CLOSURE_TOL:
        keep.pop()
    return np.asarray(keep, dtype=int)


def build_track(points, width_left, width_right, name: str = "track",
                spacing: float = RESAMPLE_SPACING, alat_max: float = 10.0,
                v_cap: float = 5.0) -> TrackGeometry:
    """Build a TrackGeometry from raw centerline points and per-point widths."""
    raw = np.asarray(points, dtype=float)
    if raw.ndim != 2 or raw.shape[1] != 2:
        raise TrackValidationError("points must be an (N, 2) array")
    n_raw = len(raw)
    wl = np.broadcast_to(np.asarray(width_left, dtype=float), (n_raw,))
    wr = np.broadcast_to(np.asarray(width_right, dtype=float), (n_raw,))
    if np.any(wl <= 0) or np.any(wr <= 0):
        raise TrackValidationError("track widths must be positive")
    kept = _kept_indices(raw)
    if len(kept) < 8:
        raise TrackParseError(f"track needs at least 8 distinct points, got {len(kept)}")
    pts, heading, kappa, cols, total = _spline_resample(
        raw[kept], np.column_stack([wl[kept], wr[kept]]), spacing)
    line = ReferenceLine(pts, heading, kappa, cols[:, 0], cols[:, 1], total,
                         v_ref=speed_profile(kappa, alat_max, v_cap))
    if line.max_heading_step > MAX_HEADING_STEP:
        raise TrackValidationError(
            "heading discontinuity %.3f rad exceeds %.2f rad per %.2gm step; "
            "path is open or kinked" % (line.max_heading_step, MAX_HEADING_STEP, spacing)
        )
    return TrackGeometry(centerline=line, name=name)


def load_track(source, name: str = "track") -> TrackGeometry:
    """Parse the track CSV format (``x_m,y_m,w_left_m,w_right_m``) into geometry.

    Accepts bytes, text, or a readable file object. Raises TrackParseError with
    the offending line number on malformed rows; TrackValidationError on
    geometric problems.
    """
    text = _as_text(source)
    lines = text.splitlines()
    if not lines:
        raise TrackParseError("empty track file")
    if lines[0].strip().replace(" ", "") != TRACK_CSV_HEADER:
        raise TrackParseError(
            f"expected header '{TRACK_CSV_HEADER}', got '{lines[0].strip()}'", line=1)
    rows, widths = [], []
    for lineno, raw in enumerate(lines[1:], start=2):
        stripped = raw.strip()
        if not stripped:
            continue
        parts = stripped.split(",")
        if len(parts) != 4:
            raise TrackParseError(
                f"expected 4 comma-separated values, got {len(parts)}", line=lineno)
        try:
            x, y, wl, wr = (float(p) for p in parts)
        except ValueError:
            raise TrackParseError(f"non-numeric value in row '{stripped}'", line=lineno) from None
        if not np.isfinite([x, y, wl, wr]).all():
            raise TrackParseError("non-finite value", line=lineno)
        rows.append((x, y))
        widths.append((wl, wr))
    if len(rows) < 8:
        raise TrackParseError(f"track needs >= 8 points, got {len(rows)}")
    w = np.asarray(widths)
    if np.any(w <= 0):
        bad = int(np.argwhere(w.min(axis=1) <= 0)[0][0])
        raise TrackValidationError(f"non-positive width at point {bad}")
    return build_track(np.asarray(rows), w[:, 0], w[:, 1], name=name)


def track_to_csv(track: TrackGeometry) -> str:
    """Serialize the centerline back to the track CSV format."""
    line = track.centerline
    out = [TRACK_CSV_HEADER]
    for p, wl, wr in zip(line.points, line.d_left, line.d_right):
        out.append(f"{p[0]:.6f},{p[1]:.6f},{wl:.6f},{wr:.6f}")
    return "\n".join(out) + "\n"


def raceline_to_csv(track: TrackGeometry) -> str:
    if track.raceline is None:
        raise TrackError("no raceline to serialize")
    out = [RACELINE_CSV_HEADER]
    for p, v in zip(track.raceline.points, track.raceline.v_ref):
        out.append(f"{p[0]:.6f},{p[1]:.6f},{v:.6f}")
    return "\n".join(out) + "\n"


def load_raceline(track: TrackGeometry, source) -> TrackGeometry:
    """Attach a raceline from the raceline CSV format (``x_m,y_m,v_ref_mps``)."""
    text = _as_text(source)
    lines = text.splitlines()
    if not lines or lines[0].strip().replace(" ", "") != RACELINE_CSV_HEADER:
        raise TrackParseError(f"expected header '{RACELINE_CSV_HEADER}'", line=1)
    pts, vs = [], []
    for lineno, raw in enumerate(lines[1:], start=2):
        stripped = raw.strip()
        if not stripped:
            continue
        parts = stripped.split(",")
        if len(parts) != 3:
            raise TrackParseError("expected 3 comma-separated values", line=lineno)
        try:
            x, y, v = (float(p) for p in parts)
        except ValueError:
            raise TrackParseError(f"non-numeric value in row '{stripped}'", line=lineno) from None
        pts.append((x, y))
        vs.append(v)
    if len(pts) < 8:
        raise TrackParseError("raceline needs >= 8 points")
    raw = np.asarray(pts)
    kept = _kept_indices(raw)
    line = _raceline_reference(track, raw[kept], np.asarray(vs)[kept])
    return replace(track, raceline=line, raceline_converged=True)


def _as_text(source) -> str:
    if isinstance(source, bytes):
        return source.decode("utf-8")
    if isinstance(source, str):
        return source
    data = source.read()
    return data.decode("utf-8") if isinstance(data, bytes) else data


def _raceline_reference(track: TrackGeometry, raw_pts: np.ndarray,
                        v_ref_raw: np.ndarray | None,
                        v_ref_from_kappa: tuple[float, float] | None = None) -> ReferenceLine:
    """Build a raceline ReferenceLine through the spline pipeline.

    Wall clearances derive from the centerline corridor shifted by the
    raceline's own centerline offset at each sample. The speed profile comes
    either from per-point values (``v_ref_raw``) or from the resampled
    curvature (``v_ref_from_kappa = (alat_max, v_cap)``).
    """
    cols = None if v_ref_raw is None else np.asarray(v_ref_raw, dtype=float).reshape(-1, 1)
    pts, heading, kappa, out_cols, total = _spline_resample(raw_pts, cols, RESAMPLE_SPACING)
    center = track.centerline
    d_left = np.empty(len(pts))
    d_right = np.empty(len(pts))
    for i, p in enumerate(pts):
        s_c, off = center.project(p)
        d_left[i] = float(center.d_left_at(s_c)) - off
        d_right[i] = float(center.d_right_at(s_c)) + off
    if v_ref_raw is not None:
        v = out_cols[:, 0]
    else:
        alat_max, v_cap = v_ref_from_kappa
        v = speed_profile(kappa, alat_max, v_cap)
    return ReferenceLine(pts, heading, kappa, d_left, d_right, total, v_ref=v)


# -- raceline generation -----------------------------------------------------------


RACELINE_MIN_WAVELENGTH = 2.0  # m, shortest offset mode the optimizer may use


def generate_raceline(track: TrackGeometry, alat_max: float = 10.0, v_cap: float = 5.0,
                      margin: float = RACELINE_MARGIN,
                      sweeps: int = RACELINE_SWEEPS) -> TrackGeometry:
    """Generate a curvature-reduced raceline with a speed profile.

    The lateral offset profile along the centerline normals is expressed in a
    truncated periodic Fourier basis (wavelengths >= ~2 m) and minimized by
    per-coefficient pattern search on the summed squared finite-difference
    curvature of the offset curve. The smooth basis sidesteps the extreme
    stiffness of per-sample offsets, where kink modes bury the useful descent
    directions. Offsets are hard-clipped to the corridor
    [-(w_right - margin), w_left - margin] at every sample. Hitting the sweep
    cap returns the best iterate with ``raceline_converged=False``, never an
    error.
    """
    if alat_max <= 0 or v_cap <= 0:
        raise ValueError("alat_max and v_cap must be positive")
    center = track.centerline
    pts = center.points
    m = len(pts)
    normal = np.column_stack([-np.sin(center.heading), np.cos(center.heading)])
    lo = -(center.d_right - margin)
    hi = center.d_left - margin
    if np.any(lo > hi):
        raise TrackValidationError("margin leaves no corridor for the raceline")

    n_modes = max(4, min(48, int(center.total_length / (2.0 * RACELINE_MIN_WAVELENGTH))))
    phase = 2.0 * np.pi * np.arange(m) / m
    basis = [np.ones(m)]
    for k in range(1, n_modes + 1):
        basis.append(np.cos(k * phase))
        basis.append(np.sin(k * phase))
    basis = np.column_stack(basis)  # (m, 2*n_modes+1)
    n_coef = basis.shape[1]

    def objective(coef: np.ndarray) -> float:
        alpha = np.clip(basis @ coef, lo, hi)
        _, k = _fd_heading_and_curvature(pts + alpha[:, None] * normal)
        return float(np.sum(k**2))

    coef = np.zeros(n_coef)
    obj = objective(coef)
    steps = np.full(n_coef, 0.05)
    converged = False
    # stage 1 settles the uniform mode alone: higher modes are near-neutral on
    # symmetric tracks and would otherwise drift into eccentric local basins
    # before the uniform offset reaches its optimum
    stages = [range(1), range(n_coef)]
    sweeps_left = sweeps
    for active in stages:
        steps[list(active)] = 0.05
        converged = False
        while sweeps_left > 0 and not converged:
            sweeps_left -= 1
            for j in active:
                t = steps[j]
                if t < 1e-5:
                    continue
                for sign in (1.0, -1.0):
                    cand = coef.copy()
                    cand[j] += sign * t
                    cand_obj = objective(cand)
                    if cand_obj < obj * (1.0 - 1e-10) - 1e-14:
                        coef, obj = cand, cand_obj
                        steps[j] = min(t * 1.6, 0.3)
                        break
                else:
                    steps[j] = t * 0.5
            if max(steps[list(active)]) < 1e-5:
                converged = True

    alpha = np.clip(basis @ coef, lo, hi)
    line = _raceline_reference(track, pts + alpha[:, None] * normal, None,
                               v_ref_from_kappa=(alat_max, v_cap))
    return replace(track, raceline=line, raceline_converged=converged)
