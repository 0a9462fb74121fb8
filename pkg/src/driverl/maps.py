"""Builtin maps: the circular training track and a multi-corner evaluation circuit.

Maps are constructed analytically, resampled through the standard track
pipeline, and given a raceline whose wall margin (0.6 m) exceeds the default
controller's safety inflation (0.45 m) so the default parameter set can sit on
the raceline exactly.
"""

from __future__ import annotations

import threading

import numpy as np

from .tracks import TrackGeometry, build_track, generate_raceline

MAP_RACELINE_MARGIN = 0.6  # m; > default track_safety_margin so the line is reachable
MAP_ALAT_MAX = 2.5
MAP_V_CAP = 5.0

TRAIN_MAP = "train_circle"
EVAL_MAP = "eval_grand_tour"

_ALIASES = {
    "circle": TRAIN_MAP,
    TRAIN_MAP: TRAIN_MAP,
    "grand_tour": EVAL_MAP,
    EVAL_MAP: EVAL_MAP,
}

_cache: dict[str, TrackGeometry] = {}
_lock = threading.Lock()


class UnknownMapError(KeyError):
    pass


def map_ids() -> tuple[str, str]:
    return (TRAIN_MAP, EVAL_MAP)


def canonical_map_id(map_id: str) -> str:
    try:
        return _ALIASES[map_id]
    except KeyError:
        raise UnknownMapError(f"unknown map '{map_id}'; known: {sorted(set(_ALIASES))}") from None


def get_map(map_id: str) -> TrackGeometry:
    """Return the named builtin map, raceline included. Cached per process."""
    key = canonical_map_id(map_id)
    with _lock:
        if key not in _cache:
            builder = _circle_track if key == TRAIN_MAP else _grand_tour_track
            track = builder()
            _cache[key] = generate_raceline(track, alat_max=MAP_ALAT_MAX,
                                            v_cap=MAP_V_CAP, margin=MAP_RACELINE_MARGIN)
        return _cache[key]


def _circle_track() -> TrackGeometry:
    """Counterclockwise circle, radius 10 m, 1.5 m clearance each side."""
    theta = np.linspace(0.0, 2.0 * np.pi, 361)[:-1]
    pts = np.column_stack([10.0 * np.cos(theta), 10.0 * np.sin(theta)])
    return build_track(pts, 1.5, 1.5, name=TRAIN_MAP,
                       alat_max=MAP_ALAT_MAX, v_cap=MAP_V_CAP)


def _chaikin(points: np.ndarray, rounds: int) -> np.ndarray:
    """Closed-polygon corner cutting; the limit is a C1 quadratic B-spline."""
    pts = points
    for _ in range(rounds):
        nxt = np.roll(pts, -1, axis=0)
        q = 0.75 * pts + 0.25 * nxt
        r = 0.25 * pts + 0.75 * nxt
        pts = np.empty((2 * len(pts), 2))
        pts[0::2] = q
        pts[1::2] = r
    return pts


def _grand_tour_track() -> TrackGeometry:
    """A closed multi-corner circuit: two long straights, a chicane, and
    corners of varying radius. Qualitatively circuit-like, 1.4 m clearances."""
    waypoints = np.array([
        (0.0, 0.0), (8.0, 0.0), (16.0, 0.0), (22.0, 1.0), (26.0, 5.0),
        (26.0, 10.0), (22.0, 14.0), (16.0, 13.0), (12.0, 10.5), (7.0, 10.0),
        (3.0, 12.5), (-2.0, 15.0), (-7.0, 13.5), (-9.0, 9.0), (-7.5, 4.5),
        (-4.0, 1.5),
    ])
    pts = _chaikin(waypoints, 4)
    return build_track(pts, 1.4, 1.4, name=EVAL_MAP,
                       alat_max=MAP_ALAT_MAX, v_cap=MAP_V_CAP)
