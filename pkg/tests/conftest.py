import math

import numpy as np
import pytest

from driverl.dataset import generate_dataset
from driverl.maps import get_map
from driverl.simulator import LapLimits, VehicleState
from driverl.tracks import TrackGeometry, build_track


def stadium_points(straight: float = 20.0, radius: float = 5.0,
                   step: float = 0.4) -> np.ndarray:
    """Counterclockwise stadium: two straights joined by semicircles."""
    pts = []
    n_str = int(straight / step)
    for i in range(n_str):
        pts.append((-straight / 2 + i * step, -radius))
    for a in np.linspace(-np.pi / 2, np.pi / 2, int(np.pi * radius / step),
                         endpoint=False):
        pts.append((straight / 2 + radius * np.cos(a), radius * np.sin(a)))
    for i in range(n_str):
        pts.append((straight / 2 - i * step, radius))
    for a in np.linspace(np.pi / 2, 3 * np.pi / 2, int(np.pi * radius / step),
                         endpoint=False):
        pts.append((-straight / 2 + radius * np.cos(a), radius * np.sin(a)))
    return np.asarray(pts)


def make_stadium(width: float = 1.5) -> TrackGeometry:
    return build_track(stadium_points(), width, width, name="stadium")


def raceline_start_state(track: TrackGeometry) -> VehicleState:
    ref = track.raceline
    return VehicleState(s=0.0, n=0.0, dphi=0.0,
                        delta=math.atan(0.33 * float(ref.kappa_at(0.0))),
                        v=float(ref.v_ref_at(0.0)))


@pytest.fixture(scope="session")
def circle_track():
    return get_map("train_circle")


@pytest.fixture(scope="session")
def gt_track():
    return get_map("eval_grand_tour")


@pytest.fixture(scope="session")
def stadium():
    return make_stadium()


@pytest.fixture(scope="session")
def small_corpus(circle_track):
    # ~16 histories / 128 instances; 8 s lap caps keep this quick (every style
    # still yields enough rows before its first lap completes)
    return generate_dataset(circle_track, per_style=2, seed=3,
                            limits=LapLimits(max_time=8.0))
