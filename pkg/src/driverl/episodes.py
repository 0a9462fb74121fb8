"""Episode environment: runs parameterized laps and caches baseline metrics.

One environment wraps one track. Every scored lap starts from the same state
(on the raceline at its reference speed), so identical parameter sets produce
bit-identical traces and the default-parameter completion scores a drive
reward of exactly zero.
"""

from __future__ import annotations

import math
import threading
from collections import OrderedDict
from dataclasses import dataclass

from .behaviors import BehaviorSpec, metric_rmse
from .mpc import MpcController, MpcParams, default_params
from .simulator import LapLimits, LapTrace, VehicleState, WHEELBASE, run_lap
from .tracks import TrackGeometry


@dataclass(frozen=True)
class EpisodeResult:
    e_mpc: float
    e_llm: float
    r_drive: float
    crashed: bool
    trace: LapTrace


def drive_reward(e_mpc: float, e_llm: float) -> float:
    """Clipped relative improvement max((e_mpc - e_llm) / e_mpc, -4).

    The degenerate zero baseline scores 0 for a perfect match and the clip
    floor otherwise.
    """
    if e_mpc < 0 or e_llm < 0:
        raise ValueError("errors must be nonnegative")
    if e_mpc == 0.0:
        return 0.0 if e_llm == 0.0 else -4.0
    return max((e_mpc - e_llm) / e_mpc, -4.0)


class EpisodeEnvironment:
    """Lap runner with a per-parameter-set trace cache and cached baselines.

    The trace cache is LRU-capped: long training runs explore many parameter
    sets, and traces are heavy. Evicted entries recompute deterministically,
    so cache pressure never changes any score.
    """

    TRACE_CACHE_CAP = 256

    def __init__(self, track: TrackGeometry, limits: LapLimits = LapLimits(),
                 control_period: int = 1):
        if track.raceline is None:
            raise ValueError("episode environment needs a track with a raceline")
        self.track = track
        self.limits = limits
        self.control_period = control_period
        ref = track.raceline
        self.initial = VehicleState(
            s=0.0, n=0.0, dphi=0.0,
            delta=math.atan(WHEELBASE * float(ref.kappa_at(0.0))),
            v=float(ref.v_ref_at(0.0)))
        self._traces: OrderedDict[tuple, LapTrace] = OrderedDict()
        self._baselines: dict[tuple, float] = {}
        self._lock = threading.Lock()

    def lap_for(self, params: MpcParams) -> LapTrace:
        """Run (or reuse) the lap for a parameter set; deterministic, so a
        racing double-compute is harmless and the cache stays consistent."""
        key = params.key()
        with self._lock:
            hit = self._traces.get(key)
            if hit is not None:
                self._traces.move_to_end(key)
                return hit
        controller = MpcController(self.track, params,
                                   control_period=self.control_period)
        trace = run_lap(self.track, controller, self.initial, self.limits)
        with self._lock:
            self._traces.setdefault(key, trace)
            self._traces.move_to_end(key)
            while len(self._traces) > self.TRACE_CACHE_CAP:
                self._traces.popitem(last=False)
            return self._traces[key]

    def default_trace(self) -> LapTrace:
        return self.lap_for(default_params())

    def baseline_rmse(self, behavior: BehaviorSpec) -> float:
        """E^MPC for a behavior: the default-parameter lap scored by the
        behavior's metric, computed once per (metric, v_ref)."""
        key = (behavior.metric_id, behavior.v_ref, behavior.kind)
        with self._lock:
            if key in self._baselines:
                return self._baselines[key]
        value = metric_rmse(self.default_trace(), behavior)
        with self._lock:
            self._baselines.setdefault(key, value)
            return self._baselines[key]

    def run_episode(self, params: MpcParams, behavior: BehaviorSpec) -> EpisodeResult:
        """Score one parameter set against one behavior (crash floors at -4)."""
        e_mpc = self.baseline_rmse(behavior)
        trace = self.lap_for(params)
        crashed = trace.terminated_by == "crash"
        if crashed and not trace.samples:
            return EpisodeResult(e_mpc=e_mpc, e_llm=float("inf"), r_drive=-4.0,
                                 crashed=True, trace=trace)
        e_llm = metric_rmse(trace, behavior)
        r = -4.0 if crashed else drive_reward(e_mpc, e_llm)
        return EpisodeResult(e_mpc=e_mpc, e_llm=e_llm, r_drive=r,
                             crashed=crashed, trace=trace)
