"""Curvilinear kinematic bicycle simulation and lap rollouts.

States live in the Frenet frame of whichever reference line the controller
tracks. The trace additionally records the signed centerline offset
(``n_center``) at every step, which all crash checks and centerline metrics
use regardless of the tracked line.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Callable, Protocol, runtime_checkable

import numpy as np

from .tracks import ReferenceLine, TrackGeometry, wrap_angle

WHEELBASE = 0.33  # m, 1:10-scale car
DELTA_MAX = 0.4  # rad
SIM_DT = 0.02  # s
SIM_MAX_TIME = 60.0  # s
MIN_PROJECTION = 0.05  # lower bound on 1 - n*kappa before the frame degenerates

TRACE_FIELDS = ("t", "s", "n", "dphi", "delta", "v", "ddelta", "a", "n_center", "a_lat")


class SimulationFault(Exception):
    """The Frenet frame degenerated (1 - n*kappa too small); callers treat as crash."""


class ControllerFault(Exception):
    """The controller could not produce an input; the lap ends as a crash."""


@dataclass(frozen=True)
class VehicleState:
    """Curvilinear state [s, n, dphi, delta, v]."""

    s: float
    n: float
    dphi: float
    delta: float
    v: float

    def as_array(self) -> np.ndarray:
        return np.array([self.s, self.n, self.dphi, self.delta, self.v])


@dataclass(frozen=True)
class ControlInput:
    """Steering rate and longitudinal acceleration [ddelta, a]."""

    ddelta: float
    a: float


@dataclass(frozen=True)
class LapLimits:
    dt: float = SIM_DT
    max_time: float = SIM_MAX_TIME


@dataclass(frozen=True)
class TraceSample:
    t: float
    state: VehicleState
    inp: ControlInput
    n_center: float
    a_lat: float

    def row(self) -> dict:
        s = self.state
        return {
            "t": self.t, "s": s.s, "n": s.n, "dphi": s.dphi, "delta": s.delta,
            "v": s.v, "ddelta": self.inp.ddelta, "a": self.inp.a,
            "n_center": self.n_center, "a_lat": self.a_lat,
        }


@dataclass
class LapTrace:
    """Time series of one simulated lap plus its termination outcome."""

    samples: list[TraceSample]
    terminated_by: str  # lap_complete | timeout | crash
    lap_time: float

    def arrays(self) -> dict[str, np.ndarray]:
        rows = {f: np.empty(len(self.samples)) for f in TRACE_FIELDS}
        for i, smp in enumerate(self.samples):
            r = smp.row()
            for f in TRACE_FIELDS:
                rows[f][i] = r[f]
        return rows

    def to_ldjson(self) -> str:
        lines = [json.dumps(s.row()) for s in self.samples]
        lines.append(json.dumps({"terminated_by": self.terminated_by,
                                 "lap_time": self.lap_time}))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_ldjson(cls, text: str) -> "LapTrace":
        lines = [ln for ln in text.splitlines() if ln.strip()]
        if not lines:
            raise ValueError("empty trace")
        trailer = json.loads(lines[-1])
        samples = []
        for ln in lines[:-1]:
            r = json.loads(ln)
            samples.append(TraceSample(
                t=r["t"],
                state=VehicleState(r["s"], r["n"], r["dphi"], r["delta"], r["v"]),
                inp=ControlInput(r["ddelta"], r["a"]),
                n_center=r["n_center"], a_lat=r["a_lat"]))
        return cls(samples=samples, terminated_by=trailer["terminated_by"],
                   lap_time=trailer["lap_time"])


def lateral_acceleration(state: VehicleState, wheelbase: float = WHEELBASE) -> float:
    """Kinematic lateral acceleration v^2 tan(delta) / L."""
    if wheelbase <= 0:
        raise ValueError("wheelbase must be positive")
    return state.v**2 * math.tan(state.delta) / wheelbase


def _ode_rhs(y: np.ndarray, inp: ControlInput, ref: ReferenceLine) -> np.ndarray:
    s, n, dphi, delta, v = y
    kappa = float(ref.kappa_at(s))
    denom = 1.0 - n * kappa
    if denom <= MIN_PROJECTION:
        raise SimulationFault(f"projection denominator {denom:.4f} <= {MIN_PROJECTION}")
    s_dot = v * math.cos(dphi) / denom
    return np.array([
        s_dot,
        v * math.sin(dphi),
        v * math.tan(delta) / WHEELBASE - kappa * s_dot,
        inp.ddelta,
        inp.a,
    ])


def step_dynamics(state: VehicleState, inp: ControlInput,
                  track: TrackGeometry | ReferenceLine, dt: float) -> VehicleState:
    """One RK4 step of the curvilinear bicycle ODE on the given reference line.

    The steering angle is clamped to +-DELTA_MAX after the step; s wraps to
    [0, total_length); dphi wraps to (-pi, pi]. Raises SimulationFault when the
    Frenet projection degenerates (1 - n*kappa <= 0.05).
    """
    if not (0.0 < dt <= 0.1):
        raise ValueError("dt must be in (0, 0.1]")
    ref = track.centerline if isinstance(track, TrackGeometry) else track
    y = state.as_array()
    k1 = _ode_rhs(y, inp, ref)
    k2 = _ode_rhs(y + 0.5 * dt * k1, inp, ref)
    k3 = _ode_rhs(y + 0.5 * dt * k2, inp, ref)
    k4 = _ode_rhs(y + dt * k3, inp, ref)
    out = y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not np.isfinite(out).all():
        raise SimulationFault("non-finite state after integration step")
    return VehicleState(
        s=float(out[0] % ref.total_length),
        n=float(out[1]),
        dphi=float(wrap_angle(out[2])),
        delta=float(np.clip(out[3], -DELTA_MAX, DELTA_MAX)),
        v=float(out[4]),
    )


@runtime_checkable
class Controller(Protocol):
    """Control policy driving run_lap.

    ``reference_name`` selects the line the simulation state lives on
    ("raceline" or "centerline"); ``control`` may raise ControllerFault.
    """

    reference_name: str

    def control(self, state: VehicleState, t: float) -> ControlInput: ...


class FunctionController:
    """Wrap a plain (state, t) -> ControlInput function as a Controller."""

    def __init__(self, fn: Callable[[VehicleState, float], ControlInput],
                 reference_name: str = "centerline"):
        self._fn = fn
        self.reference_name = reference_name

    def control(self, state: VehicleState, t: float) -> ControlInput:
        return self._fn(state, t)


def run_lap(track: TrackGeometry, controller, initial: VehicleState,
            limits: LapLimits = LapLimits()) -> LapTrace:
    """Roll out one lap under the controller.

    Terminates on: net |progress| >= one lap length (lap_complete), sim time
    exceeding limits.max_time (timeout), |n_center| exceeding the local
    clearance or any simulation/controller fault (crash). Deterministic for
    identical arguments.
    """
    use_raceline = getattr(controller, "reference_name", "centerline") == "raceline"
    ref = track.reference(use_raceline)
    center = track.centerline
    dt = limits.dt
    state = initial
    t = 0.0
    progress = 0.0
    samples: list[TraceSample] = []
    outcome = "timeout"
    lap_time = limits.max_time
    max_steps = int(round(limits.max_time / dt))
    s_c_prev: float | None = None
    for _ in range(max_steps):
        if use_raceline:
            pos = ref.to_cartesian(state.s, state.n)
            s_c, n_center = center.project(pos, s_hint=s_c_prev)
            s_c_prev = s_c
        else:
            s_c, n_center = state.s, state.n
        a_lat = lateral_acceleration(state)
        try:
            inp = controller.control(state, t)
        except ControllerFault:
            samples.append(TraceSample(t, state, ControlInput(0.0, 0.0), n_center, a_lat))
            outcome, lap_time = "crash", t
            break
        samples.append(TraceSample(t, state, inp, n_center, a_lat))
        if abs(n_center) > track.clearance_at(s_c, n_center):
            outcome, lap_time = "crash", t
            break
        prev_s = state.s
        try:
            state = step_dynamics(state, inp, ref, dt)
        except SimulationFault:
            outcome, lap_time = "crash", t + dt
            break
        t += dt
        ds = state.s - prev_s
        half = 0.5 * ref.total_length
        if ds > half:
            ds -= ref.total_length
        elif ds < -half:
            ds += ref.total_length
        progress += ds
        if abs(progress) >= ref.total_length:
            outcome, lap_time = "lap_complete", t
            break
    return LapTrace(samples=samples, terminated_by=outcome, lap_time=lap_time)
