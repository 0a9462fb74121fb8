"""Receding-horizon path-tracking controller with an online-tunable cost.

The controller minimizes, over an N-step horizon,

    sum qn*n^2 + qv*(v - v_ref(s))^2 + qalpha*dphi^2 + qac*a^2 + qddelta*ddelta^2

subject to velocity/acceleration/steering-rate bounds, corridor bounds on n
inflated by ``track_safety_margin``, and a lateral-acceleration limit, with
dynamics handled by successive linearization around a nonlinear rollout. Each
linearized subproblem is one convex QP (solved by OSQP); state constraints are
softened by one L1-penalized slack per step so transiently infeasible states
(for example v far above a newly lowered v_max) still produce a useful braking
input instead of a solver failure. Hard input bounds are never softened.

Status semantics: ``optimal`` is granted only after an independent KKT-residual
check (<= 1e-4) on the solved subproblem plus verification that every
predicted state satisfies its original (unsoftened) bound within 1e-6;
transient-violation solutions report ``max_iter`` and carry the best iterate.
Structurally empty constraint sets (margin wider than the corridor) report
``infeasible`` with a zero input.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields

import numpy as np
import osqp
import scipy.sparse as sparse

from .simulator import (ControllerFault, ControlInput, VehicleState, DELTA_MAX,
                        WHEELBASE)
from .tracks import ReferenceLine, TrackGeometry

MPC_HORIZON = 20
MPC_DT = 0.05  # s
STEER_RATE_MAX = 3.2  # rad/s
SLACK_PENALTY = 1e3
SLACK_QUAD = 2.0  # small quadratic slack term; regularizes the penalty's kink
KKT_TOL = 1e-4
BOUND_TOL = 1e-6
NX, NU = 5, 2  # state [s, n, dphi, delta, v]; input [ddelta, a]


class InvalidParameterError(ValueError):
    """Unknown key or range-rule violation in a tunable-parameter map."""


@dataclass(frozen=True)
class ParamSpec:
    name: str
    unit: str
    default: float
    min: float
    max: float
    tunable: bool = True


PARAM_SCHEMA: tuple[ParamSpec, ...] = (
    ParamSpec("qv", "-", 10.0, 0.0, 1000.0),
    ParamSpec("qn", "-", 20.0, 0.0, 1000.0),
    ParamSpec("qalpha", "-", 7.0, 0.0, 1000.0),
    ParamSpec("qac", "-", 0.01, 0.0, 1000.0),
    ParamSpec("qddelta", "-", 0.1, 0.0, 1000.0),
    ParamSpec("alat_max", "m/s^2", 10.0, 0.01, 50.0),
    ParamSpec("a_min", "m/s^2", -5.0, -20.0, 20.0),
    ParamSpec("a_max", "m/s^2", 5.0, -20.0, 20.0),
    ParamSpec("v_min", "m/s", 1.0, -10.0, 10.0),
    ParamSpec("v_max", "m/s", 5.0, -10.0, 10.0),
    ParamSpec("track_safety_margin", "m", 0.45, 0.0, 5.0),
)

_SCHEMA_BY_NAME = {spec.name: spec for spec in PARAM_SCHEMA}


@dataclass(frozen=True)
class MpcParams:
    """The tunable cost weights and constraint bounds; the action schema."""

    qv: float = 10.0
    qn: float = 20.0
    qalpha: float = 7.0
    qac: float = 0.01
    qddelta: float = 0.1
    alat_max: float = 10.0
    a_min: float = -5.0
    a_max: float = 5.0
    v_min: float = 1.0
    v_max: float = 5.0
    track_safety_margin: float = 0.45

    def as_dict(self) -> dict[str, float]:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def key(self) -> tuple:
        return tuple(getattr(self, f.name) for f in fields(self))


def default_params() -> MpcParams:
    return MpcParams()


def validate_params(raw: dict) -> MpcParams:
    """Validate a name->number map: unknown keys rejected, missing keys filled
    from defaults, range and cross-field rules enforced."""
    if not isinstance(raw, dict):
        raise InvalidParameterError("parameter payload must be a mapping")
    merged = {spec.name: spec.default for spec in PARAM_SCHEMA}
    for key, value in raw.items():
        spec = _SCHEMA_BY_NAME.get(key)
        if spec is None:
            raise InvalidParameterError(f"unknown parameter '{key}'")
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise InvalidParameterError(f"parameter '{key}' must be a number")
        value = float(value)
        if not math.isfinite(value):
            raise InvalidParameterError(f"parameter '{key}' must be finite")
        if not (spec.min <= value <= spec.max):
            raise InvalidParameterError(
                f"parameter '{key}'={value} outside [{spec.min}, {spec.max}]")
        merged[key] = value
    if merged["v_max"] <= merged["v_min"]:
        raise InvalidParameterError("rule violated: v_max must be greater than v_min")
    if merged["a_max"] <= merged["a_min"]:
        raise InvalidParameterError("rule violated: a_max must be greater than a_min")
    return MpcParams(**merged)


def schema_descriptor() -> list[dict]:
    """Machine-readable parameter schema shared by prompts and validation."""
    return [
        {"name": s.name, "unit": s.unit, "default": s.default,
         "min": s.min, "max": s.max, "tunable": s.tunable}
        for s in PARAM_SCHEMA
    ]


@dataclass
class MpcSolution:
    first_input: ControlInput
    predicted_states: list[VehicleState]
    cost: float
    status: str  # optimal | max_iter | infeasible


def reference_speed(profile, params: MpcParams):
    """Resolve the tracked speed reference from the raceline profile.

    Reversing configurations (v_min < 0 and v_max <= 0) target the midpoint of
    the velocity window; otherwise the profile is clamped into
    [max(v_min, 0.1) if v_min > 0 else v_min, v_max].
    """
    if params.v_min < 0.0 and params.v_max <= 0.0:
        mid = 0.5 * (params.v_min + params.v_max)
        return np.full_like(np.asarray(profile, dtype=float), mid) \
            if np.ndim(profile) else mid
    lo = max(params.v_min, 0.1) if params.v_min > 0 else params.v_min
    return np.clip(profile, lo, params.v_max)


class MpcController:
    """One controller instance per episode; holds the OSQP problem and warm state.

    Not reentrant: concurrent laps need separate instances.
    """

    def __init__(self, track: TrackGeometry, params: MpcParams,
                 horizon: int = MPC_HORIZON, mpc_dt: float = MPC_DT,
                 reference: str = "auto", control_period: int = 1):
        if horizon < 5:
            raise ValueError("horizon must be at least 5 steps")
        if reference == "auto":
            reference = "raceline" if track.raceline is not None else "centerline"
        self.reference_name = reference
        self.track = track
        self.ref: ReferenceLine = track.reference(reference == "raceline")
        if self.ref.v_ref is None:
            raise ValueError("reference line lacks a speed profile")
        self.params = params
        self.N = horizon
        self.dt = mpc_dt
        self.control_period = max(int(control_period), 1)
        self._calls = 0
        self._last_input = ControlInput(0.0, 0.0)
        self._prev_u: np.ndarray | None = None  # (N, NU) warm-start inputs
        # corridor can be empty everywhere regardless of state
        self._always_infeasible = bool(np.min(self.ref.d_left + self.ref.d_right)
                                       < 2.0 * params.track_safety_margin)
        self._build_qp()

    # -- public API -------------------------------------------------------------

    def control(self, state: VehicleState, t: float) -> ControlInput:
        """Controller protocol for run_lap; re-solves every control_period calls."""
        if self._calls % self.control_period == 0:
            sol = self.solve(state, refine_status=False)
            if sol.status == "infeasible":
                raise ControllerFault("MPC constraint set is empty")
            self._last_input = sol.first_input
            self._calls = 0
        self._calls += 1
        return self._last_input

    def solve(self, state: VehicleState, refine_status: bool = True) -> MpcSolution:
        """Solve the receding-horizon problem from ``state`` (reference frame).

        ``refine_status`` enables the active-set KKT refinement that certifies
        ``optimal``; the closed-loop path skips it since only ``infeasible``
        changes behavior there.
        """
        params = self.params
        x0 = state.as_array()
        u_nom = self._prev_u if self._prev_u is not None else np.zeros((self.N, NU))
        x_nom = self._rollout(x0, u_nom)
        if self._always_infeasible or self._corridor_empty(x_nom):
            self._prev_u = None
            return MpcSolution(ControlInput(0.0, 0.0), [], 0.0, "infeasible")

        best = None
        kkt_ok = False
        max_sqp = 2 if self._prev_u is not None else 3
        for _ in range(max_sqp):
            qp = self._solve_qp(x0, x_nom, u_nom, refine=refine_status)
            if qp is None:
                break
            u_sol, kkt_ok = qp
            cand = self._evaluate(x0, u_sol)
            if best is None or cand[0] < best[0]:
                best = cand
            if np.max(np.abs(u_sol - u_nom)) < 1e-3:
                break
            u_nom = u_sol
            x_nom = self._rollout(x0, u_nom)

        # the zero-input comparison point only matters for one-shot solves and
        # for transients where the QP model may be off
        if best is not None and params.a_min <= 0.0 <= params.a_max \
                and (refine_status or best[2] > BOUND_TOL):
            zero_cand = self._evaluate(x0, np.zeros((self.N, NU)))
            if zero_cand[0] < best[0]:
                best = zero_cand
        if best is None:
            self._prev_u = None
            return MpcSolution(ControlInput(0.0, 0.0), [], 0.0, "infeasible")

        _, cost, viol, u_best, states = best
        self._prev_u = u_best
        status = "optimal" if (kkt_ok and viol <= BOUND_TOL) else "max_iter"
        first = ControlInput(
            ddelta=float(np.clip(u_best[0, 0], -STEER_RATE_MAX, STEER_RATE_MAX)),
            a=float(np.clip(u_best[0, 1], params.a_min, params.a_max)))
        return MpcSolution(first_input=first, predicted_states=states,
                           cost=cost, status=status)

    # -- model ------------------------------------------------------------------

    def _rollout(self, x0: np.ndarray, u: np.ndarray) -> np.ndarray:
        """Nonlinear Euler rollout of the controller's internal model."""
        xs = np.empty((self.N + 1, NX))
        xs[0] = x0
        kap = self.ref.kappa_at
        dt = self.dt
        for i in range(self.N):
            s, n, dphi, delta, v = xs[i]
            kappa = float(kap(s))
            denom = max(1.0 - n * kappa, 0.05)
            s_dot = v * math.cos(dphi) / denom
            xs[i + 1, 0] = s + dt * s_dot
            xs[i + 1, 1] = n + dt * v * math.sin(dphi)
            xs[i + 1, 2] = dphi + dt * (v * math.tan(delta) / WHEELBASE - kappa * s_dot)
            xs[i + 1, 3] = min(max(delta + dt * u[i, 0], -DELTA_MAX), DELTA_MAX)
            xs[i + 1, 4] = v + dt * u[i, 1]
        return xs

    def _linearize(self, xs: np.ndarray, us: np.ndarray):
        """Batch Euler-discretized Jacobians along the nominal trajectory.

        kappa is frozen at the nominal arc position of each step.
        """
        n_steps = len(us)
        s, n, dphi, delta, v = (xs[:n_steps, k] for k in range(NX))
        kappa = np.asarray(self.ref.kappa_at(s))
        denom = np.maximum(1.0 - n * kappa, 0.05)
        cosd, sind = np.cos(dphi), np.sin(dphi)
        tand = np.tan(delta)
        sec2 = 1.0 + tand**2
        s_dot = v * cosd / denom
        f = np.column_stack([s_dot, v * sind,
                             v * tand / WHEELBASE - kappa * s_dot, us[:, 0], us[:, 1]])
        ds_dn = v * cosd * kappa / denom**2
        ds_dphi = -v * sind / denom
        ds_dv = cosd / denom
        jx = np.zeros((n_steps, NX, NX))
        jx[:, 0, 1], jx[:, 0, 2], jx[:, 0, 4] = ds_dn, ds_dphi, ds_dv
        jx[:, 1, 2], jx[:, 1, 4] = v * cosd, sind
        jx[:, 2, 1] = -kappa * ds_dn
        jx[:, 2, 2] = -kappa * ds_dphi
        jx[:, 2, 3] = v * sec2 / WHEELBASE
        jx[:, 2, 4] = tand / WHEELBASE - kappa * ds_dv
        a_batch = np.broadcast_to(np.eye(NX), (n_steps, NX, NX)) + self.dt * jx
        return f, a_batch

    def _corridor_empty(self, x_nom: np.ndarray) -> bool:
        eps = self.params.track_safety_margin
        s_nom = x_nom[1:, 0]
        hi = np.asarray(self.ref.d_left_at(s_nom)) - eps
        lo = -(np.asarray(self.ref.d_right_at(s_nom)) - eps)
        return bool(np.any(lo > hi))

    def _evaluate(self, x0: np.ndarray, u: np.ndarray):
        """True nonlinear cost plus L1 bound-violation score for a candidate."""
        params = self.params
        u = np.clip(u, [-STEER_RATE_MAX, params.a_min], [STEER_RATE_MAX, params.a_max])
        xs = self._rollout(x0, u)
        s, n, dphi, delta, v = (xs[1:, k] for k in range(NX))
        v_ref = reference_speed(np.asarray(self.ref.v_ref_at(s)), params)
        cost = float(
            params.qn * np.sum(n**2) + params.qv * np.sum((v - v_ref) ** 2)
            + params.qalpha * np.sum(dphi**2)
            + params.qddelta * np.sum(u[:, 0] ** 2) + params.qac * np.sum(u[:, 1] ** 2))
        eps = params.track_safety_margin
        n_hi = np.asarray(self.ref.d_left_at(s)) - eps
        n_lo = -(np.asarray(self.ref.d_right_at(s)) - eps)
        alat = v**2 * np.tan(delta) / WHEELBASE
        viol = np.concatenate([
            np.maximum(v - params.v_max, 0.0), np.maximum(params.v_min - v, 0.0),
            np.maximum(n - n_hi, 0.0), np.maximum(n_lo - n, 0.0),
            np.maximum(np.abs(delta) - DELTA_MAX, 0.0),
            np.maximum(np.abs(alat) - params.alat_max, 0.0),
        ])
        score = cost + SLACK_PENALTY * float(np.sum(viol))
        states = [VehicleState(s=float(xs[i, 0] % self.ref.total_length),
                               n=float(xs[i, 1]), dphi=float(xs[i, 2]),
                               delta=float(xs[i, 3]), v=float(xs[i, 4]))
                  for i in range(1, self.N + 1)]
        return (score, cost, float(np.max(viol)), u, states)

    # -- QP ----------------------------------------------------------------------
    # variable layout: z = [x_0..x_N | u_0..u_{N-1} | t_1..t_N (scaled by 1e-4)]

    def _build_qp(self):
        N = self.N
        params = self.params
        self._nu_off = NX * (N + 1)
        self._nt_off = self._nu_off + NU * N
        nz = self._nt_off + N
        self._nz = nz

        rows, cols, vals = [], [], []
        dyn_a_pos: list[int] = []
        alat_pos: list[int] = []

        def add(r, c, v, bucket=None):
            if bucket is not None:
                bucket.append(len(vals))
            rows.append(r)
            cols.append(c)
            vals.append(v)

        r = 0
        for k in range(NX):  # x_0 = current state
            add(r + k, k, 1.0)
        r += NX
        for i in range(N):  # x_{i+1} - A_i x_i - B_i u_i = c_i
            for k in range(NX):
                add(r + k, NX * (i + 1) + k, 1.0)
            for k in range(NX):
                for j in range(NX):
                    add(r + k, NX * i + j, 0.0, bucket=dyn_a_pos)
            # B is constant for this model: only ddelta->delta and a->v couple
            add(r + 3, self._nu_off + NU * i + 0, -self.dt)
            add(r + 4, self._nu_off + NU * i + 1, -self.dt)
            r += NX
        self._row_dyn_end = r
        for i in range(N):  # hard input bounds
            for j in range(NU):
                add(r, self._nu_off + NU * i + j, 1.0)
                r += 1
        self._row_input_end = r
        for i in range(1, N + 1):  # soft state rows, 8 per step
            xn = NX * i + 1
            xd = NX * i + 3
            xv = NX * i + 4
            tt = self._nt_off + (i - 1)
            add(r, xv, 1.0); add(r, tt, -1.0); r += 1   # v - t <= v_max
            add(r, xv, 1.0); add(r, tt, 1.0); r += 1    # v + t >= v_min
            add(r, xn, 1.0); add(r, tt, -1.0); r += 1   # n - t <= n_hi
            add(r, xn, 1.0); add(r, tt, 1.0); r += 1    # n + t >= n_lo
            add(r, xd, 1.0); add(r, tt, -1.0); r += 1   # |delta| <= delta_max
            add(r, xd, 1.0); add(r, tt, 1.0); r += 1
            add(r, xv, 0.0, bucket=alat_pos); add(r, xd, 0.0, bucket=alat_pos)
            add(r, tt, -1.0); r += 1                    # g - t <= alat_max
            add(r, xv, 0.0, bucket=alat_pos); add(r, xd, 0.0, bucket=alat_pos)
            add(r, tt, 1.0); r += 1                     # g + t >= -alat_max
        self._row_soft_end = r
        for i in range(N):  # slack nonnegativity
            add(r, self._nt_off + i, 1.0)
            r += 1
        self._m_rows = r

        self._a_data = np.asarray(vals, dtype=float)
        self._dyn_a_idx = np.asarray(dyn_a_pos, dtype=np.intp)
        self._alat_idx = np.asarray(alat_pos, dtype=np.intp)
        order = sparse.coo_matrix(
            (np.arange(len(vals), dtype=float), (np.asarray(rows), np.asarray(cols))),
            shape=(r, nz)).tocsc()
        self._perm = order.data.astype(np.intp)
        self._a_csc = sparse.csc_matrix(
            (self._a_data[self._perm].copy(), order.indices, order.indptr),
            shape=(r, nz))

        p_diag = np.full(nz, 1e-9)
        for i in range(1, N + 1):
            p_diag[NX * i + 1] = 2.0 * params.qn + 1e-9
            p_diag[NX * i + 2] = 2.0 * params.qalpha + 1e-9
            p_diag[NX * i + 4] = 2.0 * params.qv + 1e-9
        for i in range(N):
            p_diag[self._nu_off + NU * i + 0] = 2.0 * params.qddelta + 1e-9
            p_diag[self._nu_off + NU * i + 1] = 2.0 * params.qac + 1e-9
        p_diag[self._nt_off:] = SLACK_QUAD
        self._p_diag = p_diag

        self._q = np.zeros(nz)
        self._q[self._nt_off:] = SLACK_PENALTY
        self._l = np.full(r, -np.inf)
        self._u = np.full(r, np.inf)
        self._l[self._row_dyn_end:self._row_input_end] = np.tile(
            [-STEER_RATE_MAX, params.a_min], N)
        self._u[self._row_dyn_end:self._row_input_end] = np.tile(
            [STEER_RATE_MAX, params.a_max], N)
        r0 = self._row_input_end
        soft = np.arange(N)
        self._u[r0 + 8 * soft + 0] = params.v_max
        self._l[r0 + 8 * soft + 1] = params.v_min
        self._rows_nhi = r0 + 8 * soft + 2
        self._rows_nlo = r0 + 8 * soft + 3
        self._u[r0 + 8 * soft + 4] = DELTA_MAX
        self._l[r0 + 8 * soft + 5] = -DELTA_MAX
        self._rows_alat_hi = r0 + 8 * soft + 6
        self._rows_alat_lo = r0 + 8 * soft + 7
        self._l[self._row_soft_end:] = 0.0
        self._q_v_idx = NX * (1 + soft) + 4

        self._prob = osqp.OSQP()
        self._prob.setup(P=sparse.diags(p_diag, format="csc"), q=self._q,
                         A=self._a_csc, l=self._l, u=self._u, verbose=False,
                         eps_abs=1e-4, eps_rel=1e-4, polishing=True,
                         adaptive_rho_interval=25, max_iter=1000)

    def _solve_qp(self, x0: np.ndarray, x_nom: np.ndarray, u_nom: np.ndarray,
                  refine: bool = True):
        """Linearize around the nominal trajectory and solve one QP.

        Returns (inputs, kkt_ok) or None when OSQP returns no iterate.
        """
        N, dt, params = self.N, self.dt, self.params
        f, a_batch = self._linearize(x_nom, u_nom)
        # c_i = x_i + dt f_i - A_i x_i - B_i u_i ; the B u term cancels exactly
        # because f depends linearly on u through the same rows
        bu = np.zeros((N, NX))
        bu[:, 3] = dt * u_nom[:, 0]
        bu[:, 4] = dt * u_nom[:, 1]
        c = x_nom[:N] + dt * f - np.einsum("nij,nj->ni", a_batch, x_nom[:N]) - bu
        self._a_data[self._dyn_a_idx] = (-a_batch).reshape(-1)

        s_nom = x_nom[1:, 0]
        v_bar = x_nom[1:, 4]
        d_bar = x_nom[1:, 3]
        eps = params.track_safety_margin
        n_hi = np.asarray(self.ref.d_left_at(s_nom)) - eps
        n_lo = -(np.asarray(self.ref.d_right_at(s_nom)) - eps)
        v_ref = reference_speed(np.asarray(self.ref.v_ref_at(s_nom)), params)
        tand = np.tan(d_bar)
        sec2 = 1.0 + tand**2
        alpha_v = 2.0 * v_bar * tand / WHEELBASE
        alpha_d = v_bar**2 * sec2 / WHEELBASE
        g_const = v_bar**2 * tand / WHEELBASE - alpha_v * v_bar - alpha_d * d_bar
        self._a_data[self._alat_idx] = np.column_stack(
            [alpha_v, alpha_d, alpha_v, alpha_d]).reshape(-1)

        l, u, q = self._l, self._u, self._q
        l[0:NX] = x0
        u[0:NX] = x0
        l[NX:self._row_dyn_end] = c.reshape(-1)
        u[NX:self._row_dyn_end] = c.reshape(-1)
        u[self._rows_nhi] = n_hi
        l[self._rows_nlo] = n_lo
        u[self._rows_alat_hi] = params.alat_max - g_const
        l[self._rows_alat_lo] = -params.alat_max - g_const
        q[self._q_v_idx] = -2.0 * params.qv * v_ref

        self._a_csc.data[:] = self._a_data[self._perm]
        self._prob.update(q=q, l=l, u=u, Ax=self._a_csc.data)
        res = self._prob.solve(raise_error=False)
        status = res.info.status
        usable = ("solved" in status) or ("maximum iterations" in status)
        if not usable or res.x is None or not np.isfinite(res.x).all():
            return None
        z, y = res.x, res.y
        kkt_ok = self._kkt_ok(z, y)
        if refine and not kkt_ok and "solved" in status:
            refined = self._refine(z, y)
            if refined is not None:
                z, y = refined
                kkt_ok = True
        u_sol = z[self._nu_off:self._nt_off].reshape(N, NU)
        return u_sol, kkt_ok

    def _kkt_ok(self, z: np.ndarray, y: np.ndarray) -> bool:
        ax = self._a_csc @ z
        r_prim = max(np.max(ax - self._u, initial=0.0), np.max(self._l - ax, initial=0.0))
        r_dual = np.max(np.abs(self._p_diag * z + self._q + self._a_csc.T @ y))
        return bool(r_prim <= KKT_TOL and r_dual <= KKT_TOL)

    def _refine(self, z: np.ndarray, y: np.ndarray):
        """Active-set KKT refinement of an ADMM iterate.

        OSQP's own polish step rejects these saddle systems, so the active set
        is re-solved here directly. Proximity-based selection over-marks rows,
        so wrong-signed duals are dropped and the system re-solved a few times;
        the refined point is accepted only if it is primal feasible,
        sign-consistent, and beats KKT_TOL.
        """
        ax = self._a_csc @ z
        l, u = self._l, self._u
        eq = np.isfinite(u) & (u - l < 1e-12)
        tol_u = 1e-3 * (1.0 + np.abs(np.where(np.isfinite(u), u, 0.0)))
        tol_l = 1e-3 * (1.0 + np.abs(np.where(np.isfinite(l), l, 0.0)))
        act_u = ~eq & np.isfinite(u) & ((u - ax < tol_u) | (y > 1e-6))
        act_l = ~eq & np.isfinite(l) & ((ax - l < tol_l) | (y < -1e-6)) & ~act_u
        nz = self._nz
        for _ in range(4):
            act = eq | act_u | act_l
            b = np.where(act_u, u, np.where(eq, u, l))[act]
            a_act = self._a_csc[np.flatnonzero(act)].toarray()
            na = a_act.shape[0]
            kkt = np.zeros((nz + na, nz + na))
            kkt[:nz, :nz] = np.diag(self._p_diag)
            kkt[:nz, nz:] = a_act.T
            kkt[nz:, :nz] = a_act
            kkt[nz:, nz:] = -1e-12 * np.eye(na)
            rhs = np.concatenate([-self._q, b])
            try:
                sol = np.linalg.solve(kkt, rhs)
            except np.linalg.LinAlgError:
                return None
            z_r = sol[:nz]
            if not np.isfinite(z_r).all():
                return None
            y_r = np.zeros_like(y)
            y_r[act] = sol[nz:]
            bad_u = act_u & (y_r < -1e-7)
            bad_l = act_l & (y_r > 1e-7)
            if not bad_u.any() and not bad_l.any():
                return (z_r, y_r) if self._kkt_ok(z_r, y_r) else None
            act_u = act_u & ~bad_u
            act_l = act_l & ~bad_l
        return None


def solve_mpc(state: VehicleState, track: TrackGeometry, params: MpcParams,
              horizon: int = MPC_HORIZON) -> MpcSolution:
    """One-shot receding-horizon solve (cold start) from a state in the frame
    of the track's tracking reference (raceline when present)."""
    controller = MpcController(track, params, horizon=horizon)
    return controller.solve(state)
