"""Rollout scoring service: tasks out, completion groups in, rewards back.

The transport-independent core is :class:`RolloutService`; two bindings share
its JSON schema byte for byte:

  HTTP    POST /task /score /episode (port from --port or DRIVERL_PORT)
  socket  one request per line over a Unix stream socket, each line
          ``{"endpoint": "task"|"score"|"episode", ...request fields...}``

Wire schemas:

  task request     {"family": "mpc"|"decision", "seed": int}
  task response    {"task_id", "family", "prompt"}
  score request    {"task_id", "completions": [str, ...]}
  score response   {"rewards": [{r_drive?, r_fmt, r_param?, r_accuracy?,
                                 total, extraction_failure}, ...],
                    "e_mpc"?, "e_llm_per_completion"?}
  episode request  {"params": {...}, "behavior_id", "map_id"}

Every task is scored at most once: replays return the stored response bytes.
Malformed requests produce a structured ``{"error": {code, message}}`` object,
never a dropped connection.
"""

from __future__ import annotations

import json
import socketserver
import threading
import time
from dataclasses import dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

from . import maps
from .behaviors import (AdherenceLabel, BehaviorSpec, behavior_by_id,
                        sample_behavior)
from .dataset import (DATASET_STYLES, DecisionInstance, generate_dataset,
                      instance_behavior)
from .episodes import EpisodeEnvironment
from .mpc import InvalidParameterError, PARAM_SCHEMA, validate_params
from .rag import DEFAULT_K, MemoryStore, builtin_memories
from .rewards import score_decision, score_mpc_completion
from .simulator import LapLimits

TASK_TTL_S = 3600.0
GROUP_CAP = 64
DEFAULT_HTTP_PORT = 8732


class ProtocolError(Exception):
    def __init__(self, code: str, message: str, http_status: int = 400):
        super().__init__(message)
        self.code = code
        self.message = message
        self.http_status = http_status

    def body(self) -> bytes:
        return json.dumps({"error": {"code": self.code, "message": self.message}}).encode()


@dataclass
class _Task:
    task_id: str
    family: str
    map_id: str
    prompt: str
    created_at: float
    behavior: BehaviorSpec | None = None
    label: AdherenceLabel | None = None
    response: bytes | None = None


def render_formulation() -> str:
    """Human-readable controller formulation derived from the parameter schema."""
    lines = [
        "minimize over the horizon: qn*n^2 + qv*(v - v_ref)^2 + qalpha*dphi^2 "
        "+ qac*a^2 + qddelta*ddelta^2, subject to v in [v_min, v_max], "
        "a in [a_min, a_max], the lateral offset n within the track boundaries "
        "inflated by track_safety_margin, and |lateral acceleration| <= alat_max.",
        "Tunable parameters (name [unit], default, range):",
    ]
    for spec in PARAM_SCHEMA:
        lines.append(f"  {spec.name} [{spec.unit}]: default {spec.default:g}, "
                     f"range [{spec.min:g}, {spec.max:g}]")
    return "\n".join(lines)


def render_mpc_prompt(behavior: BehaviorSpec, memories: list) -> str:
    mem_text = "\n\n".join(f"# Memory Entry {m.id}:\n{m.text}" for m in memories)
    return (
        "Adapt the tuneable parameters of the MPC so that the car achieves the "
        f"following: \"{behavior.prompt_text}\".\n"
        f"This is the MPC formulation:\n{render_formulation()}\n\n"
        f"These are memories from previous experience:\n{mem_text}\n\n"
        "Return format:\n"
        "new_mpc_params = {\n"
        "    param1: new_value1,\n"
        "    ...\n"
        "}\n"
    )


def render_decision_prompt(instance: DecisionInstance, hints: list) -> str:
    rows = ["      t       s       d   delta       v       a  d_center   a_lat"]
    for r in instance.history.rows:
        rows.append("%7.2f %7.2f %7.3f %7.3f %7.2f %7.2f %9.3f %7.2f"
                    % (r[0], r[1], r[2], r[4], r[5], r[7], r[8], r[9]))
    hint_text = "\n\n".join(f"# Hint {h.id}:\n{h.text}" for h in hints)
    return (
        f"The human asks: \"{instance.prompt}\"\n"
        "Decide whether the car is adhering to this behavior given the robot "
        "state history below (samples 0.1 s apart; d is the lateral distance "
        "to the racing line, d_center to the centerline).\n"
        f"{chr(10).join(rows)}\n\n"
        f"These are hints from previous experience:\n{hint_text}\n\n"
        "Structure your response with <reasoning>...</reasoning> followed by "
        "<answer>yes</answer> or <answer>no</answer>.\n"
    )


class RolloutService:
    """Thread-safe scoring core shared by the HTTP and socket bindings."""

    def __init__(self, default_map: str = maps.TRAIN_MAP,
                 task_ttl: float = TASK_TTL_S, group_cap: int = GROUP_CAP,
                 retrieval_k: int = DEFAULT_K,
                 decision_corpus: list[DecisionInstance] | None = None,
                 decision_per_style: int = 3,
                 limits: LapLimits = LapLimits(),
                 clock=time.monotonic):
        self.default_map = maps.canonical_map_id(default_map)
        self.task_ttl = task_ttl
        self.group_cap = group_cap
        self.k = retrieval_k
        self.limits = limits
        self.clock = clock
        self._mpc_memories: MemoryStore = builtin_memories("mpc_memory")
        self._hints: MemoryStore = builtin_memories("decision_hint")
        self._envs: dict[str, EpisodeEnvironment] = {}
        self._tasks: dict[str, _Task] = {}
        self._counter = 0
        self._lock = threading.Lock()
        self._corpus = decision_corpus
        self._decision_per_style = decision_per_style
        self._corpus_lock = threading.Lock()

    # -- shared state -----------------------------------------------------------

    def env(self, map_id: str) -> EpisodeEnvironment:
        key = maps.canonical_map_id(map_id)
        with self._lock:
            if key not in self._envs:
                self._envs[key] = EpisodeEnvironment(maps.get_map(key),
                                                     limits=self.limits)
            return self._envs[key]

    def corpus(self) -> list[DecisionInstance]:
        with self._corpus_lock:
            if self._corpus is None:
                self._corpus = generate_dataset(
                    maps.get_map(self.default_map), DATASET_STYLES,
                    per_style=self._decision_per_style, seed=0, limits=self.limits)
            return self._corpus

    def _new_task(self, **kw) -> _Task:
        with self._lock:
            self._counter += 1
            if self._counter % 256 == 0:  # registry hygiene on long runs
                now = self.clock()
                expired = [tid for tid, t in self._tasks.items()
                           if now - t.created_at > self.task_ttl]
                for tid in expired:
                    del self._tasks[tid]
            task = _Task(task_id=f"task-{self._counter:08d}",
                         created_at=self.clock(), **kw)
            self._tasks[task.task_id] = task
            return task

    # -- handlers ----------------------------------------------------------------

    def handle_task_request(self, payload: dict) -> bytes:
        family = payload.get("family")
        seed = payload.get("seed", 0)
        if family not in ("mpc", "decision"):
            raise ProtocolError("unknown_family", f"unknown family '{family}'")
        if not isinstance(seed, int):
            raise ProtocolError("bad_seed", "seed must be an integer")
        if family == "mpc":
            behavior = sample_behavior("train", seed % 4, seed)
            memories = self._mpc_memories.retrieve(behavior.prompt_text, self.k)
            prompt = render_mpc_prompt(behavior, memories)
            task = self._new_task(family=family, map_id=self.default_map,
                                  prompt=prompt, behavior=behavior)
        else:
            corpus = self.corpus()
            instance = corpus[seed % len(corpus)]
            hints = self._hints.retrieve(instance.prompt, self.k)
            prompt = render_decision_prompt(instance, hints)
            task = self._new_task(
                family=family, map_id=self.default_map, prompt=prompt,
                behavior=instance_behavior(instance),
                label=AdherenceLabel(instance.label, "stored", 0.0))
        return json.dumps({"task_id": task.task_id, "family": task.family,
                           "prompt": task.prompt}).encode()

    def create_behavior_task(self, behavior_id: str, map_id: str | None = None) -> dict:
        """Evaluation-harness entry: a task for one specific behavior."""
        behavior = behavior_by_id(behavior_id)
        memories = self._mpc_memories.retrieve(behavior.prompt_text, self.k)
        task = self._new_task(family="mpc",
                              map_id=maps.canonical_map_id(map_id or self.default_map),
                              prompt=render_mpc_prompt(behavior, memories),
                              behavior=behavior)
        return {"task_id": task.task_id, "family": task.family, "prompt": task.prompt}

    def _get_task(self, task_id) -> _Task:
        with self._lock:
            task = self._tasks.get(task_id)
        if task is None:
            raise ProtocolError("unknown_task", f"unknown task_id '{task_id}'",
                                http_status=404)
        if self.clock() - task.created_at > self.task_ttl:
            raise ProtocolError("expired_task", f"task '{task_id}' expired",
                                http_status=404)
        return task

    def handle_score_request(self, payload: dict) -> bytes:
        task = self._get_task(payload.get("task_id"))
        completions = payload.get("completions")
        if not isinstance(completions, list) or not completions:
            raise ProtocolError("empty_group", "completions must be a non-empty list")
        if len(completions) > self.group_cap:
            raise ProtocolError("group_too_large",
                                f"group size {len(completions)} exceeds cap {self.group_cap}")
        if not all(isinstance(c, str) for c in completions):
            raise ProtocolError("bad_completion", "completions must be strings")
        with self._lock:
            if task.response is not None:
                return task.response
        body = self._score(task, completions)
        with self._lock:
            if task.response is None:
                task.response = body
            return task.response

    def _score(self, task: _Task, completions: list[str]) -> bytes:
        rewards: list[dict] = []
        if task.family == "decision":
            for text in completions:
                rewards.append(score_decision(text, task.label).to_dict())
            return json.dumps({"rewards": rewards}).encode()
        env = self.env(task.map_id)
        e_llm: list[float | None] = []
        e_mpc = env.baseline_rmse(task.behavior)
        for text in completions:
            breakdown, detail = score_mpc_completion(text, task.behavior, env)
            rewards.append(breakdown.to_dict())
            e_llm.append(detail.get("e_llm"))
        return json.dumps({"rewards": rewards, "e_mpc": e_mpc,
                           "e_llm_per_completion": e_llm}).encode()

    def handle_episode_request(self, payload: dict) -> bytes:
        raw = payload.get("params")
        behavior_id = payload.get("behavior_id")
        map_id = payload.get("map_id", self.default_map)
        if not isinstance(raw, dict):
            raise ProtocolError("bad_params", "params must be a mapping")
        try:
            behavior = behavior_by_id(behavior_id)
        except KeyError:
            raise ProtocolError("unknown_behavior",
                                f"unknown behavior_id '{behavior_id}'") from None
        try:
            env = self.env(map_id)
        except maps.UnknownMapError as exc:
            raise ProtocolError("unknown_map", str(exc)) from None
        try:
            params = validate_params(raw)
        except InvalidParameterError as exc:
            raise ProtocolError("invalid_params", str(exc))
        episode = env.run_episode(params, behavior)
        return json.dumps({
            "e_llm": episode.e_llm, "e_mpc": episode.e_mpc,
            "r_drive": episode.r_drive,
            "trace_ref": {"terminated_by": episode.trace.terminated_by,
                          "lap_time": episode.trace.lap_time,
                          "samples": len(episode.trace.samples)},
        }).encode()

    def dispatch(self, endpoint: str, payload: dict) -> bytes:
        endpoint = endpoint.strip("/")
        if endpoint == "task":
            return self.handle_task_request(payload)
        if endpoint == "score":
            return self.handle_score_request(payload)
        if endpoint == "episode":
            return self.handle_episode_request(payload)
        raise ProtocolError("unknown_endpoint", f"unknown endpoint '{endpoint}'",
                            http_status=404)


# -- HTTP binding -------------------------------------------------------------------


class _Handler(BaseHTTPRequestHandler):
    service: RolloutService

    def log_message(self, *args):  # tests stay quiet
        pass

    def do_POST(self):
        try:
            length = int(self.headers.get("Content-Length", "0"))
            raw = self.rfile.read(length)
            try:
                payload = json.loads(raw.decode("utf-8"))
                if not isinstance(payload, dict):
                    raise ValueError("payload must be a JSON object")
            except (ValueError, UnicodeDecodeError) as exc:
                raise ProtocolError("bad_json", f"malformed request body: {exc}")
            body = self.service.dispatch(self.path, payload)
            self._reply(200, body)
        except ProtocolError as exc:
            self._reply(exc.http_status, exc.body())
        except Exception as exc:  # totality: never drop a request
            err = ProtocolError("internal_error", f"{type(exc).__name__}: {exc}", 500)
            self._reply(500, err.body())

    def _reply(self, status: int, body: bytes):
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)


def make_http_server(service: RolloutService, port: int = 0,
                     host: str = "127.0.0.1") -> ThreadingHTTPServer:
    handler = type("BoundHandler", (_Handler,), {"service": service})
    return ThreadingHTTPServer((host, port), handler)


# -- stream-socket binding -------------------------------------------------------------


class _SocketHandler(socketserver.StreamRequestHandler):
    service: RolloutService

    def handle(self):
        for raw in self.rfile:
            line = raw.strip()
            if not line:
                continue
            try:
                try:
                    payload = json.loads(line.decode("utf-8"))
                    if not isinstance(payload, dict):
                        raise ValueError("payload must be a JSON object")
                except (ValueError, UnicodeDecodeError) as exc:
                    raise ProtocolError("bad_json", f"malformed request line: {exc}")
                endpoint = payload.pop("endpoint", None)
                if endpoint is None:
                    raise ProtocolError("missing_endpoint",
                                        "socket requests need an 'endpoint' field")
                body = self.service.dispatch(str(endpoint), payload)
            except ProtocolError as exc:
                body = exc.body()
            except Exception as exc:
                body = ProtocolError("internal_error",
                                     f"{type(exc).__name__}: {exc}", 500).body()
            self.wfile.write(body + b"\n")
            self.wfile.flush()


class _ThreadingUnixServer(socketserver.ThreadingMixIn, socketserver.UnixStreamServer):
    daemon_threads = True
    allow_reuse_address = True


def make_socket_server(service: RolloutService, path: str) -> _ThreadingUnixServer:
    handler = type("BoundSocketHandler", (_SocketHandler,), {"service": service})
    return _ThreadingUnixServer(path, handler)
