"""Transport client for the rollout protocol.

Talks JSON to the rollout service over HTTP (``/task``, ``/score``,
``/episode``) or over its Unix stream socket (one request per line with an
``endpoint`` field). Transport failures are retried; the server's at-most-once
scoring with stored-response replay makes score retries safe.
"""

from __future__ import annotations

import json
import socket
import time

import requests


class TransportError(RuntimeError):
    """Endpoint unreachable after retries."""


class ProtocolError(RuntimeError):
    """The server answered with a structured error object."""

    def __init__(self, code: str, message: str):
        super().__init__(f"{code}: {message}")
        self.code = code


class RolloutClient:
    """Client for one rollout-service endpoint (HTTP or Unix socket)."""

    def __init__(self, base_url: str | None = None, socket_path: str | None = None,
                 timeout: float = 120.0, retries: int = 3, retry_wait: float = 0.5):
        if (base_url is None) == (socket_path is None):
            raise ValueError("need exactly one of base_url or socket_path")
        self.base_url = base_url.rstrip("/") if base_url else None
        self.socket_path = socket_path
        self.timeout = timeout
        self.retries = retries
        self.retry_wait = retry_wait
        self._session = requests.Session() if base_url else None

    # -- endpoints ---------------------------------------------------------------

    def request_task(self, family: str, seed: int) -> dict:
        return self._call("task", {"family": family, "seed": seed})

    def score(self, task_id: str, completions: list[str]) -> dict:
        return self._call("score", {"task_id": task_id, "completions": completions})

    def episode(self, params: dict, behavior_id: str, map_id: str) -> dict:
        return self._call("episode", {"params": params, "behavior_id": behavior_id,
                                      "map_id": map_id})

    # -- transport ---------------------------------------------------------------

    def _call(self, endpoint: str, payload: dict) -> dict:
        last: Exception | None = None
        for attempt in range(self.retries):
            try:
                if self.base_url:
                    doc = self._http(endpoint, payload)
                else:
                    doc = self._socket(endpoint, payload)
            except (requests.RequestException, OSError, ValueError) as exc:
                last = exc
                time.sleep(self.retry_wait * (attempt + 1))
                continue
            if isinstance(doc, dict) and "error" in doc:
                err = doc["error"]
                raise ProtocolError(err.get("code", "error"),
                                    err.get("message", str(err)))
            return doc
        raise TransportError(f"{endpoint} unreachable after "
                             f"{self.retries} attempts: {last}")

    def _http(self, endpoint: str, payload: dict) -> dict:
        resp = self._session.post(f"{self.base_url}/{endpoint}", json=payload,
                                  timeout=self.timeout)
        return resp.json()

    def _socket(self, endpoint: str, payload: dict) -> dict:
        line = dict(payload)
        line["endpoint"] = endpoint
        with socket.socket(socket.AF_UNIX, socket.SOCK_STREAM) as s:
            s.settimeout(self.timeout)
            s.connect(self.socket_path)
            fh = s.makefile("rwb")
            fh.write(json.dumps(line).encode() + b"\n")
            fh.flush()
            raw = fh.readline()
        if not raw:
            raise OSError("connection closed without a response")
        return json.loads(raw)
