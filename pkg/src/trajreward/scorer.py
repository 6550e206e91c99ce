"""Remote HRM scorer adapter and an in-process reference server.

Two transports share one JSON message shape:

* ``http://host:port/path``: one POST per trajectory, JSON body both ways.
* ``tcp://host:port``: one connection per trajectory; each message is a
  4-byte big-endian length followed by that many bytes of UTF-8 JSON.

Responses are validated against the verdict invariants and rejected on any
breach; nothing is coerced.
"""

from __future__ import annotations

import json
import logging
import socket
import socketserver
import struct
import threading
import time
import urllib.error
import urllib.request
from dataclasses import dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Callable
from urllib.parse import urlparse

from .errors import ProtocolViolation, ScorerUnavailable
from .rewards import HrmVerdict, rule_based_hrm, scorer_request, validate_verdict, verdict_from_json
from .trajectory import Outcome, StepRecord, Trajectory

log = logging.getLogger(__name__)

_LEN = struct.Struct(">I")
MAX_MESSAGE = 64 * 1024 * 1024


def send_frame(sock: socket.socket, obj: dict) -> None:
    data = json.dumps(obj, ensure_ascii=False).encode("utf-8")
    sock.sendall(_LEN.pack(len(data)) + data)


def _recv_exact(sock: socket.socket, n: int) -> bytes:
    buf = bytearray()
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            raise ConnectionError("stream closed mid-frame")
        buf += chunk
    return bytes(buf)


def recv_frame(sock: socket.socket) -> dict:
    (n,) = _LEN.unpack(_recv_exact(sock, _LEN.size))
    if n > MAX_MESSAGE:
        raise ProtocolViolation(f"frame of {n} bytes exceeds limit")
    return json.loads(_recv_exact(sock, n).decode("utf-8"))


@dataclass
class ExternalScorer:
    """Callable scorer that forwards trajectories to a remote HRM."""

    endpoint: str
    timeout: float = 10.0
    retries: int = 2
    backoff: float = 0.05

    def __post_init__(self):
        url = urlparse(self.endpoint)
        if url.scheme not in ("http", "https", "tcp"):
            raise ValueError(f"unsupported scorer endpoint {self.endpoint!r}")
        self._url = url

    def _roundtrip(self, payload: dict) -> dict:
        if self._url.scheme == "tcp":
            with socket.create_connection((self._url.hostname, self._url.port), self.timeout) as s:
                s.settimeout(self.timeout)
                send_frame(s, payload)
                return recv_frame(s)
        req = urllib.request.Request(
            self.endpoint,
            data=json.dumps(payload, ensure_ascii=False).encode("utf-8"),
            headers={"Content-Type": "application/json"},
            method="POST",
        )
        with urllib.request.urlopen(req, timeout=self.timeout) as resp:
            return json.loads(resp.read().decode("utf-8"))

    def __call__(self, t: Trajectory) -> HrmVerdict:
        payload = scorer_request(t)
        last: Exception | None = None
        for attempt in range(self.retries + 1):
            try:
                raw = self._roundtrip(payload)
                break
            except (OSError, urllib.error.URLError, ConnectionError) as exc:
                last = exc
                log.debug("scorer attempt %d failed: %s", attempt + 1, exc)
                time.sleep(self.backoff * (attempt + 1))
            except (json.JSONDecodeError, UnicodeDecodeError) as exc:
                raise ProtocolViolation(f"undecodable scorer response: {exc}") from exc
        else:
            raise ScorerUnavailable(f"{self.endpoint}: {last}")

        try:
            verdict = verdict_from_json(raw)
        except (KeyError, TypeError, ValueError) as exc:
            raise ProtocolViolation(f"bad scorer response {raw!r}: {exc}") from exc
        problems = validate_verdict(verdict, len(t.steps))
        if problems:
            raise ProtocolViolation("; ".join(problems))
        return verdict


def external_scorer_verdict(t: Trajectory, endpoint: str, **kwargs) -> HrmVerdict:
    return ExternalScorer(endpoint, **kwargs)(t)


# ---------------------------------------------------------------------------
# reference server side


def trajectory_from_request(req: dict) -> Trajectory:
    steps = tuple(
        StepRecord(
            index=i,
            thought=s.get("thought") or "",
            action="python" if s.get("action_input") is not None else None,
            action_input=s.get("action_input"),
            observation=s.get("observation"),
            outcome=Outcome(s["outcome"]),
        )
        for i, s in enumerate(req["steps"], start=1)
    )
    return Trajectory(steps=steps, problem_id=req.get("problem_id", ""), raw_text=req.get("raw_text", ""))


Handler = Callable[[dict], dict]


def rule_handler(req: dict) -> dict:
    return rule_based_hrm(trajectory_from_request(req)).to_json()


class _StreamHandler(socketserver.BaseRequestHandler):
    def handle(self):
        req = recv_frame(self.request)
        send_frame(self.request, self.server.score_fn(req))


class StreamScorerServer(socketserver.ThreadingTCPServer):
    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, addr=("127.0.0.1", 0), score_fn: Handler = rule_handler):
        super().__init__(addr, _StreamHandler)
        self.score_fn = score_fn

    @property
    def endpoint(self) -> str:
        host, port = self.server_address[:2]
        return f"tcp://{host}:{port}"


class _HttpHandler(BaseHTTPRequestHandler):
    def do_POST(self):
        n = int(self.headers.get("Content-Length", 0))
        req = json.loads(self.rfile.read(n).decode("utf-8"))
        body = json.dumps(self.server.score_fn(req)).encode("utf-8")
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def log_message(self, fmt, *args):
        log.debug(fmt, *args)


class HttpScorerServer(ThreadingHTTPServer):
    daemon_threads = True

    def __init__(self, addr=("127.0.0.1", 0), score_fn: Handler = rule_handler):
        super().__init__(addr, _HttpHandler)
        self.score_fn = score_fn

    @property
    def endpoint(self) -> str:
        host, port = self.server_address[:2]
        return f"http://{host}:{port}/score"


def serve_in_thread(server) -> threading.Thread:
    th = threading.Thread(target=server.serve_forever, daemon=True)
    th.start()
    return th
