"""Shared test fixtures: a scriptable HTTP server for backend tests."""

from __future__ import annotations

import json
import threading
from collections import deque
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest


class ScriptedServer:
    """In-process HTTP server whose responses are queued per route.

    script(route, ...) enqueues one response; set_default(route, fn) handles
    anything beyond the queue, where fn(body) returns (status, payload).
    Payloads that are dicts are sent as JSON; strings are sent verbatim
    (for non-JSON-body tests). Every request is recorded as (route, body).
    """

    def __init__(self):
        self._scripts: dict[str, deque] = {}
        self._defaults: dict[str, callable] = {}
        self.requests: list[tuple[str, dict | None]] = []
        self._lock = threading.Lock()

        owner = self

        class Handler(BaseHTTPRequestHandler):
            def log_message(self, *args):
                pass

            def do_POST(self):
                length = int(self.headers.get("Content-Length", 0))
                raw = self.rfile.read(length)
                try:
                    body = json.loads(raw) if raw else None
                except json.JSONDecodeError:
                    body = None
                with owner._lock:
                    owner.requests.append((self.path, body))
                    queue = owner._scripts.get(self.path)
                    if queue:
                        status, payload = queue.popleft()
                    elif self.path in owner._defaults:
                        status, payload = owner._defaults[self.path](body)
                    else:
                        status, payload = 404, {"error": "not scripted"}
                if isinstance(payload, dict):
                    blob = json.dumps(payload).encode("utf-8")
                    ctype = "application/json"
                else:
                    blob = str(payload or "").encode("utf-8")
                    ctype = "text/plain"
                self.send_response(status)
                self.send_header("Content-Type", ctype)
                self.send_header("Content-Length", str(len(blob)))
                self.end_headers()
                self.wfile.write(blob)

        self._server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self._thread = threading.Thread(
            target=self._server.serve_forever, daemon=True
        )
        self._thread.start()

    @property
    def url(self) -> str:
        host, port = self._server.server_address
        return f"http://{host}:{port}"

    def script(self, route: str, status: int = 200, payload=None, repeat: int = 1):
        queue = self._scripts.setdefault(route, deque())
        for _ in range(repeat):
            queue.append((status, payload))

    def set_default(self, route: str, fn) -> None:
        self._defaults[route] = fn

    def calls(self, route: str) -> list:
        return [body for path, body in self.requests if path == route]

    def close(self) -> None:
        self._server.shutdown()
        self._server.server_close()
        self._thread.join(timeout=5)


@pytest.fixture
def scripted_server():
    server = ScriptedServer()
    yield server
    server.close()
