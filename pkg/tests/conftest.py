"""Shared fixtures: a llama.cpp-style stub completion server."""

from __future__ import annotations

import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest


class StubConfig:
    """Mutable knobs for the stub server; tests tweak then issue requests."""

    def __init__(self):
        self.tokens = ["Hello", " from", " the", " stub"]
        self.timings = {"prompt_n": 12, "prompt_ms": 165.48,
                        "predicted_n": 4, "predicted_ms": 955.72}
        self.stopped_limit = False
        self.model_name = "stub-model"


def _make_handler(config: StubConfig):
    class Handler(BaseHTTPRequestHandler):
        def log_message(self, *args):
            pass

        def do_GET(self):
            if self.path == "/health":
                self._json({"status": "ok"})
            elif self.path == "/v1/models":
                self._json({"data": [{"id": config.model_name}]})
            else:
                self.send_error(404)

        def do_POST(self):
            if self.path != "/completion":
                self.send_error(404)
                return
            length = int(self.headers.get("Content-Length", 0))
            json.loads(self.rfile.read(length))
            self.send_response(200)
            self.send_header("Content-Type", "text/event-stream")
            self.end_headers()
            for token in config.tokens:
                chunk = {"content": token, "stop": False}
                self.wfile.write(f"data: {json.dumps(chunk)}\n\n".encode())
            final = {"content": "", "stop": True,
                     "stopped_limit": config.stopped_limit}
            if config.timings is not None:
                final["timings"] = config.timings
            self.wfile.write(f"data: {json.dumps(final)}\n\n".encode())

        def _json(self, payload):
            body = json.dumps(payload).encode()
            self.send_response(200)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)

    return Handler


@pytest.fixture
def stub_server():
    config = StubConfig()
    server = ThreadingHTTPServer(("127.0.0.1", 0), _make_handler(config))
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield f"http://127.0.0.1:{server.server_port}", config
    server.shutdown()
    server.server_close()
