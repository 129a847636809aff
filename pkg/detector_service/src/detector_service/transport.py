"""Transports for the detection service: stdio line protocol and HTTP."""

from __future__ import annotations

import json
import sys
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

from .service import DetectorService


def serve_stdio(service: DetectorService) -> None:
    """One JSON request per stdin line, one JSON response per stdout line."""
    for line in sys.stdin:
        line = line.strip()
        if not line:
            continue
        try:
            msg = json.loads(line)
        except json.JSONDecodeError as exc:
            sys.stdout.write(json.dumps({"id": None, "detections": [], "error": f"bad JSON: {exc}"}) + "\n")
            sys.stdout.flush()
            continue
        response = service.handle_request(msg)
        sys.stdout.write(json.dumps(response) + "\n")
        sys.stdout.flush()


def serve_http(service: DetectorService, port: int) -> None:
    """POST /detect with the protocol body; inference is serialized."""
    lock = threading.Lock()

    class Handler(BaseHTTPRequestHandler):
        def do_POST(self):
            if self.path != "/detect":
                self.send_error(404)
                return
            length = int(self.headers.get("Content-Length", 0))
            body = self.rfile.read(length)
            try:
                msg = json.loads(body)
            except json.JSONDecodeError as exc:
                response = {"id": None, "detections": [], "error": f"bad JSON: {exc}"}
            else:
                with lock:
                    response = service.handle_request(msg)
            data = json.dumps(response).encode()
            self.send_response(200)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(data)))
            self.end_headers()
            self.wfile.write(data)

        def log_message(self, *args):
            pass

    server = ThreadingHTTPServer(("127.0.0.1", port), Handler)
    print(f"LISTENING {server.server_address[1]}", file=sys.stderr, flush=True)
    server.serve_forever()
