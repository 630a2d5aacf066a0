"""HTTP front end for the simulator: ``POST /simulate`` and ``GET /health``."""
from __future__ import annotations

import json
import logging
import threading
from http import HTTPStatus
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

from seal import __version__
from seal.gateway import GatewayError
from seal.schema import canonical_json
from seal.simulator.core import UNAVAILABLE, SimRequest, Simulator, UnknownApi

log = logging.getLogger(__name__)

MAX_BODY = 1 << 20


class SimulatorServer(ThreadingHTTPServer):
    daemon_threads = True

    def __init__(self, address: tuple[str, int], simulator: Simulator):
        self.simulator = simulator
        super().__init__(address, _Handler)

    @property
    def url(self) -> str:
        host, port = self.server_address[:2]
        return f"http://{host}:{port}"


class _Handler(BaseHTTPRequestHandler):
    server: SimulatorServer

    def log_message(self, fmt: str, *args) -> None:
        log.debug("%s " + fmt, self.address_string(), *args)

    def _send(self, status: int, doc: dict, headers: dict[str, str] | None = None) -> None:
        body = canonical_json(doc)
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        for k, v in (headers or {}).items():
            self.send_header(k, v)
        self.end_headers()
        self.wfile.write(body)

    def do_GET(self) -> None:
        if self.path != "/health":
            self._send(HTTPStatus.NOT_FOUND, {"error": f"no route {self.path}"})
            return
        sim = self.server.simulator
        self._send(HTTPStatus.OK, {"status": "ok", "version": __version__,
                                   "simulator_model": sim.model, "apis": len(sim.apis)})

    def do_POST(self) -> None:
        if self.path != "/simulate":
            self._send(HTTPStatus.NOT_FOUND, {"error": f"no route {self.path}"})
            return
        length = int(self.headers.get("Content-Length") or 0)
        if length > MAX_BODY:
            self._send(HTTPStatus.REQUEST_ENTITY_TOO_LARGE, {"error": "request body too large"})
            return
        try:
            req = SimRequest.from_json(json.loads(self.rfile.read(length) or b"null"))
        except ValueError as exc:
            self._send(HTTPStatus.BAD_REQUEST, {"error": str(exc)})
            return
        try:
            resp = self.server.simulator.simulate(req)
        except UnknownApi:
            self._send(HTTPStatus.NOT_FOUND, {"error": f"unknown api_id {req.api_id!r}"})
            return
        except GatewayError as exc:  # strict-replay miss
            log.warning("simulate %s: %s", req.api_id, exc)
            self._send(HTTPStatus.BAD_GATEWAY, {"error": UNAVAILABLE, "response": ""})
            return
        status = HTTPStatus.BAD_GATEWAY if resp.error == UNAVAILABLE else HTTPStatus.OK
        self._send(status, resp.envelope(), {"X-Seal-Cache": "hit" if resp.cached else "miss"})


def serve_http(simulator: Simulator, host: str = "127.0.0.1", port: int = 8080) -> SimulatorServer:
    """Bind the service; call ``serve_forever`` (or :func:`start_background`) to run it."""
    return SimulatorServer((host, port), simulator)


def start_background(server: SimulatorServer) -> threading.Thread:
    thread = threading.Thread(target=server.serve_forever, name="seal-simulator", daemon=True)
    thread.start()
    return thread
