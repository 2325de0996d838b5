"""HTTP scoring endpoint for a trained scorer.

GET /predict takes the six wire parameters (tmb, psth, albumin, nlr, age,
cancer_type), builds the one-hot feature row, and returns the score rounded
to a configured number of decimals; GET /health reports liveness.  Malformed
queries get a 400 naming the offending field.  Request parameters and scores
are never logged: the server keeps aggregate counters only.

The served model is immutable, so the threaded server handles concurrent
requests without locking around inference.
"""

from __future__ import annotations

import json
import threading
import urllib.parse
import urllib.request
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np

from .cohorts import N_FEATURES, N_TYPES, TYPE_SLICE
from .predictors import predict_scores

WIRE_PARAMS = ("tmb", "psth", "albumin", "nlr", "age", "cancer_type")


class WireError(ValueError):
    """Bad request parameter; the message names the field."""

    def __init__(self, message: str, fields: str):
        super().__init__(message)
        self.fields = fields


def wire_feature_row(values: dict) -> np.ndarray:
    """Raw feature row from already-typed wire parameter values."""
    row = np.zeros(N_FEATURES, dtype=np.float64)
    row[0] = values["tmb"]
    row[1] = values["psth"]
    row[2] = values["albumin"]
    row[3] = values["nlr"]
    row[4] = values["age"]
    row[TYPE_SLICE.start + int(values["cancer_type"]) - 1] = 1.0
    return row


def parse_wire_params(query: dict) -> np.ndarray:
    """Validate a parsed query string and build the raw feature row."""
    values = {}
    for name in WIRE_PARAMS:
        if name not in query or not query[name]:
            raise WireError(f"missing parameter: {name}", name)
        if len(query[name]) > 1:
            raise WireError(f"repeated parameter: {name}", name)
        try:
            v = float(query[name][0])
        except ValueError:
            raise WireError(f"invalid value for parameter: {name}", name) from None
        if not np.isfinite(v):
            raise WireError(f"invalid value for parameter: {name}", name)
        values[name] = v
    if values["psth"] not in (0.0, 1.0):
        raise WireError("invalid value for parameter: psth (must be 0 or 1)", "psth")
    t = values["cancer_type"]
    if t != int(t) or not 1 <= int(t) <= N_TYPES:
        raise WireError(
            f"parameter cancer_type out of range (integer 1..{N_TYPES})", "cancer_type"
        )
    return wire_feature_row(values)


class _Handler(BaseHTTPRequestHandler):
    def _send(self, code: int, payload: dict) -> None:
        body = json.dumps(payload).encode()
        self.send_response(code)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def _count(self, key: str) -> None:
        with self.server.counter_lock:
            self.server.counters[key] += 1

    def do_GET(self):
        parsed = urllib.parse.urlparse(self.path)
        if parsed.path == "/health":
            self._count("health")
            self._send(200, {"status": "ok"})
            return
        if parsed.path != "/predict":
            self._count("errors")
            self._send(404, {"error": "not found"})
            return
        try:
            row = parse_wire_params(urllib.parse.parse_qs(parsed.query, keep_blank_values=True))
        except WireError as exc:
            self._count("errors")
            self._send(400, {"error": str(exc)})
            return
        try:
            p = float(predict_scores(self.server.model, row[None, :])[0])
        except Exception:
            self._count("errors")
            self._send(500, {"error": "internal error"})
            return
        self._count("predict")
        self._send(200, {"probability": round(p, self.server.decimals)})

    def log_message(self, fmt, *args):
        pass


class ModelServer:
    """Threaded endpoint around an immutable scorer; use as a context manager."""

    def __init__(self, model, decimals: int = 4, host: str = "127.0.0.1", port: int = 0):
        if decimals < 1:
            raise ValueError("decimals must be at least 1")
        self._httpd = ThreadingHTTPServer((host, port), _Handler)
        self._httpd.daemon_threads = True
        self._httpd.model = model
        self._httpd.decimals = int(decimals)
        self._httpd.counters = {"predict": 0, "health": 0, "errors": 0}
        self._httpd.counter_lock = threading.Lock()
        self._thread = None

    @property
    def address(self) -> tuple:
        return self._httpd.server_address

    @property
    def url(self) -> str:
        host, port = self.address[0], self.address[1]
        return f"http://{host}:{port}"

    @property
    def request_counts(self) -> dict:
        with self._httpd.counter_lock:
            return dict(self._httpd.counters)

    def start(self) -> "ModelServer":
        if self._thread is not None:
            raise RuntimeError("server already started")
        self._thread = threading.Thread(target=self._httpd.serve_forever, daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        if self._thread is None:
            return
        self._httpd.shutdown()
        self._httpd.server_close()
        self._thread.join(timeout=5)
        self._thread = None

    def __enter__(self) -> "ModelServer":
        return self.start()

    def __exit__(self, *exc):
        self.stop()


def endpoint_client(base_url: str, timeout: float = 10.0):
    """Callable mapping a wire-parameter dict to the served probability."""

    def query(params: dict) -> float:
        qs = urllib.parse.urlencode({k: repr(v) if isinstance(v, float) else v for k, v in params.items()})
        with urllib.request.urlopen(f"{base_url}/predict?{qs}", timeout=timeout) as resp:
            payload = json.loads(resp.read().decode())
        return float(payload["probability"])

    return query


def serve_blocking(model, decimals: int, host: str, port: int) -> None:
    """Run the endpoint until interrupted (CLI entry)."""
    server = ModelServer(model, decimals=decimals, host=host, port=port)
    host, bound_port = server.address[0], server.address[1]
    print(f"serving on http://{host}:{bound_port} (decimals={decimals})", flush=True)
    try:
        server._httpd.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server._httpd.server_close()
