"""HTTP render service exposing a loaded layer model to interactive clients.

The model is loaded once and immutable; renders run concurrently under a
bounded semaphore sized to the worker count.  Identical queries produce
byte-identical responses.
"""

from __future__ import annotations

import io as _io
import json
import mimetypes
import os
import threading
import time
from collections import OrderedDict
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from urllib.parse import parse_qsl, urlparse

import numpy as np
from PIL import Image

from .lfmodel import FdlModel
from .render import RenderRequest, aperture_spectrum, render

__all__ = ["RenderService", "make_server", "serve_forever"]

_CACHE_SIZE = 32


class QueryError(ValueError):
    def __init__(self, status: int, message: str):
        super().__init__(message)
        self.status = status


def _parse_float(params: dict, name: str, default: float) -> float:
    raw = params.get(name)
    if raw is None:
        return default
    try:
        val = float(raw)
    except ValueError:
        raise QueryError(400, f"malformed parameter {name!r}: {raw!r}") from None
    if not np.isfinite(val):
        raise QueryError(400, f"parameter {name!r} must be finite")
    return val


class RenderService:
    """Query handling and encoding around a single immutable model."""

    def __init__(self, model: FdlModel, threads: int | None = None):
        self.model = model
        self.apertures = {
            "pinhole": aperture_spectrum("pinhole"),
            "disk": aperture_spectrum("disk", diameter=1.0),
            "square": aperture_spectrum("square", side=1.0),
        }
        workers = threads or os.cpu_count() or 1
        self._gate = threading.BoundedSemaphore(workers)
        self._cache: OrderedDict[str, tuple[str, bytes, float]] = OrderedDict()
        self._cache_lock = threading.Lock()

    def info(self) -> dict:
        model = self.model
        hull = None
        calib = model.calibration
        if calib is not None and calib.is_factored:
            hull = {
                "u": [float(calib.u.min()), float(calib.u.max())],
                "v": [float(calib.v.min()), float(calib.v.max())],
            }
        return {
            "width": model.width,
            "height": model.height,
            "n": model.num_layers,
            "d": [float(x) for x in model.disparities],
            "hull": hull,
            "apertures": sorted(self.apertures),
            "color_space": model.color_space,
            "channels": model.channels,
        }

    def parse_query(self, query: str):
        params = dict(parse_qsl(query, keep_blank_values=True))
        u = _parse_float(params, "u", 0.0)
        v = _parse_float(params, "v", 0.0)
        s = _parse_float(params, "s", 0.0)
        f = _parse_float(params, "f", 0.0)
        if f < 0:
            raise QueryError(400, "parameter 'f' must be >= 0")
        name = params.get("aperture", "disk")
        if name not in self.apertures:
            raise QueryError(422, f"unknown aperture {name!r}")
        quality = params.get("quality", "png")
        jpeg_q = 85
        if quality.startswith("jpeg"):
            fmt = "jpeg"
            if "-" in quality:
                try:
                    jpeg_q = int(quality.split("-", 1)[1])
                except ValueError:
                    raise QueryError(400, f"malformed parameter 'quality': {quality!r}") from None
                if not 1 <= jpeg_q <= 100:
                    raise QueryError(400, "jpeg quality must be in 1..100")
        elif quality == "png":
            fmt = "png"
        else:
            raise QueryError(400, f"malformed parameter 'quality': {quality!r}")
        req = RenderRequest(u=u, v=v, s=s, f=f, aperture=self.apertures[name])
        return req, fmt, jpeg_q

    def render_bytes(self, query: str) -> tuple[str, bytes, float]:
        key = json.dumps(sorted(parse_qsl(query, keep_blank_values=True)))
        with self._cache_lock:
            hit = self._cache.get(key)
            if hit is not None:
                self._cache.move_to_end(key)
                return hit
        req, fmt, jpeg_q = self.parse_query(query)
        t0 = time.perf_counter()
        with self._gate:
            img = render(self.model, req)
        ms = (time.perf_counter() - t0) * 1000.0
        arr = (np.clip(img, 0.0, 1.0) * 255.0).round().astype(np.uint8)
        pil = Image.fromarray(arr)
        buf = _io.BytesIO()
        if fmt == "jpeg":
            if pil.mode == "L":
                pil = pil.convert("L")
            pil.save(buf, format="JPEG", quality=jpeg_q)
            ctype = "image/jpeg"
        else:
            pil.save(buf, format="PNG")
            ctype = "image/png"
        out = (ctype, buf.getvalue(), ms)
        with self._cache_lock:
            self._cache[key] = out
            while len(self._cache) > _CACHE_SIZE:
                self._cache.popitem(last=False)
        return out


def _make_handler(service: RenderService, viewer_dir: Path | None):
    class Handler(BaseHTTPRequestHandler):
        protocol_version = "HTTP/1.1"

        def log_message(self, fmt, *args):  # quiet by default
            pass

        def _send(self, status: int, ctype: str, body: bytes, extra: dict | None = None):
            self.send_response(status)
            self.send_header("Content-Type", ctype)
            self.send_header("Content-Length", str(len(body)))
            self.send_header("Access-Control-Allow-Origin", "*")
            for k, v in (extra or {}).items():
                self.send_header(k, v)
            self.end_headers()
            self.wfile.write(body)

        def _send_json(self, status: int, doc: dict):
            self._send(status, "application/json", json.dumps(doc).encode())

        def do_GET(self):
            parsed = urlparse(self.path)
            try:
                if parsed.path == "/api/info":
                    self._send_json(200, service.info())
                elif parsed.path == "/api/render":
                    ctype, body, ms = service.render_bytes(parsed.query)
                    self._send(200, ctype, body, {"X-Render-Ms": f"{ms:.2f}"})
                else:
                    self._send_static(parsed.path)
            except QueryError as exc:
                self._send_json(exc.status, {"error": str(exc)})
            except BrokenPipeError:
                pass
            except Exception as exc:  # internal error
                self._send_json(500, {"error": f"internal error: {exc}"})

        def _send_static(self, path: str):
            if viewer_dir is None:
                self._send_json(404, {"error": "not found"})
                return
            rel = path.lstrip("/") or "index.html"
            target = (viewer_dir / rel).resolve()
            if not str(target).startswith(str(viewer_dir.resolve())) or not target.is_file():
                self._send_json(404, {"error": "not found"})
                return
            ctype = mimetypes.guess_type(str(target))[0] or "application/octet-stream"
            self._send(200, ctype, target.read_bytes())

    return Handler


def make_server(model: FdlModel, port: int = 8080, threads: int | None = None,
                viewer_dir=None) -> ThreadingHTTPServer:
    """Bind the service; the model must already be loaded (fail-fast)."""
    if model is None:
        raise ValueError("cannot start the render service without a model")
    service = RenderService(model, threads=threads)
    handler = _make_handler(service, Path(viewer_dir) if viewer_dir else None)
    server = ThreadingHTTPServer(("0.0.0.0", port), handler)
    server.daemon_threads = True
    server.fdl_service = service  # for tests and introspection
    return server


def serve_forever(model: FdlModel, port: int, threads: int | None = None, viewer_dir=None):
    server = make_server(model, port=port, threads=threads, viewer_dir=viewer_dir)
    host, actual_port = server.server_address[:2]
    print(f"serving on http://{host}:{actual_port} "
          f"({model.width}x{model.height}, {model.num_layers} layers)")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
