"""HTTP demo service: draw a digit in the browser, then recognize it with
the classifier or round-trip it through the autoencoder's low-dimensional
code.

Endpoints (JSON bodies):
    POST /api/recognize  {"pixels": [784 floats]} -> digit + distribution
    POST /api/encode     {"pixels": [784 floats]} -> code (+ compression)
    POST /api/decode     {"code":   [n floats]}   -> reconstructed pixels
    GET  /api/health                              -> model status

The service never trains; it loads weight files produced by the CLI and
answers statelessly, so identical requests always yield identical
responses. Static files of the web UI are served from --ui-dir by the
same process.
"""

import json
import mimetypes
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from typing import Optional

import numpy as np

from . import data, deepnet


class BadRequest(ValueError):
    pass


class ModelMissing(RuntimeError):
    pass


class DemoService:
    """Holds the loaded networks; weight snapshots are read-only after
    load, so request handling needs no locking."""

    def __init__(self, classifier: Optional[deepnet.NetworkWeights] = None,
                 autoencoder: Optional[deepnet.NetworkWeights] = None):
        if classifier is not None and classifier.mode != "classifier":
            raise BadRequest(f"classifier weight file holds a {classifier.mode!r} network")
        if autoencoder is not None and autoencoder.mode != "autoencoder":
            raise BadRequest(f"autoencoder weight file holds a {autoencoder.mode!r} network")
        self.classifier = classifier
        self.autoencoder = autoencoder

    @classmethod
    def from_files(cls, classifier_path=None, autoencoder_path=None) -> "DemoService":
        return cls(
            data.load_weights(classifier_path) if classifier_path else None,
            data.load_weights(autoencoder_path) if autoencoder_path else None,
        )

    @property
    def input_size(self) -> int:
        for net in (self.classifier, self.autoencoder):
            if net is not None:
                return net.input_size
        return 784

    def _pixels(self, body: dict) -> np.ndarray:
        pixels = body.get("pixels")
        if not isinstance(pixels, list) or len(pixels) != self.input_size:
            got = len(pixels) if isinstance(pixels, list) else type(pixels).__name__
            raise BadRequest(f"pixels must be a list of {self.input_size} numbers, got {got}")
        if not all(isinstance(v, (int, float)) and not isinstance(v, bool)
                   for v in pixels):
            raise BadRequest("pixels must all be numbers")
        return np.clip(np.asarray(pixels, dtype=np.float64), 0.0, 1.0)

    def recognize(self, body: dict) -> dict:
        if self.classifier is None:
            raise ModelMissing("no classifier weights loaded")
        digit, probs = deepnet.classify(self.classifier, self._pixels(body))
        return {"digit": digit, "probabilities": probs.tolist()}

    def encode(self, body: dict) -> dict:
        if self.autoencoder is None:
            raise ModelMissing("no autoencoder weights loaded")
        code = deepnet.encode(self.autoencoder, self._pixels(body))
        return {
            "code": code.tolist(),
            "code_size": self.autoencoder.code_size,
            "compression_ratio": self.autoencoder.code_size / self.autoencoder.input_size,
        }

    def decode(self, body: dict) -> dict:
        if self.autoencoder is None:
            raise ModelMissing("no autoencoder weights loaded")
        code = body.get("code")
        size = self.autoencoder.code_size
        if not isinstance(code, list) or len(code) != size:
            got = len(code) if isinstance(code, list) else type(code).__name__
            raise BadRequest(f"code must be a list of {size} numbers, got {got}")
        if not all(isinstance(v, (int, float)) and not isinstance(v, bool)
                   for v in code):
            raise BadRequest("code must all be numbers")
        pixels = deepnet.decode(self.autoencoder, np.asarray(code, dtype=np.float64))
        return {"pixels": np.clip(pixels, 0.0, 1.0).tolist()}

    def health(self) -> dict:
        return {
            "status": "ok",
            "models": {
                "classifier": self.classifier is not None,
                "autoencoder": self.autoencoder is not None,
            },
            "input_size": self.input_size,
            "code_size": self.autoencoder.code_size if self.autoencoder else None,
        }


def make_handler(service: DemoService, ui_dir=None, quiet: bool = True):
    ui_root = Path(ui_dir).resolve() if ui_dir else None

    class Handler(BaseHTTPRequestHandler):

        def log_message(self, fmt, *args):
            if not quiet:
                super().log_message(fmt, *args)

        def _json(self, status: int, payload: dict):
            body = json.dumps(payload).encode()
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)

        def do_POST(self):
            routes = {
                "/api/recognize": service.recognize,
                "/api/encode": service.encode,
                "/api/decode": service.decode,
            }
            handler = routes.get(self.path)
            if handler is None:
                self._json(404, {"error": f"no such endpoint {self.path}"})
                return
            try:
                length = int(self.headers.get("Content-Length", 0))
                body = json.loads(self.rfile.read(length) or b"{}")
                if not isinstance(body, dict):
                    raise BadRequest("request body must be a JSON object")
                self._json(200, handler(body))
            except (BadRequest, json.JSONDecodeError, ValueError) as exc:
                self._json(400, {"error": str(exc)})
            except ModelMissing as exc:
                self._json(503, {"error": str(exc)})

        def do_GET(self):
            if self.path == "/api/health":
                self._json(200, service.health())
                return
            self._static(self.path)

        def _static(self, path: str):
            if ui_root is None:
                self._json(404, {"error": "no UI assets configured"})
                return
            rel = path.split("?", 1)[0].lstrip("/") or "index.html"
            target = (ui_root / rel).resolve()
            if ui_root not in target.parents and target != ui_root:
                self._json(404, {"error": "not found"})
                return
            if target.is_dir():
                target = target / "index.html"
            if not target.is_file():
                self._json(404, {"error": "not found"})
                return
            ctype = mimetypes.guess_type(str(target))[0] or "application/octet-stream"
            content = target.read_bytes()
            self.send_response(200)
            self.send_header("Content-Type", ctype)
            self.send_header("Content-Length", str(len(content)))
            self.end_headers()
            self.wfile.write(content)

    return Handler


def make_server(service: DemoService, port: int = 8600, ui_dir=None,
                host: str = "127.0.0.1", quiet: bool = True) -> ThreadingHTTPServer:
    return ThreadingHTTPServer((host, port), make_handler(service, ui_dir, quiet))


def run(service: DemoService, port: int = 8600, ui_dir=None,
        host: str = "127.0.0.1") -> None:
    server = make_server(service, port, ui_dir, host, quiet=False)
    print(f"demo service on http://{host}:{server.server_address[1]}/")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
