"""Reference server for the remote segmentation protocol.

It returns the prompt box itself as a filled mask, which makes client
round-trips checkable bit for bit. Failure modes for exercising the client:

* ``fail_status``: answer every request with this HTTP status;
* ``fail_first``: answer the first N requests with HTTP 503, then recover;
* ``malformed``: answer with a body that is not valid protocol JSON;
* ``delay``: seconds to sleep per request, optionally randomized by seed.

Run standalone with ``python -m stdvos.stub_server --port 8765``.
"""
from __future__ import annotations

import argparse
import contextlib
import json
import random
import threading
import time
from dataclasses import dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np

from .segmenter import decode_png, rle_encode


@dataclass
class StubBehavior:
    fail_status: int | None = None
    fail_first: int = 0
    malformed: bool = False
    delay: float = 0.0
    jitter_delay: bool = False
    seed: int = 0


def filled_box_mask(height: int, width: int, box) -> np.ndarray:
    """Pixels whose centers fall inside the pixel-corner box."""
    x0, y0, x1, y1 = box
    xs = np.arange(width) + 0.5
    ys = np.arange(height) + 0.5
    return ((ys >= y0) & (ys <= y1))[:, None] & ((xs >= x0) & (xs <= x1))[None, :]


def _handler(behavior: StubBehavior, state: dict):
    lock = threading.Lock()
    rng = random.Random(behavior.seed)

    class Handler(BaseHTTPRequestHandler):
        def log_message(self, *args):
            pass

        def _reply(self, status: int, body: bytes):
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)

        def do_POST(self):
            length = int(self.headers.get("Content-Length", 0))
            raw = self.rfile.read(length)
            with lock:
                state["requests"] += 1
                n = state["requests"]
                pause = behavior.delay * (rng.random() if behavior.jitter_delay else 1.0)
            if self.path != "/segment":
                return self._reply(404, b'{"error": "not found"}')
            if pause:
                time.sleep(pause)
            if behavior.fail_status:
                return self._reply(behavior.fail_status, b'{"error": "configured failure"}')
            if n <= behavior.fail_first:
                return self._reply(503, b'{"error": "warming up"}')
            if behavior.malformed:
                return self._reply(200, b'{"mask": "not an rle"')
            try:
                req = json.loads(raw)
                image = decode_png(req["image"])
                box = [float(v) for v in req["box"]]
            except Exception as exc:  # noqa: BLE001 - any decoding problem is a client error
                return self._reply(400, json.dumps({"error": str(exc)}).encode())
            mask = filled_box_mask(image.shape[0], image.shape[1], box)
            self._reply(200, json.dumps({"mask": rle_encode(mask), "score": 1.0}).encode())

    return Handler


@contextlib.contextmanager
def serve_stub(behavior: StubBehavior | None = None, host: str = "127.0.0.1", port: int = 0):
    """Run the stub in a background thread; yields ``(url, state)``."""
    state = {"requests": 0}
    server = ThreadingHTTPServer((host, port), _handler(behavior or StubBehavior(), state))
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    try:
        yield f"http://{host}:{server.server_address[1]}", state
    finally:
        server.shutdown()
        server.server_close()


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8765)
    parser.add_argument("--fail-status", type=int)
    args = parser.parse_args(argv)
    server = ThreadingHTTPServer((args.host, args.port),
                                 _handler(StubBehavior(fail_status=args.fail_status), {"requests": 0}))
    print(f"stub segmenter on http://{args.host}:{server.server_address[1]}")
    server.serve_forever()


if __name__ == "__main__":
    main()
