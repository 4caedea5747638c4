"""HTTP client and server for the remote language-model protocol.

Two JSON endpoints::

    POST /v1/logprobs  {"context", "prefix", "control", "top_k"}
        -> {"entries": [{"token", "logprob"}, ...], "truncated"}
    POST /v1/rollout   {"context", "prefix", "control", "max_tokens",
                        "mode": "greedy"|"sample", "temperature", "seed"}
        -> {"tokens": [...], "terminated"}

``top_k`` may be ``null`` to request the untruncated distribution.
"""

from __future__ import annotations

import json
import logging
import os
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Callable, Sequence

import requests

from .base import LanguageModel, LMError, LmContext, NextTokenDistribution

logger = logging.getLogger(__name__)

ENV_URL = "CTR_LM_URL"


def post_json(url: str, body: dict, attempts: int = 3, timeout: float = 30.0, backoff: float = 0.1, headers=None) -> dict:
    """POST with bounded exponential backoff; raises :class:`LMError` after the last attempt."""
    last: Exception | None = None
    for attempt in range(attempts):
        try:
            resp = requests.post(url, json=body, timeout=timeout, headers=headers)
            resp.raise_for_status()
            return resp.json()
        except (requests.RequestException, ValueError) as exc:
            last = exc
            logger.debug("POST %s failed (attempt %d/%d): %s", url, attempt + 1, attempts, exc)
            if attempt + 1 < attempts:
                time.sleep(backoff * 2**attempt)
    raise LMError(f"request to {url} failed after {attempts} attempts: {last}")


def _context_body(context: LmContext) -> dict:
    return {"context": context.text, "prefix": list(context.prefix), "control": context.control}


class RemoteLM(LanguageModel):
    def __init__(self, url: str, max_in_flight: int = 4, attempts: int = 3, timeout: float = 30.0):
        self.url = url.rstrip("/")
        self.max_in_flight = max_in_flight
        self.attempts = attempts
        self.timeout = timeout

    @classmethod
    def from_env(cls, **kwargs) -> "RemoteLM":
        url = os.environ.get(ENV_URL)
        if not url:
            raise LMError(f"{ENV_URL} is not set")
        return cls(url, **kwargs)

    def config(self) -> dict:
        return {"url": self.url, "max_in_flight": self.max_in_flight}

    def _post(self, path: str, body: dict) -> dict:
        return post_json(self.url + path, body, self.attempts, self.timeout)

    def next_distribution(self, context: LmContext, top_k: int | None = None) -> NextTokenDistribution:
        if top_k is not None and top_k < 1:
            raise ValueError(f"top_k must be ≥ 1, got {top_k}")
        reply = self._post("/v1/logprobs", {**_context_body(context), "top_k": top_k})
        entries = [(e["token"], float(e["logprob"])) for e in reply["entries"]]
        dist = NextTokenDistribution.from_logprobs(entries)
        return NextTokenDistribution(dist.entries, bool(reply.get("truncated", False)))

    def _rollout(self, context: LmContext, max_tokens: int, mode: str, temperature: float = 1.0, seed: int = 0):
        body = {
            **_context_body(context),
            "max_tokens": max_tokens,
            "mode": mode,
            "temperature": temperature,
            "seed": seed,
        }
        return tuple(self._post("/v1/rollout", body)["tokens"])

    def greedy_rollout(self, context: LmContext, max_tokens: int) -> tuple[str, ...]:
        if max_tokens < 0:
            raise ValueError("max_tokens must be ≥ 0")
        if max_tokens == 0:
            return ()
        return self._rollout(context, max_tokens, "greedy")

    def batch_greedy_rollout(self, contexts: Sequence[LmContext], max_tokens: int) -> list[tuple[str, ...]]:
        with ThreadPoolExecutor(self.max_in_flight) as pool:
            return list(pool.map(lambda ctx: self.greedy_rollout(ctx, max_tokens), contexts))

    def sample(self, context: LmContext, temperature: float = 1.0, seed: int = 0, max_tokens: int = 32):
        if temperature <= 0:
            raise ValueError("temperature must be > 0")
        return self._rollout(context, max_tokens, "sample", temperature, seed)


class JsonHandler(BaseHTTPRequestHandler):
    """Dispatches JSON POST bodies to ``server.routes[path]``."""

    def log_message(self, fmt, *args):
        logger.debug("%s - " + fmt, self.address_string(), *args)

    def do_POST(self):
        route = self.server.routes.get(self.path)
        if route is None:
            self._reply(404, {"error": f"no route {self.path}"})
            return
        try:
            length = int(self.headers.get("Content-Length", 0))
            body = json.loads(self.rfile.read(length) or b"{}")
            self._reply(200, route(body))
        except Exception as exc:  # reported to the client, not raised in the server thread
            logger.exception("handler for %s failed", self.path)
            self._reply(500, {"error": str(exc)})

    def _reply(self, status: int, obj: dict):
        data = json.dumps(obj).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)


class JsonServer:
    """Threaded JSON-over-HTTP server running in a background thread."""

    def __init__(self, routes: dict[str, Callable[[dict], dict]], host: str = "127.0.0.1", port: int = 0):
        self.httpd = ThreadingHTTPServer((host, port), JsonHandler)
        self.httpd.daemon_threads = True
        self.httpd.routes = routes
        self._thread: threading.Thread | None = None

    @property
    def url(self) -> str:
        host, port = self.httpd.server_address[:2]
        return f"http://{host}:{port}"

    def start(self) -> "JsonServer":
        self._thread = threading.Thread(target=self.httpd.serve_forever, daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        self.httpd.shutdown()
        self.httpd.server_close()
        if self._thread is not None:
            self._thread.join()

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()


def lm_routes(model: LanguageModel) -> dict[str, Callable[[dict], dict]]:
    def context_of(body: dict) -> LmContext:
        return LmContext(body.get("context", ""), tuple(body.get("prefix", [])), body.get("control"))

    def logprobs(body: dict) -> dict:
        dist = model.next_distribution(context_of(body), body.get("top_k"))
        return {
            "entries": [{"token": tok, "logprob": lp} for tok, lp in dist.entries],
            "truncated": dist.truncated,
        }

    def rollout(body: dict) -> dict:
        ctx = context_of(body)
        max_tokens = int(body["max_tokens"])
        if body.get("mode", "greedy") == "greedy":
            tokens = model.greedy_rollout(ctx, max_tokens)
        else:
            tokens = model.sample(ctx, float(body.get("temperature", 1.0)), int(body.get("seed", 0)), max_tokens)
        return {"tokens": list(tokens), "terminated": len(tokens) < max_tokens}

    return {"/v1/logprobs": logprobs, "/v1/rollout": rollout}


def serve_model(model: LanguageModel, host: str = "127.0.0.1", port: int = 0) -> JsonServer:
    """Expose ``model`` over the remote protocol. Use as a context manager."""
    return JsonServer(lm_routes(model), host, port)
