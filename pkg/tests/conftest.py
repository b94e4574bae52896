import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from urllib.parse import parse_qs, urlparse

import numpy as np
import pytest

from advmel.dataio.fixture import FixtureSpec, entity_names, generate_fixture
from advmel.encoders import build_planted_model

SMALL_ENTITIES = entity_names(6, 3)


@pytest.fixture(scope="session")
def small():
    """A 6-entity, 8x8, D=16 planted model: fast enough for finite differences."""
    model, protos = build_planted_model(SMALL_ENTITIES, 16, 8, 8, seed=3, sensitivity=0.05)
    return model, protos, list(SMALL_ENTITIES)


@pytest.fixture(scope="session")
def certified(tmp_path_factory):
    """The seed-7 fixture with K=16, M=8, D=64, 32x32, n=200, certified once per session."""
    out = tmp_path_factory.mktemp("fixture")
    fx = generate_fixture(FixtureSpec(seed=7, n_entities=16, n_candidates=8, embed_dim=64,
                                      height=32, width=32, n_instances=200), out)
    return fx, out


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


class _Handler(BaseHTTPRequestHandler):
    routes: dict = {}
    log: list = []

    def _reply(self, method):
        parsed = urlparse(self.path)
        body = None
        if method == "POST":
            length = int(self.headers.get("Content-Length", 0))
            body = json.loads(self.rfile.read(length) or b"null")
        query = {k: v[0] for k, v in parse_qs(parsed.query).items()}
        self.log.append({"method": method, "path": parsed.path, "query": query, "body": body})
        handler = self.routes.get(parsed.path)
        if handler is None:
            self.send_response(404)
            self.end_headers()
            return
        status, payload = handler(query, body)
        data = json.dumps(payload).encode()
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def do_GET(self):
        self._reply("GET")

    def do_POST(self):
        self._reply("POST")

    def log_message(self, *args):
        pass


@pytest.fixture
def http_server():
    """Local JSON server; tests register ``routes[path] = fn(query, body) -> (status, payload)``."""
    handler = type("Handler", (_Handler,), {"routes": {}, "log": []})
    server = ThreadingHTTPServer(("127.0.0.1", 0), handler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    server.base = f"http://127.0.0.1:{server.server_address[1]}"
    server.routes = handler.routes
    server.log = handler.log
    yield server
    server.shutdown()
    server.server_close()


# -- acceptance summary ------------------------------------------------------

_ACCEPTANCE_KEY = pytest.StashKey[dict]()


@pytest.fixture
def acceptance(request):
    """Record the PASS/FAIL line of the criterion named by the test's ``criterion`` marker."""
    number, title = request.node.get_closest_marker("criterion").args
    lines = request.config.stash.setdefault(_ACCEPTANCE_KEY, {})

    def record(ok: bool, detail: str) -> None:
        line = f"[{'PASS' if ok else 'FAIL'}] AC{number:02d} {title}: {detail}"
        lines[number] = line
        print(line)
        assert ok, line

    yield record
    if number not in lines:
        lines[number] = f"[FAIL] AC{number:02d} {title}: did not complete"


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE_KEY, {})
    if lines:
        terminalreporter.section("acceptance criteria")
        for number in sorted(lines):
            terminalreporter.write_line(lines[number])
