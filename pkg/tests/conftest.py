import json
import socket
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from importlib import resources
from pathlib import Path

import numpy as np
import pytest
from hypothesis import strategies as st

from hyperarbor.hierarchy import Hierarchy, parse_text

FIXTURES = Path(str(resources.files("hyperarbor").joinpath("data/hierarchies")))


def fixture_tree(name: str) -> Hierarchy:
    return parse_text((FIXTURES / f"{name}.txt").read_text())


def random_tree(rng: np.random.Generator, n: int, prefix: str = "n") -> Hierarchy:
    """Uniform random recursive tree: node i hangs below a node < i."""
    kids = {f"{prefix}0": []}
    for i in range(1, n):
        p = f"{prefix}{int(rng.integers(0, i))}"
        kids[p].append(f"{prefix}{i}")
        kids[f"{prefix}{i}"] = []
    return Hierarchy(f"{prefix}0", kids)


def chain_tree(rng: np.random.Generator, internal: int = 6, max_chain: int = 3) -> Hierarchy:
    """Bushy skeleton (every internal node has >= 2 children) whose edges are
    subdivided into chains of single-child nodes. Every edge leaving the root
    gets at least one intermediate, so every deepest path holds a chain."""
    counter = iter(range(10**6))
    skel = {"root": []}
    frontier = ["root"]
    for _ in range(internal):
        node = frontier.pop(int(rng.integers(0, len(frontier))))
        for _ in range(int(rng.integers(2, 5))):
            c = f"s{next(counter)}"
            skel[node].append(c)
            skel[c] = []
            frontier.append(c)
    kids: dict[str, list[str]] = {}
    for node, cs in skel.items():
        kids.setdefault(node, [])
        for c in cs:
            lo = 1 if node == "root" else 0
            head = node
            for _ in range(int(rng.integers(lo, max_chain + 1))):
                mid = f"c{next(counter)}"
                kids.setdefault(head, []).append(mid)
                kids[mid] = []
                head = mid
            kids.setdefault(head, []).append(c)
    return Hierarchy("root", kids)


@st.composite
def trees(draw, min_nodes: int = 1, max_nodes: int = 60):
    n = draw(st.integers(min_nodes, max_nodes))
    parents = [draw(st.integers(0, i - 1)) for i in range(1, n)]
    kids = {f"v{i}": [] for i in range(n)}
    for i, p in enumerate(parents, start=1):
        kids[f"v{p}"].append(f"v{i}")
    return Hierarchy("v0", kids)


# -- network guard ------------------------------------------------------------

_real_connect = socket.socket.connect


def _loopback_only(self, address):
    host = address[0] if isinstance(address, tuple) else address
    if isinstance(host, str) and host not in ("127.0.0.1", "localhost", "::1"):
        raise RuntimeError(f"test suite attempted network access to {host!r}")
    return _real_connect(self, address)


@pytest.fixture(autouse=True)
def no_network(monkeypatch):
    monkeypatch.setattr(socket.socket, "connect", _loopback_only)


# -- scripted chat-completion server ------------------------------------------


class ScriptedChat:
    """In-process OpenAI-style server. ``script`` items are either reply
    strings (HTTP 200) or ``(status, body)`` pairs; the last item repeats."""

    def __init__(self):
        self._script: list = []
        self.requests: list[dict] = []
        self._pos = 0
        outer = self

        class Handler(BaseHTTPRequestHandler):
            def log_message(self, *args):
                pass

            def do_POST(self):
                length = int(self.headers.get("Content-Length", 0))
                body = json.loads(self.rfile.read(length) or b"{}")
                outer.requests.append({"path": self.path, "body": body,
                                       "auth": self.headers.get("Authorization")})
                status, payload = outer._next()
                data = payload.encode() if isinstance(payload, str) else json.dumps(payload).encode()
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(data)))
                self.end_headers()
                self.wfile.write(data)

        self.server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self.url = f"http://127.0.0.1:{self.server.server_address[1]}/v1"
        self.thread = threading.Thread(target=self.server.serve_forever, daemon=True)
        self.thread.start()

    @property
    def script(self) -> list:
        return self._script

    @script.setter
    def script(self, items: list) -> None:
        self._script = list(items)
        self._pos = 0

    def _next(self):
        item = self.script[min(self._pos, len(self.script) - 1)]
        self._pos += 1
        if callable(item):
            item = item(self.requests[-1]["body"])
        if isinstance(item, tuple):
            return item
        return 200, {"choices": [{"message": {"role": "assistant", "content": item}}]}

    def close(self):
        self.server.shutdown()
        self.server.server_close()


@pytest.fixture
def chat_server(monkeypatch):
    srv = ScriptedChat()
    monkeypatch.setenv("LLM_API_KEY", "test-key")
    monkeypatch.setenv("LLM_BASE_URL", srv.url)
    monkeypatch.setenv("LLM_MODEL", "mock-model")
    yield srv
    srv.close()


@pytest.fixture
def llm_config(chat_server):
    from hyperarbor.llm import LlmConfig
    return LlmConfig.from_env(backoff_base=0.0, timeout=5.0, trust_env=False)


# -- acceptance summary -------------------------------------------------------

ACCEPTANCE_RESULTS: dict[int, tuple[str, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_RESULTS):
        status, note = ACCEPTANCE_RESULTS[k]
        terminalreporter.write_line(f"criterion {k:2d}: {status}  {note}")
