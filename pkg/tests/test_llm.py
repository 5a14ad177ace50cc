import json
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer

import pytest

from supplykg.errors import FixtureMiss, RateLimited, TransportError
from supplykg.llm import (
    API_KEY_ENV,
    FixtureStore,
    LiveBackend,
    LlmRequest,
    LlmResponse,
    RecordingBackend,
    ReplayBackend,
    CallableBackend,
    canonical_request,
    namespaced_store_path,
    record,
    request_hash,
)

from helpers import PIPELINE_FIXTURES

SAMPLE = LlmRequest("gpt-4", 0.2, "Extract.", "CATL supplies Tesla.", 256)
# computed with: printf '%s' '<canonical json>' | sha256sum
SAMPLE_DIGEST = "74eafe4a747870620de34065d22009ebfd7555d9319feed9f921895cb6593a92"
GROUPING = LlmRequest("gpt-4", 0.0, "Group names.", "1. Tesla\n2. Tesla, Inc.", 1024)
GROUPING_DIGEST = "0f133f396925ebd313c18f78b7e1f2aa82c9b706b08b6a852d7f64756c7255a7"


def test_canonical_serialization():
    assert canonical_request(SAMPLE) == (
        b'{"model":"gpt-4","temperature":0.200,"system":"Extract.",'
        b'"user":"CATL supplies Tesla.","max_output_tokens":256}'
    )


def test_pinned_digests():
    assert request_hash(SAMPLE) == SAMPLE_DIGEST
    assert request_hash(GROUPING) == GROUPING_DIGEST


def test_digest_depends_on_temperature():
    a = LlmRequest("gpt-4", 0.0, "s", "u", 10)
    b = LlmRequest("gpt-4", 0.7, "s", "u", 10)
    assert request_hash(a) == request_hash(LlmRequest("gpt-4", 0.0, "s", "u", 10))
    assert request_hash(a) != request_hash(b)


def test_digests_distinct_over_bundled_store():
    store = FixtureStore(PIPELINE_FIXTURES)
    requests = {canonical_request(ex.request) for ex in store.exchanges()}
    assert len({request_hash(ex.request) for ex in store.exchanges()}) == len(requests) == len(store)


@pytest.mark.parametrize("kwargs", [dict(temperature=-0.1), dict(temperature=2.5), dict(max_output_tokens=0), dict(model="")])
def test_request_validation(kwargs):
    base = dict(model="gpt-4", temperature=0.0, system="s", user="u", max_output_tokens=10)
    with pytest.raises(ValueError):
        LlmRequest(**{**base, **kwargs})


def test_replay_returns_recorded_response(tmp_path):
    path = tmp_path / "f.jsonl"
    record(SAMPLE, LlmResponse('{"nodes": []}', "normal", {"prompt_tokens": 5}), path)
    resp = ReplayBackend(path).complete(SAMPLE)
    assert resp == LlmResponse('{"nodes": []}', "normal", {"prompt_tokens": 5})


def test_replay_miss(tmp_path):
    with pytest.raises(FixtureMiss) as info:
        ReplayBackend(tmp_path / "none.jsonl").complete(SAMPLE)
    assert info.value.digest == SAMPLE_DIGEST


def test_last_write_wins(tmp_path):
    path = tmp_path / "f.jsonl"
    record(SAMPLE, LlmResponse("first"), path)
    record(SAMPLE, LlmResponse("second"), path)
    store = FixtureStore(path)
    assert len(store) == 1
    assert ReplayBackend(store).complete(SAMPLE).content == "second"
    assert len(path.read_text().splitlines()) == 2


def test_three_exchanges_reload(tmp_path):
    path = tmp_path / "f.jsonl"
    reqs = [LlmRequest("gpt-4", 0.0, "s", f"u{i}", 10) for i in range(3)]
    for i, req in enumerate(reqs):
        record(req, LlmResponse(f"r{i}"), path)
    store = FixtureStore(path)
    assert sorted(ex.request_hash for ex in store.exchanges()) == sorted(request_hash(q) for q in reqs)
    assert [ReplayBackend(store).complete(q).content for q in reversed(reqs)] == ["r2", "r1", "r0"]


def test_recording_then_replay(tmp_path):
    path = tmp_path / "f.jsonl"
    calls = []
    inner = CallableBackend(lambda req: calls.append(req) or f"echo {req.user}")
    rec = RecordingBackend(inner, path)
    assert rec.complete(SAMPLE).content == "echo CATL supplies Tesla."
    assert ReplayBackend(path).complete(SAMPLE).content == "echo CATL supplies Tesla."
    assert len(calls) == 1
    assert "api_key" not in path.read_text().lower()


def test_concurrent_recording_is_consistent(tmp_path):
    path = tmp_path / "f.jsonl"
    rec = RecordingBackend(CallableBackend(lambda req: req.user.upper()), path)
    reqs = [LlmRequest("gpt-4", 0.0, "s", f"u{i}", 10) for i in range(40)]
    threads = [threading.Thread(target=rec.complete, args=(q,)) for q in reqs]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    replay = ReplayBackend(path)
    assert [replay.complete(q).content for q in reqs] == [f"U{i}" for i in range(40)]


def test_namespaced_paths(tmp_path):
    assert namespaced_store_path(tmp_path, 3) == tmp_path / "run-3.jsonl"
    assert str(namespaced_store_path(str(tmp_path / "r{run}.jsonl"), 2)).endswith("r2.jsonl")


class _Stub(BaseHTTPRequestHandler):
    script: list = []
    bodies: list = []

    def do_POST(self):
        length = int(self.headers["Content-Length"])
        type(self).bodies.append((self.headers.get("Authorization"), json.loads(self.rfile.read(length))))
        status = type(self).script.pop(0) if type(self).script else 200
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.end_headers()
        if status == 200:
            payload = {"choices": [{"message": {"content": "[1, 1]"}, "finish_reason": "stop"}],
                       "usage": {"prompt_tokens": 12, "completion_tokens": 4}}
            self.wfile.write(json.dumps(payload).encode())

    def log_message(self, *args):
        pass


@pytest.fixture
def stub_server():
    server = HTTPServer(("127.0.0.1", 0), _Stub)
    _Stub.bodies = []
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield server, f"http://127.0.0.1:{server.server_port}/v1"
    server.shutdown()


def test_live_retries_rate_limits(stub_server):
    _, url = stub_server
    _Stub.script = [429, 429, 200]
    delays = []
    backend = LiveBackend(url, api_key="test-key", sleep=delays.append)
    resp = backend.complete(GROUPING)
    assert backend.attempts == 3
    assert resp == LlmResponse("[1, 1]", "normal", {"prompt_tokens": 12, "completion_tokens": 4})
    assert len(delays) == 2 and delays[1] > delays[0] * 0.3
    auth, body = _Stub.bodies[-1]
    assert auth == "Bearer test-key"
    assert body["messages"][1]["content"] == GROUPING.user
    assert body["temperature"] == 0.0 and body["max_tokens"] == 1024


def test_live_gives_up(stub_server):
    _, url = stub_server
    _Stub.script = [429] * 10
    backend = LiveBackend(url, api_key="k", max_retries=2, sleep=lambda s: None)
    with pytest.raises(RateLimited):
        backend.complete(GROUPING)
    assert backend.attempts == 3


def test_live_client_error_not_retried(stub_server):
    _, url = stub_server
    _Stub.script = [400]
    backend = LiveBackend(url, api_key="k", sleep=lambda s: None)
    with pytest.raises(TransportError):
        backend.complete(GROUPING)
    assert backend.attempts == 1


def test_live_needs_credential(monkeypatch):
    monkeypatch.delenv(API_KEY_ENV, raising=False)
    with pytest.raises(TransportError):
        LiveBackend("http://127.0.0.1:9/v1")
