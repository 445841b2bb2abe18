import json
import logging
import socket
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer

import pytest
from hypothesis import given, settings, strategies as st

from dyadtraits.core import GenerationParams
from dyadtraits.providers import (
    ConnectionFailed,
    ExhaustedScript,
    HttpProvider,
    HttpStatus,
    MalformedResponseBody,
    MissingReplayEntry,
    ProviderConfig,
    ProviderConfigError,
    ProviderTimeout,
    ReplayProvider,
    ScriptedProvider,
    SanitizeRules,
    TokenBucket,
    complete,
    sanitize_utterance,
)

from conftest import scripted


# --- scripted / replay ---

def test_scripted_queue_order():
    p = scripted("s", ["A", "B"])
    assert complete(p, "sys", "user") == "A"
    assert complete(p, "sys", "user") == "B"
    with pytest.raises(ExhaustedScript):
        complete(p, "sys", "user")


def test_empty_script_is_exhausted():
    with pytest.raises(ExhaustedScript):
        complete(scripted("s", []), "sys", "user")


def test_keyed_entries_win_over_queue(tmp_path):
    f = tmp_path / "s.jsonl"
    f.write_text("\n".join(json.dumps(r) for r in [
        {"response": "queued"},
        {"response": "for-d1-0", "discourse_id": "d1", "turn": 0},
    ]) + "\n", encoding="utf-8")
    prov = ScriptedProvider(ProviderConfig(id="s", kind="scripted", script=str(f)))
    assert prov.order_sensitive
    assert prov.complete("s", "u", key=("d1", "0")) == "for-d1-0"
    assert prov.complete("s", "u", key=("d1", "0")) == "queued"


def test_replay_lookup(tmp_path):
    f = tmp_path / "r.jsonl"
    f.write_text(json.dumps({"response": "hi", "discourse_id": "d", "turn": 3}) + "\n", encoding="utf-8")
    p = ReplayProvider(ProviderConfig(id="r", kind="replay", transcript=str(f)))
    assert p.complete("s", "u", key=("d", "3")) == "hi"
    assert p.complete("s", "u", key=("d", "3")) == "hi"
    with pytest.raises(MissingReplayEntry):
        p.complete("s", "u", key=("d", "4"))


def test_config_validation():
    with pytest.raises(ProviderConfigError):
        ProviderConfig(id="h", kind="http")
    with pytest.raises(ProviderConfigError):
        ProviderConfig(id="s", kind="scripted")
    with pytest.raises(ProviderConfigError):
        ProviderConfig(id="r", kind="replay")
    with pytest.raises(ProviderConfigError):
        ProviderConfig(id="x", kind="grpc")
    with pytest.raises(ProviderConfigError):
        ProviderConfig.from_mapping("h", {"kind": "http", "endpoint": "x", "model": "m", "api_key": "sk-1"})


# --- http ---

class _Server:
    def __init__(self, plan):
        self.plan = list(plan)  # list of (status, body) consumed per request
        self.requests = []
        outer = self

        class H(BaseHTTPRequestHandler):
            def do_POST(self):
                n = int(self.headers.get("Content-Length", 0))
                outer.requests.append({"path": self.path, "headers": dict(self.headers),
                                       "body": json.loads(self.rfile.read(n))})
                status, body = outer.plan.pop(0) if outer.plan else (200, _ok("done"))
                data = body.encode() if isinstance(body, str) else json.dumps(body).encode()
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(data)))
                self.end_headers()
                self.wfile.write(data)

            def log_message(self, *a):
                pass

        self.httpd = HTTPServer(("127.0.0.1", 0), H)
        self.url = f"http://127.0.0.1:{self.httpd.server_address[1]}/v1"
        threading.Thread(target=self.httpd.serve_forever, daemon=True).start()

    def close(self):
        self.httpd.shutdown()
        self.httpd.server_close()


def _ok(text):
    return {"choices": [{"message": {"role": "assistant", "content": text}}]}


@pytest.fixture
def server():
    servers = []

    def make(plan=()):
        s = _Server(plan)
        servers.append(s)
        return s
    yield make
    for s in servers:
        s.close()


def _http(url, **kw):
    cfg = ProviderConfig(id="h", kind="http", endpoint=url, model_name="gpt-4o", **kw)
    sleeps = []
    return HttpProvider(cfg, sleep=sleeps.append), sleeps


def test_http_request_body(server):
    s = server([(200, _ok("Nuclear power is reliable."))])
    p, _ = _http(s.url)
    out = p.complete("SYS", "USER", params=GenerationParams(temperature=0.9, max_tokens=150))
    assert out == "Nuclear power is reliable."
    req = s.requests[0]
    assert req["path"] == "/v1/chat/completions"
    body = req["body"]
    assert body["temperature"] == 0.9 and body["max_tokens"] == 150
    assert body["model"] == "gpt-4o"
    assert body["messages"] == [{"role": "system", "content": "SYS"}, {"role": "user", "content": "USER"}]


def test_http_defaults_come_from_generation_params(server):
    s = server()
    p, _ = _http(s.url)
    p.complete("S", "U")
    assert s.requests[0]["body"]["temperature"] == 0.9
    assert s.requests[0]["body"]["max_tokens"] == 150


def test_http_retries_5xx_with_backoff(server):
    s = server([(503, "busy"), (502, "bad gw"), (200, _ok("ok"))])
    p, sleeps = _http(s.url)
    assert p.complete("S", "U") == "ok"
    assert sleeps == [1.0, 2.0]
    assert len(s.requests) == 3


def test_http_gives_up_after_max_retries(server):
    s = server([(500, "x")] * 5)
    p, sleeps = _http(s.url)
    with pytest.raises(HttpStatus) as e:
        p.complete("S", "U")
    assert e.value.code == 500 and len(s.requests) == 3 and e.value.context["attempts"] == 3


def test_http_does_not_retry_4xx(server):
    s = server([(401, "nope")])
    p, sleeps = _http(s.url)
    with pytest.raises(HttpStatus) as e:
        p.complete("S", "U")
    assert e.value.code == 401 and sleeps == [] and len(s.requests) == 1


def test_http_malformed_body(server):
    s = server([(200, {"unexpected": True})])
    p, _ = _http(s.url)
    with pytest.raises(MalformedResponseBody):
        p.complete("S", "U")


def _closed_port():
    sock = socket.socket()
    sock.bind(("127.0.0.1", 0))
    port = sock.getsockname()[1]
    sock.close()
    return port


def test_http_connection_refused():
    p, sleeps = _http(f"http://127.0.0.1:{_closed_port()}/v1")
    with pytest.raises(ConnectionFailed):
        p.complete("S", "U")
    assert sleeps == []


def test_http_timeout_is_retried():
    lst = socket.socket()
    lst.bind(("127.0.0.1", 0))
    lst.listen(8)  # accepts connections but never answers
    try:
        p, sleeps = _http(f"http://127.0.0.1:{lst.getsockname()[1]}/v1", timeout=0.2, max_retries=1)
        with pytest.raises(ProviderTimeout):
            p.complete("S", "U")
        assert sleeps == [1.0]
    finally:
        lst.close()


def test_bearer_token_sent_but_never_logged(server, monkeypatch, caplog):
    monkeypatch.setenv("TEST_KEY", "sk-secret-123")
    s = server([(500, "x"), (200, _ok("ok"))])
    p, _ = _http(s.url, api_key_env="TEST_KEY")
    with caplog.at_level(logging.DEBUG):
        p.complete("S", "U")
    assert s.requests[0]["headers"]["Authorization"] == "Bearer sk-secret-123"
    assert "sk-secret-123" not in caplog.text
    assert "sk-secret-123" not in json.dumps(p.config.describe())


def test_history_toggle(server):
    s = server()
    p, _ = _http(s.url, history=True)
    p.complete("S", "U", history=[{"role": "user", "content": "u0"}, {"role": "assistant", "content": "a0"}])
    assert [m["role"] for m in s.requests[0]["body"]["messages"]] == ["system", "user", "assistant", "user"]


def test_token_bucket_waits_when_empty():
    now = [0.0]
    slept = []

    def sleep(d):
        slept.append(d)
        now[0] += d
    b = TokenBucket(60, capacity=1, clock=lambda: now[0], sleep=sleep)
    b.acquire()
    b.acquire()
    assert slept == [pytest.approx(1.0)]


# --- sanitization ---

def test_clean_text_is_a_fixed_point():
    assert sanitize_utterance("Nuclear power is reliable.").text == "Nuclear power is reliable."


def test_strip_think_block():
    r = sanitize_utterance("<think>plan</think>Nuclear power is reliable.")
    assert r.text == "Nuclear power is reliable."
    assert "tag:think" in r.removed


def test_strip_echoed_user_prompt():
    user = 'Previous Argument:"Coal is cheap."'
    raw = user + "\nNuclear power is reliable."
    assert sanitize_utterance(raw, context=("SYSTEM", user)).text == "Nuclear power is reliable."


def test_strip_echoed_system_lines_and_role_prefix():
    system = "You are participating in a structured debate on: 'X'\nRules:\n- Keep responses under 50 words"
    raw = "Rules:\n- Keep responses under 50 words\nAssistant: Fine, I disagree."
    assert sanitize_utterance(raw, context=(system, "U")).text == "Fine, I disagree."


def test_math_brackets_survive():
    assert sanitize_utterance("If a < b and 3<4 then costs fall.").text == "If a < b and 3<4 then costs fall."
    assert sanitize_utterance("Use <br> breaks <b>bold</b> ok").text == "Use breaks ok"


def test_all_removed_flags_empty():
    r = sanitize_utterance("<think>only thoughts</think>")
    assert r.text == "" and r.empty


def test_rules_can_be_disabled():
    rules = SanitizeRules(strip_inline_tags=False, strip_prompt_echo=False, trim_whitespace=False,
                          drop_role_prefixes=())
    raw = "  <think>x</think> Assistant: hi  "
    assert sanitize_utterance(raw, rules).text == raw


_alphabet = st.sampled_from(list("ab <>/\n\t:\"'x") + ["<think>", "</think>", "<b>", "Assistant:", "Previous Argument:"])


@settings(max_examples=500)
@given(st.lists(_alphabet, max_size=30).map("".join), st.text(max_size=20))
def test_sanitize_idempotent(raw, prompt):
    ctx = (prompt, 'Previous Argument:"a b"')
    once = sanitize_utterance(raw, context=ctx).text
    assert sanitize_utterance(once, context=ctx).text == once
