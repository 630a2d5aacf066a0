import threading
from collections import deque

import httpx
import numpy as np
import pytest

from seal.flight import SingleFlight
from seal.gateway import (
    ChatRequest,
    ChatResponse,
    EmbedRequest,
    Gateway,
    GatewayError,
    HashingEmbedder,
    ProviderError,
    RecordReplayBackend,
    RemoteBackend,
    ReplayMiss,
    ReplayStore,
    Route,
    ScriptedBackend,
    ScriptExhausted,
    TokenBucket,
    ToolCall,
    ToolSpec,
    TransportError,
    messages,
    request_fingerprint,
)
from seal.schema import canonical_json, parse_json


def req(text="hi", **kw):
    return ChatRequest(model="m", messages=messages(("user", text)), **kw)


# -- requests and fingerprints ----------------------------------------------


def test_request_validation():
    with pytest.raises(ValueError):
        ChatRequest(model="m", messages=())
    with pytest.raises(ValueError):
        ChatRequest(model="m", messages=messages(("user", "a")), tool_choice="sometimes")
    with pytest.raises(ValueError):
        ChatRequest(model="m", messages=messages(("user", "a"), ("system", "late")))


def test_fingerprint_shape_and_sensitivity():
    fp = request_fingerprint(req())
    assert len(fp) == 64 and all(c in "0123456789abcdef" for c in fp)
    assert request_fingerprint(req()) == fp
    assert request_fingerprint(req(temperature=0.5)) != fp
    assert request_fingerprint(req(seed=1)) != fp
    assert request_fingerprint(EmbedRequest(model="m", texts=("hi",))) != fp


def test_fingerprint_ignores_construction_order():
    a = ToolSpec("f", "d", {"type": "object", "properties": {"x": {"type": "string"}, "y": {"type": "number"}}})
    b = ToolSpec("f", "d", {"properties": {"y": {"type": "number"}, "x": {"type": "string"}}, "type": "object"})
    assert request_fingerprint(req(tool_specs=(a,))) == request_fingerprint(req(tool_specs=(b,)))


def test_tool_call_parsing():
    assert ToolCall.make("1", "f", '{"x": 1}').arguments == {"x": 1}
    assert ToolCall.make("1", "f", "").arguments == {}
    assert ToolCall.make("1", "f", "{x: 1").arguments is None
    assert ToolCall.make("1", "f", "[1]").arguments is None
    assert ToolCall.make("1", "f", {"x": 1}).raw_arguments == '{"x": 1}'


def test_chat_response_round_trip():
    r = ChatResponse(content=None, tool_calls=(ToolCall.make("c1", "f", '{"a":1}'),), finish_reason="tool_calls")
    assert ChatResponse.from_json(r.to_json()) == r
    with pytest.raises(ValueError):
        ChatResponse(content=None)


# -- scripted ---------------------------------------------------------------


def test_scripted_echo_and_exhaustion():
    backend = ScriptedBackend(["hello"])
    gw = Gateway(backend)
    assert gw.chat(req()).content == "hello"
    with pytest.raises(ScriptExhausted):
        gw.chat(req())
    assert backend.calls == 2


def test_scripted_routes_by_model_and_needle():
    backend = ScriptedBackend(routes=[
        Route(responses=deque(["A1", "A2"]), model="a", contains=("apple",)),
        Route(responses=deque(["B"]), model="b"),
    ])
    apple = ChatRequest(model="a", messages=messages(("user", "an apple")))
    assert backend.chat(apple).content == "A1"
    assert backend.chat(ChatRequest(model="b", messages=messages(("user", "x")))).content == "B"
    assert backend.chat(apple).content == "A2"
    with pytest.raises(ScriptExhausted):
        backend.chat(ChatRequest(model="a", messages=messages(("user", "pear"))))
    assert backend.remaining() == 0


def test_scripted_from_json_and_error_items():
    backend = ScriptedBackend.from_json({"routes": [{"contains": "x", "responses": [
        {"tool_calls": [{"name": "f", "arguments": "{}"}]}]}]})
    r = backend.chat(req("x"))
    assert r.tool_calls[0].name == "f" and r.tool_calls[0].id == "call_0"
    failing = ScriptedBackend([TransportError("down"), lambda request: request.model])
    with pytest.raises(TransportError):
        failing.chat(req())
    assert failing.chat(req()).content == "m"


def test_scripted_has_no_remote_embeddings():
    with pytest.raises(GatewayError):
        Gateway(ScriptedBackend([])).embed(["a"], "text-embedding-3-small")


# -- record/replay ----------------------------------------------------------


def test_record_then_replay_without_transport(tmp_path):
    inner = ScriptedBackend(["hello", "other"])
    rec = Gateway(RecordReplayBackend(ReplayStore(tmp_path), inner))
    first = rec.chat(req())
    assert inner.calls == 1
    assert rec.chat(req()) == first and inner.calls == 1

    fresh_inner = ScriptedBackend([])
    replay = Gateway(RecordReplayBackend(ReplayStore(tmp_path), fresh_inner, strict=True))
    again = replay.chat(req())
    assert canonical_json(again.to_json()) == canonical_json(first.to_json())
    assert replay.calls == 0


def test_store_layout(tmp_path):
    Gateway(RecordReplayBackend(ReplayStore(tmp_path), ScriptedBackend(["x"]))).chat(req())
    fp = request_fingerprint(req())
    files = [p.name for p in tmp_path.iterdir()]
    assert files == [fp]
    raw = (tmp_path / fp).read_bytes()
    doc = parse_json(raw)
    assert set(doc) == {"request", "response", "recorded_at"}
    assert raw == canonical_json(doc) + b"\n"
    assert doc["response"]["content"] == "x"


def test_strict_miss_names_fingerprint(tmp_path):
    gw = Gateway(RecordReplayBackend(ReplayStore(tmp_path), None))
    with pytest.raises(ReplayMiss) as exc:
        gw.chat(req("unseen"))
    assert exc.value.fingerprint == request_fingerprint(req("unseen"))
    assert exc.value.fingerprint in str(exc.value)


def test_write_once_never_overwrites(tmp_path):
    store = ReplayStore(tmp_path)
    store.put("k", {"r": 1}, {"content": "first"})
    store.put("k", {"r": 1}, {"content": "second"})
    assert ReplayStore(tmp_path).get("k") == {"content": "first"}
    assert store.get("k") == {"content": "first"}
    assert len(store) == 1


def test_embeddings_recorded_and_replayed(tmp_path):
    class Emb:
        calls = 0

        def embed(self, request):
            self.calls += 1
            return np.ones((len(request.texts), 3)) * 0.5

    inner = Emb()
    gw = Gateway(RecordReplayBackend(ReplayStore(tmp_path), inner))
    v1 = gw.embed(["a", "b"], "remote-emb")
    v2 = Gateway(RecordReplayBackend(ReplayStore(tmp_path), None)).embed(["a", "b"], "remote-emb")
    assert inner.calls == 1 and np.array_equal(v1, v2) and v1.shape == (2, 3)


def test_concurrent_misses_record_once(tmp_path):
    gate = threading.Event()

    def slow(request):
        gate.wait(5)
        return "done"

    inner = ScriptedBackend([slow])
    backend = RecordReplayBackend(ReplayStore(tmp_path), inner)
    results = []
    threads = [threading.Thread(target=lambda: results.append(backend.chat(req()).content)) for _ in range(8)]
    for t in threads:
        t.start()
    fp = request_fingerprint(req())
    for _ in range(500):
        if backend._flight.waiting(fp) == 7:
            break
        threading.Event().wait(0.01)
    gate.set()
    for t in threads:
        t.join()
    assert results == ["done"] * 8 and inner.calls == 1


# -- hashing embedder -------------------------------------------------------


def test_hashing_embedder_properties():
    gw = Gateway(ScriptedBackend([]))
    v = gw.embed(["weather in paris", "weather in paris", "stock quote", ""], "hashing-256")
    assert v.shape == (4, 256)
    assert np.array_equal(v[0], v[1])
    assert np.allclose(np.linalg.norm(v, axis=1), 1.0)
    assert float(v[0] @ v[2]) < 1.0
    assert v[3][0] == 1.0 and np.count_nonzero(v[3]) == 1
    assert gw.embed(["x"], "hashing").shape == (1, 256)
    with pytest.raises(ValueError):
        gw.embed([], "hashing-256")


def test_hashing_embedder_is_case_and_punctuation_insensitive():
    e = HashingEmbedder(64)
    assert np.array_equal(e.embed_one("Hello, World!"), e.embed_one("hello world"))
    assert e.model == "hashing-64"


# -- remote -----------------------------------------------------------------


def completion(content="ok", tool_calls=None):
    msg = {"role": "assistant", "content": content}
    if tool_calls:
        msg["tool_calls"] = tool_calls
    return {"choices": [{"message": msg, "finish_reason": "stop"}], "usage": {"total_tokens": 7}}


def remote(handler, **kw):
    sleeps = []
    backend = RemoteBackend("http://provider.test/v1", "key", transport=httpx.MockTransport(handler),
                            sleep=sleeps.append, backoff=0.5, **kw)
    return backend, sleeps


def test_remote_chat_wire_shape():
    seen = {}

    def handler(request):
        seen["url"] = str(request.url)
        seen["auth"] = request.headers["authorization"]
        seen["body"] = parse_json(request.content)
        return httpx.Response(200, json=completion(None, [
            {"id": "c1", "type": "function", "function": {"name": "f", "arguments": '{"x": 2}'}}]))

    backend, _ = remote(handler)
    spec = ToolSpec("f", "does f", {"type": "object", "properties": {}})
    r = backend.chat(req(tool_specs=(spec,)))
    assert seen["url"] == "http://provider.test/v1/chat/completions"
    assert seen["auth"] == "Bearer key"
    assert seen["body"]["tools"][0]["function"]["name"] == "f"
    assert seen["body"]["temperature"] == 0 and seen["body"]["seed"] == 0
    assert r.tool_calls[0].arguments == {"x": 2} and r.usage == {"total_tokens": 7}


def test_remote_retries_with_exponential_backoff():
    attempts = []

    def handler(request):
        attempts.append(1)
        if len(attempts) == 1:
            raise httpx.ConnectError("refused")
        if len(attempts) < 4:
            return httpx.Response(503, text="busy")
        return httpx.Response(200, json=completion("finally"))

    backend, sleeps = remote(handler)
    assert backend.chat(req()).content == "finally"
    assert backend.calls == 4 and sleeps == [0.5, 1.0, 2.0]


def test_remote_gives_up_after_cap():
    backend, sleeps = remote(lambda r: (_ for _ in ()).throw(httpx.ConnectError("down")), max_retries=2)
    with pytest.raises(TransportError):
        backend.chat(req())
    assert backend.calls == 3 and len(sleeps) == 2


def test_remote_provider_error_surfaces_code():
    backend, _ = remote(lambda r: httpx.Response(400, json={"error": {"code": "bad_model", "message": "no"}}))
    with pytest.raises(ProviderError) as exc:
        backend.chat(req())
    assert exc.value.code == "bad_model" and backend.calls == 1


def test_remote_embeddings_sorted_by_index():
    body = {"data": [{"index": 1, "embedding": [0, 1]}, {"index": 0, "embedding": [1, 0]}]}
    backend, _ = remote(lambda r: httpx.Response(200, json=body))
    v = Gateway(backend).embed(["a", "b"], "emb")
    assert v.tolist() == [[1, 0], [0, 1]]


def test_remote_needs_credentials(monkeypatch):
    monkeypatch.delenv("SEAL_LLM_API_KEY", raising=False)
    with pytest.raises(GatewayError, match="SEAL_LLM_API_KEY"):
        RemoteBackend("http://x")


def test_replay_over_remote_makes_no_network_calls(tmp_path):
    backend, _ = remote(lambda r: httpx.Response(200, json=completion("net")))
    Gateway(RecordReplayBackend(ReplayStore(tmp_path), backend)).chat(req())
    counter, _ = remote(lambda r: httpx.Response(500))
    gw = Gateway(RecordReplayBackend(ReplayStore(tmp_path), counter, strict=True))
    assert gw.chat(req()).content == "net" and counter.calls == 0


# -- rate limiting and single-flight ----------------------------------------


def test_token_bucket_waits_when_empty():
    now = [0.0]
    sleeps = []

    def sleep(d):
        sleeps.append(d)
        now[0] += d

    bucket = TokenBucket(rate=2.0, capacity=1, max_concurrent=1, clock=lambda: now[0], sleep=sleep)
    with bucket:
        pass
    with bucket:
        pass
    assert sleeps == [0.5]


def test_single_flight_propagates_errors_and_forgets_keys():
    sf = SingleFlight()
    with pytest.raises(KeyError):
        sf.do("k", lambda: (_ for _ in ()).throw(KeyError("x")))
    assert sf.do("k", lambda: 3) == (3, False)
    assert sf.waiting("k") == 0
