import json

import pytest

from conftest import fixture_tree
from hyperarbor.errors import (
    AuthMissing,
    ExhaustedAttempts,
    GatewayError,
    MalformedResponse,
    RateLimited,
    Timeout,
    TokenBudgetExceeded,
)
from hyperarbor.hierarchy import parse_text, serialize_text
from hyperarbor.llm import (
    FOLLOW_UP_CLOSE,
    LlmConfig,
    SessionTranscript,
    Turn,
    explanation_text,
    extract_hierarchy,
    follow_up_message,
    request_completion,
    restructure_session,
)
from hyperarbor.restructure import RecommendationSet, validate_candidate

ORIGINAL = parse_text("r\n  a\n    b\n      x\n      y\n  c\n")
FIXED = "r\n  b\n    x\n    y\n  c\n"


def _reply(tree=FIXED, prose="Removed the single-child node a."):
    return f"{prose}\n\n```\n{tree}```\n\nThe tree is now wider."


# -- transport ----------------------------------------------------------------


def test_missing_key_fails_before_network(monkeypatch):
    monkeypatch.delenv("LLM_API_KEY", raising=False)
    calls = []
    monkeypatch.setattr("httpx.Client.post", lambda *a, **k: calls.append(a))
    with pytest.raises(AuthMissing):
        request_completion(LlmConfig(), [Turn("user", "hi")])
    assert calls == []


def test_echo_reply_in_transcript(chat_server, llm_config):
    chat_server.script = ["fixed reply"]
    t = SessionTranscript()
    msg = Turn("user", "hello")
    reply = request_completion(llm_config, [msg], t)
    assert reply.content == "fixed reply" and reply.attempts == 1
    assert [x.content for x in t.turns] == ["hello", "fixed reply"]
    req = chat_server.requests[0]
    assert req["path"] == "/v1/chat/completions"
    assert req["auth"] == "Bearer test-key"
    assert req["body"] == {"model": "mock-model", "temperature": 0.0,
                           "messages": [{"role": "user", "content": "hello"}]}


def test_rate_limit_backoff(chat_server, llm_config):
    chat_server.script = [(429, {"error": "slow down"}), (429, {"error": "slow down"}), "ok"]
    waits = []
    reply = request_completion(llm_config, [Turn("user", "hi")], sleep=waits.append)
    assert reply.content == "ok" and reply.attempts == 3
    assert len(waits) == 2 and len(chat_server.requests) == 3


def test_backoff_doubles(chat_server):
    cfg = LlmConfig.from_env(backoff_base=0.5, trust_env=False)
    chat_server.script = [(429, {}), (429, {}), "ok"]
    waits = []
    request_completion(cfg, [Turn("user", "hi")], sleep=waits.append)
    assert waits == [0.5, 1.0]


def test_rate_limit_exhausted(chat_server, llm_config):
    chat_server.script = [(429, {})]
    with pytest.raises(RateLimited):
        request_completion(llm_config, [Turn("user", "hi")], sleep=lambda s: None)
    assert len(chat_server.requests) == 3


@pytest.mark.parametrize("payload", [{"choices": []}, {"nope": 1}, "not json",
                                     {"choices": [{"message": {"content": None}}]}])
def test_malformed(chat_server, llm_config, payload):
    chat_server.script = [(200, payload)]
    with pytest.raises(MalformedResponse):
        request_completion(llm_config, [Turn("user", "hi")])


def test_http_errors(chat_server, llm_config):
    chat_server.script = [(401, {"error": "bad key"})]
    with pytest.raises(GatewayError):
        request_completion(llm_config, [Turn("user", "hi")])


def test_timeout(chat_server, monkeypatch):
    import time as _time
    cfg = LlmConfig.from_env(timeout=0.2, trust_env=False)
    chat_server.script = [lambda body: (_time.sleep(1.0), "late")[1]]
    with pytest.raises(Timeout):
        request_completion(cfg, [Turn("user", "hi")])


def test_token_budget(chat_server):
    cfg = LlmConfig.from_env(token_budget=10, trust_env=False)
    with pytest.raises(TokenBudgetExceeded):
        request_completion(cfg, [Turn("user", "x" * 400)])
    assert chat_server.requests == []


def test_config_validation(monkeypatch):
    with pytest.raises(ValueError):
        LlmConfig(max_follow_ups=-1)
    with pytest.raises(ValueError):
        LlmConfig(timeout=0)
    monkeypatch.setenv("LLM_MODEL", "m2")
    monkeypatch.setenv("LLM_BASE_URL", "http://127.0.0.1:9/v1")
    cfg = LlmConfig.from_env()
    assert (cfg.model, cfg.base_url, cfg.max_follow_ups, cfg.max_restarts) == (
        "m2", "http://127.0.0.1:9/v1", 3, 2)
    assert "test-key" not in json.dumps(cfg.snapshot())


# -- extraction ---------------------------------------------------------------


def test_extract_fenced_block():
    assert extract_hierarchy(_reply()) == FIXED


def test_extract_unfenced_block():
    assert extract_hierarchy("Here it is:\n" + FIXED + "\nDone.") == FIXED


def test_extract_prose_only():
    assert extract_hierarchy("I could not restructure this hierarchy.\nSorry.") is None
    assert extract_hierarchy("") is None


def test_extract_prefers_longer_block():
    short = "p\n  q\n"
    reply = f"First try:\n```\n{short}```\nBetter:\n```\n{FIXED}```"
    assert extract_hierarchy(reply) == FIXED
    reply = f"```\n{FIXED}```\nor\n```\n{short}```"
    assert extract_hierarchy(reply) == FIXED


def test_extract_stops_at_grammar_break():
    text = "r\n  a\n      b\n"
    assert extract_hierarchy(text) == "r\n  a\n"


def test_explanation_excludes_tree():
    reply = _reply()
    prose = explanation_text(reply, extract_hierarchy(reply))
    assert "Removed the single-child node a." in prose and "wider" in prose
    assert "```" not in prose and "  x" not in prose


def test_follow_up_wording():
    rep = validate_candidate(ORIGINAL, "r\n  b\n    x\n  c\n  zzz\n")
    msg = follow_up_message(rep)
    assert msg.splitlines()[0] == "The previous hierarchy failed criterion 2: missing original leaf nodes: y."
    assert "criterion 3" in msg and "zzz" in msg
    assert msg.endswith(FOLLOW_UP_CLOSE)
    assert "criterion 1" not in msg and "criterion 4" not in msg


# -- sessions -----------------------------------------------------------------


def test_session_immediate_pass(chat_server, llm_config):
    chat_server.script = [_reply()]
    t = SessionTranscript()
    out = restructure_session(llm_config, ORIGINAL, RecommendationSet.all(), t)
    assert out.passed and out.candidate == parse_text(FIXED)
    assert (out.follow_ups, out.restarts) == (0, 0)
    assert "single-child" in out.explanation
    assert out.diff.removed_nodes == ("a",)
    assert t.hierarchy_blocks == [(1, FIXED)]
    assert [x.role for x in t.turns] == ["user", "assistant"]


def test_session_repair(chat_server, llm_config):
    chat_server.script = [_reply("r\n  b\n    x\n  c\n"), _reply()]
    t = SessionTranscript()
    out = restructure_session(llm_config, ORIGINAL, RecommendationSet.all(), t)
    assert (out.follow_ups, out.restarts) == (1, 0)
    follow = t.turns[2]
    assert follow.role == "user" and "criterion 2" in follow.content and "y" in follow.content
    # the second request carries the whole conversation
    assert len(chat_server.requests[1]["body"]["messages"]) == 3


def test_session_restart(chat_server):
    cfg = LlmConfig.from_env(max_follow_ups=1, max_restarts=1, trust_env=False)
    chat_server.script = [serialize_text(ORIGINAL), serialize_text(ORIGINAL), _reply()]
    t = SessionTranscript()
    out = restructure_session(cfg, ORIGINAL, RecommendationSet.all(), t)
    assert (out.follow_ups, out.restarts) == (0, 1)
    assert len(chat_server.requests[2]["body"]["messages"]) == 1  # fresh conversation


def test_session_exhaustion(chat_server, llm_config, tmp_path):
    chat_server.script = [serialize_text(ORIGINAL)]
    t = SessionTranscript()
    with pytest.raises(ExhaustedAttempts) as err:
        restructure_session(llm_config, ORIGINAL, RecommendationSet.all(), t)
    assert len(t.assistant_turns()) == 12
    assert not err.value.report.structurally_different
    path = tmp_path / "t.json"
    t.save(path)
    back = SessionTranscript.load(path)
    assert [x.content for x in back.turns] == [x.content for x in t.turns]


def test_transcript_complete_and_ordered(chat_server, llm_config):
    chat_server.script = [_reply("r\n  b\n    x\n  c\n"), _reply()]
    t = SessionTranscript()
    restructure_session(llm_config, ORIGINAL, RecommendationSet.all(), t)
    stamps = [x.timestamp for x in t.turns]
    assert stamps == sorted(stamps) and len(set(stamps)) == len(stamps)
    sent = [m["content"] for r in chat_server.requests for m in r["body"]["messages"]]
    for turn in t.turns:
        if turn.role == "user":
            assert turn.content in sent
    # every message appears once even though requests resend the history
    assert len(t.turns) == 4
    for idx, _ in t.hierarchy_blocks + t.explanation_blocks:
        assert t.turns[idx].role == "assistant"


def test_session_reproducible(chat_server, llm_config):
    outs = []
    for _ in range(2):
        chat_server.script = [_reply("r\n  b\n    x\n  c\n"), _reply()]
        out = restructure_session(llm_config, ORIGINAL, RecommendationSet.all())
        outs.append((serialize_text(out.candidate), out.explanation, out.follow_ups))
    assert outs[0] == outs[1]


def test_passing_outcome_always_valid(chat_server, llm_config):
    h = fixture_tree("core50")
    good = serialize_text(fixture_tree("core50_restructured"))
    chat_server.script = [good.replace("ball_1", "ball_9"), good]
    out = restructure_session(llm_config, h, RecommendationSet.all())
    assert validate_candidate(h, serialize_text(out.candidate)).passed()
    assert out.follow_ups == 1
