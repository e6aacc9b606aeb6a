from __future__ import annotations

import json
import os
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer

import httpx
import pytest

from ladderqa import evalharness as eh
from ladderqa.graph import catalog
from ladderqa.evalharness import (
    SUBQUESTIONS,
    ConfigError,
    GradeError,
    HttpClient,
    MockClient,
    Transcript,
    causalcot_prompts,
    chain_prompt,
    grade,
    parse_final_answer,
    read_transcripts,
    record_question,
    run,
    run_record,
    score_steps,
    write_transcripts,
)


def test_five_subquestions():
    assert len(SUBQUESTIONS) == 5
    assert "causal graph" in SUBQUESTIONS[0]
    assert SUBQUESTIONS[4].startswith("Given all the information above, solve for the query")


def test_chain_prompt_shape():
    subs = ["s1", "s2", "s3"]
    assert chain_prompt("q", subs, []) == "q\n\ns1"
    assert chain_prompt("q", subs, ["r1", "r2"]) == "q\n\ns1\nr1\n\ns2\nr2\n\ns3"
    with pytest.raises(ValueError):
        chain_prompt("q", subs, ["a", "b", "c"])


def test_drop_steps(small_dataset):
    r = small_dataset[0]
    assert len(causalcot_prompts(r, (1, 3))) == 3
    with pytest.raises(ValueError):
        causalcot_prompts(r, (5,))


@pytest.mark.parametrize(
    "text,want",
    [
        ("... Final answer: yes", "yes"),
        ("Final answer: **No**.", "no"),
        ("So the answer is yes", "yes"),
        ("Yes, because the effect is positive.", "yes"),
        ("The estimate is 0.40", "unknown"),
        ("", "unknown"),
        ("first I thought yes. Final answer: no", "no"),
    ],
)
def test_parse_final_answer(text, want):
    assert parse_final_answer(text) == want


def test_prompts_never_carry_ground_truth(small_dataset):
    for r in small_dataset[:30]:
        tr = run_record(r, MockClient.constant("yes"))
        for s in tr.steps:
            assert r.reasoning not in s["prompt"]
            assert r.estimand not in s["prompt"]
            assert "overall answer to the question" not in s["prompt"]


def test_run_preserves_order_and_does_not_mutate(small_dataset):
    before = [r.to_json() for r in small_dataset]
    trs = run(small_dataset, MockClient.from_answers(small_dataset), parallelism=8)
    assert [t.record_id for t in trs] == [r.id for r in small_dataset]
    assert [r.to_json() for r in small_dataset] == before


def test_client_errors_are_captured(small_dataset):
    def boom(prompt, step):
        raise RuntimeError("down")

    tr = run_record(small_dataset[0], MockClient(boom))
    assert tr.errored and tr.final_answer == "unknown" and "down" in tr.error


def test_grading_errors(small_dataset):
    recs = small_dataset[:3]
    trs = [Transcript(r.id, final_answer=r.answer) for r in recs]
    assert grade(trs, recs).overall == 100.0
    with pytest.raises(GradeError):
        grade(trs[:2], recs)
    with pytest.raises(GradeError):
        grade(trs + [Transcript("nope")], recs)
    with pytest.raises(GradeError):
        grade(trs + trs[:1], recs)


def test_unknown_counts_as_incorrect(small_dataset):
    recs = small_dataset[:4]
    trs = [Transcript(r.id, final_answer="unknown") for r in recs]
    rep = grade(trs, recs)
    assert rep.overall == 0.0 and rep.unknown_rate == 1.0


def test_grading_is_deterministic(small_dataset):
    trs = run(small_dataset, MockClient.constant("no"))
    assert grade(trs, small_dataset).to_json() == grade(list(trs), list(small_dataset)).to_json()


def test_report_table_format(small_dataset):
    trs = run(small_dataset[:10], MockClient.from_answers(small_dataset))
    line = grade(trs, small_dataset[:10], name="GPT-4").table().splitlines()[0]
    assert line == "GPT-4: 100.00 overall (n=10)"


def test_transcript_round_trip(tmp_path, small_dataset):
    trs = run(small_dataset[:5], MockClient.constant("yes"))
    path = tmp_path / "t.jsonl"
    write_transcripts(trs, path)
    assert [t.to_json() for t in read_transcripts(path)] == [t.to_json() for t in trs]


def test_step_scoring_with_perfect_step_one(small_dataset):
    recs = small_dataset[:20]
    by_q = {record_question(r): r for r in recs}

    def script(prompt, step):
        r = by_q[prompt.split("\n\n", 1)[0]]
        if step == 1:
            return ", ".join(f"{a} -> {b}" for a, b in catalog(r.graph).edge_list())
        if step == 2:
            from ladderqa.query import QueryType

            return f'"{QueryType(r.query_type).label}"'
        return f"Final answer: {r.answer}"

    out = score_steps(run(recs, MockClient(script)), recs)
    assert out["step1"]["edge_f1"] == 1.0
    assert out["step2"]["accuracy"] == 1.0


# HTTP client

def _ok(text="Final answer: yes"):
    return httpx.Response(200, json={"choices": [{"message": {"content": text}}], "usage": {"total_tokens": 3}})


def test_http_config_errors(monkeypatch):
    for var in (eh.ENV_ENDPOINT, eh.ENV_MODEL, eh.ENV_TOKEN):
        monkeypatch.delenv(var, raising=False)
    with pytest.raises(ConfigError):
        HttpClient()
    with pytest.raises(ConfigError):
        HttpClient(endpoint="http://x/v1")
    with pytest.raises(ConfigError):
        HttpClient(endpoint="ftp://x", model="m")


def test_http_retries_then_succeeds():
    calls, sleeps = [], []

    def handler(request):
        calls.append(json.loads(request.content))
        return httpx.Response(503) if len(calls) < 3 else _ok()

    c = HttpClient("http://stub/v1/chat", model="m", token="t", sleep=sleeps.append,
                   transport=httpx.MockTransport(handler))
    comp = c.send("hello")
    assert comp.text == "Final answer: yes"
    assert len(calls) == 3 and sleeps == [1.0, 2.0]
    assert calls[0]["messages"][1]["content"] == "hello"
    assert calls[0]["temperature"] == 0.0


def test_http_gives_up_after_max_attempts():
    calls = []

    def handler(request):
        calls.append(1)
        return httpx.Response(429)

    c = HttpClient("http://stub/v1", model="m", sleep=lambda s: None, transport=httpx.MockTransport(handler))
    with pytest.raises(eh.TransientError):
        c.send("x")
    assert len(calls) == eh.MAX_ATTEMPTS


def test_http_client_error_not_retried():
    calls = []

    def handler(request):
        calls.append(1)
        return httpx.Response(400)

    c = HttpClient("http://stub/v1", model="m", sleep=lambda s: None, transport=httpx.MockTransport(handler))
    with pytest.raises(httpx.HTTPStatusError):
        c.send("x")
    assert len(calls) == 1


class _Stub(BaseHTTPRequestHandler):
    seen: list = []

    def do_POST(self):
        body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
        _Stub.seen.append((self.headers.get("Authorization"), body))
        out = json.dumps({"choices": [{"message": {"content": "Final answer: no"}}]}).encode()
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(out)))
        self.end_headers()
        self.wfile.write(out)

    def log_message(self, *args):
        pass


def test_local_http_stub_end_to_end(small_dataset):
    server = HTTPServer(("127.0.0.1", 0), _Stub)
    t = threading.Thread(target=server.serve_forever, daemon=True)
    t.start()
    try:
        url = f"http://127.0.0.1:{server.server_port}/v1/chat/completions"
        client = HttpClient(url, model="stub-model", token="secret")
        trs = run(small_dataset[:3], client, parallelism=2)
        client.close()
    finally:
        server.shutdown()
    assert all(tr.final_answer == "no" and not tr.errored for tr in trs)
    assert len(_Stub.seen) == 15
    assert all(auth == "Bearer secret" for auth, _ in _Stub.seen)


@pytest.mark.live
@pytest.mark.skipif(not os.environ.get(eh.ENV_ENDPOINT), reason="set LADDERQA_ENDPOINT to run the live smoke test")
def test_live_smoke(small_dataset):
    client = HttpClient()
    trs = run(small_dataset[:2], client, parallelism=1)
    assert all(not t.errored for t in trs)
