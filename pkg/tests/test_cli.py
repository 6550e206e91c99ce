import json

import pytest

from trajreward.cli import default_config, main
from trajreward.io import ContainerRecord, read_jsonl, record_for, write_jsonl
from trajreward.scorer import StreamScorerServer, serve_in_thread
from trajreward.trajectory import make_trajectory


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def write_corpus(path, trajs):
    write_jsonl(path, [record_for(t).to_json() for t in trajs])
    return path


# -- validate ---------------------------------------------------------------


def test_validate_empty(tmp_path, capsys):
    p = tmp_path / "empty.jsonl"
    p.write_text("")
    code, out, _ = run(capsys, "validate", p)
    assert code == 0
    assert json.loads(out)["records"] == 0


def test_validate_golden(golden_path, golden_manifest, capsys):
    code, out, _ = run(capsys, "validate", golden_path)
    report = json.loads(out)
    assert code == 0
    assert report["categories"] == golden_manifest["categories"]
    assert report["parsed"] == 1000 and report["roundtrip_failures"] == []


def test_validate_malformed_reports_line(tmp_path, capsys, caplog):
    p = tmp_path / "bad.jsonl"
    good = record_for(make_trajectory(["ok"], answer="a", problem_id="g")).to_json()
    bad = ContainerRecord("b", make_trajectory(["ok"]).mode, "<step><thought>x").to_json()
    write_jsonl(p, [good, good, bad])
    code, out, _ = run(capsys, "validate", p)
    assert code == 1
    assert json.loads(out)["malformed"][0]["line"] == 3
    assert "line 3" in caplog.text


def test_validate_bad_json_is_input_error(tmp_path, capsys):
    p = tmp_path / "bad.jsonl"
    p.write_text("{not json\n")
    assert run(capsys, "validate", p)[0] == 2


def test_missing_file_is_input_error(tmp_path, capsys):
    assert run(capsys, "validate", tmp_path / "nope.jsonl")[0] == 2


# -- score ------------------------------------------------------------------


@pytest.fixture
def small_corpus(tmp_path):
    trajs = [make_trajectory(o, problem_id=f"p{i}", answer="a", stop_emitted=True)
             for i, o in enumerate([["ok"], ["error", "ok"], ["ok", "error"], ["no_execution", "ok", "ok"]])]
    return write_corpus(tmp_path / "c.jsonl", trajs)


def test_score_endpoints(small_corpus, capsys):
    _, out, _ = run(capsys, "score", small_corpus, "--step", 0, "--total-steps", 10)
    for row in map(json.loads, out.splitlines()):
        assert row["combined"] == row["structural"]
    _, out, _ = run(capsys, "score", small_corpus, "--step", 10, "--total-steps", 10, "--horizon", 1)
    for row in map(json.loads, out.splitlines()):
        assert row["combined"] == pytest.approx(row["hierarchical"] + row["efficiency_penalty"])
        assert row["efficiency_penalty"] < 0


def test_score_rule_equals_echo(small_corpus, tmp_path, capsys):
    srv = StreamScorerServer()
    serve_in_thread(srv)
    try:
        a = run(capsys, "score", small_corpus, "--step", 3, "--total-steps", 10)
        b = run(capsys, "score", small_corpus, "--step", 3, "--total-steps", 10, "--scorer", srv.endpoint)
    finally:
        srv.shutdown()
        srv.server_close()
    assert a[0] == b[0] == 0
    assert a[1] == b[1]


def test_score_scorer_down_keeps_going(small_corpus, capsys):
    code, out, _ = run(capsys, "score", small_corpus, "--scorer", "tcp://127.0.0.1:1", "--retries", 0)
    assert code == 3
    rows = [json.loads(x) for x in out.splitlines()]
    assert len(rows) == 4 and all("error" in r for r in rows)


def test_score_config_file_layering(small_corpus, tmp_path, capsys):
    cfg = tmp_path / "run.kv"
    cfg.write_text("step = 10\ntotal_steps = 10\n")
    _, out, _ = run(capsys, "score", small_corpus, "--config", cfg)
    assert all(json.loads(r)["lambdas"]["lambda_tag"] == pytest.approx(0.0, abs=1e-12) for r in out.splitlines())
    _, out, _ = run(capsys, "score", small_corpus, "--config", cfg, "--step", 0)
    assert all(json.loads(r)["lambdas"]["lambda_tag"] == 1.0 for r in out.splitlines())


# -- curate -----------------------------------------------------------------


def category_pool(counts):
    makers = {
        "success": lambda i: make_trajectory(["ok", "ok"], answer="a", problem_id=f"s{i}",
                                             thoughts=[f"load table {i}", f"report result {i}"]),
        "error_correction": lambda i: make_trajectory(["error", "ok"], answer="a", problem_id=f"e{i}",
                                                      thoughts=[f"read column {i}", f"fix key {i}"]),
        "self_correction": lambda i: make_trajectory(["ok", "ok"], answer="a", problem_id=f"c{i}",
                                                     thoughts=[f"sum {i}", f"I was wrong about {i}"]),
        "persistent_failure": lambda i: make_trajectory(["error"] * 3, problem_id=f"f{i}",
                                                        thoughts=[f"try {i}", f"retry {i}", f"again {i}"]),
    }
    return [makers[k](i) for k, n in counts.items() for i in range(n)]


def test_curate_exact_quotas(tmp_path, capsys):
    counts = {"success": 40, "error_correction": 35, "self_correction": 15, "persistent_failure": 10}
    corpus = write_corpus(tmp_path / "pool.jsonl", category_pool(counts))
    out = tmp_path / "out.jsonl"
    assert run(capsys, "curate", corpus, "-o", out, "-n", 100)[0] == 0
    strat = {r["category"]: r["count"] for r in read_jsonl(out.with_suffix(".stratification.jsonl"))}
    assert strat == counts
    assert len(list(read_jsonl(out))) == 100
    assert len(list(read_jsonl(out.with_suffix(".curation.jsonl")))) == 100


def test_curate_shortfall_names_category(tmp_path, capsys, caplog):
    counts = {"success": 40, "error_correction": 35, "self_correction": 14, "persistent_failure": 11}
    corpus = write_corpus(tmp_path / "pool.jsonl", category_pool(counts))
    code, _, _ = run(capsys, "curate", corpus, "-o", tmp_path / "out.jsonl", "-n", 100)
    assert code == 1
    assert "'self_correction' needs 15 trajectories, has 14" in caplog.text


def test_curate_deterministic(tmp_path, capsys):
    counts = {"success": 60, "error_correction": 50, "self_correction": 20, "persistent_failure": 20}
    corpus = write_corpus(tmp_path / "pool.jsonl", category_pool(counts))
    a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    for path in (a, b):
        assert run(capsys, "curate", corpus, "-o", path, "-n", 40, "--seed", 3)[0] == 0
    assert a.read_bytes() == b.read_bytes()


# -- grpo-step and coord-sim ---------------------------------------------------


def test_grpo_step(tmp_path, capsys):
    p = tmp_path / "samples.jsonl"
    rows = [
        {"group_id": "g", "completion_tokens": [1], "logp_policy": [-1.0], "logp_old": [-1.5],
         "logp_ref": [-0.8], "reward": 0.0},
        {"group_id": "g", "completion_tokens": [2], "logp_policy": [-0.2], "logp_old": [-0.1],
         "logp_ref": [-0.3], "reward": 2.0},
    ]
    write_jsonl(p, rows)
    code, out, _ = run(capsys, "grpo-step", p)
    assert code == 0
    assert json.loads(out)["loss"] == pytest.approx(0.3724663579144526, rel=1e-12)


def test_grpo_step_bad_sample(tmp_path, capsys):
    p = tmp_path / "samples.jsonl"
    write_jsonl(p, [{"completion_tokens": [1]}])
    assert run(capsys, "grpo-step", p)[0] == 2


def test_coord_sim(tmp_path, capsys):
    out = tmp_path / "trace.jsonl"
    code, _, err = run(capsys, "coord-sim", "--ranks", 3, "--rounds", 4, "--swap-every", 2, "-o", out)
    assert code == 0
    assert json.loads(err.strip().splitlines()[-1])["violations"] == 0
    first = out.read_bytes()
    run(capsys, "coord-sim", "--ranks", 3, "--rounds", 4, "--swap-every", 2, "-o", out)
    assert out.read_bytes() == first


def test_coord_sim_config_file(tmp_path, capsys):
    cfg = tmp_path / "sim.kv"
    cfg.write_text("ranks = 2\nrounds = 3\nseed = 4\n")
    code, out, _ = run(capsys, "coord-sim", "--config", cfg, "--rounds", 1)
    assert code == 0
    assert {json.loads(x)["round"] for x in out.splitlines()} == {0}


def test_show_config(capsys):
    code, out, _ = run(capsys, "--show-config")
    cfg = json.loads(out)
    assert code == 0
    assert cfg == json.loads(json.dumps(default_config()))
    assert cfg["grpo"]["delta_clamp"] == 4.0 and cfg["grpo"]["clip_epsilon"] == 0.2
    assert cfg["structural"]["tag_bonuses"]["<thought>"] == 0.8
    assert cfg["overthinking"]["weights"] == [0.4, 0.3, 0.3]
    assert cfg["rewards"]["penalty_beta"] == 0.2
    assert cfg["coordinator"]["context_window"] == 4096


def test_no_command(capsys):
    assert run(capsys)[0] == 2
