import json

import pytest

from opcost.cli import main
from opcost.plan import PlanOperator, QueryPlan, dumps_plans
from opcost.plan import OperatorKind as K


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_estimate_example_fixture(tmp_path, capsys):
    code, out, _ = run(capsys, "estimate", "--fixture", "example", "--out-dir", str(tmp_path))
    assert code == 0
    assert "pivot record_id=2" in out and "lambda=10" in out
    assert "total=1150\n" in out
    doc = json.loads((tmp_path / "estimates.jsonl").read_text())
    # models are fitted by least squares here, so allow float noise
    assert doc["total"] == pytest.approx(1150, rel=1e-12)
    assert [o["contribution"] for o in doc["operators"]] == pytest.approx([100, 50, 200, 500, 300], rel=1e-12)


def test_analyze_degenerate_workload_fails(tmp_path, capsys):
    plans = [
        QueryPlan(q, 2, {
            1: PlanOperator(1, K.TABLE_SCAN, 10, 100, 10, act_cost=1.0 + i),
            2: PlanOperator(2, K.HASH_JOIN, 5, 10, 5, act_cost=2.0, children=(1,)),
        })
        for i, q in enumerate(("a", "b"))
    ]
    path = tmp_path / "plans.jsonl"
    path.write_text(dumps_plans(plans))
    code, _, err = run(capsys, "analyze", "--plans", str(path), "--out-dir", str(tmp_path))
    assert code != 0
    line = json.loads(err.strip())
    assert line["error"] == "DegenerateVarianceError"
    assert "zero variance" in line["message"]
    assert not (tmp_path / "analysis.json").exists()


def test_generate_is_byte_identical(tmp_path, capsys):
    config = tmp_path / "config.json"
    config.write_text(json.dumps({"synth_spec": {
        "n_queries": 50, "target_corr": [[1, 0.5, 0.2], [0.5, 1, 0.6], [0.2, 0.6, 1]],
        "scale": [100, 100, 100, 10, 10, 10]}}))
    outputs = []
    for name in ("a", "b"):
        out_dir = tmp_path / name
        code, *_ = run(capsys, "generate", "--seed", "5", "--queries", "30", "--config", str(config), "--out-dir", str(out_dir))
        assert code == 0
        outputs.append({p.name: p.read_bytes() for p in sorted(out_dir.iterdir())})
    assert set(outputs[0]) == {"plans.jsonl", "triples.csv"}
    assert outputs[0] == outputs[1]


def test_generate_needs_seed(tmp_path, capsys):
    code, _, err = run(capsys, "generate", "--out-dir", str(tmp_path))
    assert code == 1 and "seed" in json.loads(err)["message"]


def test_missing_input_path(tmp_path, capsys):
    code, _, err = run(capsys, "estimate", "--plans", str(tmp_path / "nope.jsonl"))
    assert code == 1 and json.loads(err)["error"] == "FileNotFoundError"


def test_unknown_config_key(tmp_path, capsys):
    config = tmp_path / "c.json"
    config.write_text('{"colour": 1}')
    code, _, err = run(capsys, "train", "--config", str(config))
    assert code == 1 and "colour" in err


def test_pipeline_round_trip(tmp_path, capsys):
    d = str(tmp_path)
    assert run(capsys, "generate", "--seed", "2", "--queries", "60", "--out-dir", d)[0] == 0
    code, out, _ = run(capsys, "train", "--plans", f"{d}/plans.jsonl", "--out-dir", d)
    assert code == 0
    assert out.count("trained") == 3
    code, out_models, _ = run(capsys, "estimate", "--plans", f"{d}/plans.jsonl", "--models", f"{d}/models.json",
                              "--feedback", f"{d}/feedback.jsonl", "--out-dir", f"{d}/m")
    code2, out_fit, _ = run(capsys, "estimate", "--plans", f"{d}/plans.jsonl", "--out-dir", f"{d}/f")
    assert code == code2 == 0
    assert out_models.splitlines()[0] == out_fit.splitlines()[0]
    code, out, _ = run(capsys, "analyze", "--plans", f"{d}/plans.jsonl", "--out-dir", d, "--eta-prime-inf", "1e9")
    assert code == 0 and "eta_prime_infinity=1e+09" in out
    report = json.loads((tmp_path / "analysis.json").read_text())
    assert report["pearson_PPprime"] == pytest.approx(report["rho_closed_form"], rel=1e-9)
    for name in ("lower_bounds.csv", "eta0_vs_alpha.csv", "eta0_max_vs_eps.csv", "rho_approx_vs_eta.csv"):
        assert (tmp_path / name).read_text().count("\n") > 10


def test_threshold_flag_overrides_config(tmp_path, capsys):
    d = str(tmp_path)
    run(capsys, "generate", "--seed", "2", "--queries", "5", "--out-dir", d)
    config = tmp_path / "c.json"
    config.write_text('{"threshold": 1000}')
    _, out, _ = run(capsys, "train", "--plans", f"{d}/plans.jsonl", "--config", str(config), "--out-dir", d)
    assert "trained" not in out
    _, out, _ = run(capsys, "train", "--plans", f"{d}/plans.jsonl", "--config", str(config), "--threshold", "2", "--out-dir", d)
    assert "trained" in out


def test_tune_small(tmp_path, capsys):
    code, out, _ = run(capsys, "tune", "--seed", "7", "--queries", "20", "--tau", "0,0.2", "--out-dir", str(tmp_path))
    assert code == 0
    assert [l.split()[0] for l in out.splitlines() if l.startswith("tau=")] == ["tau=0", "tau=0.2"]
    hist = json.loads((tmp_path / "tuning_histogram.json").read_text())
    assert set(hist["by_tau"]) == {"0.0", "0.2"}
    rows = (tmp_path / "tuning_report.csv").read_text().splitlines()
    assert rows[0].startswith("query_id,mode") and len(rows) == 1 + 2 * 2 * 20 * 5
