import json
import subprocess
import sys

import numpy as np
import pytest

from dpcgan.cli import build_parser, config_hash, main
from dpcgan.constraints import save_rules
from dpcgan.data import save_schema, write_csv
from dpcgan.toy import make_toy_dataset

FAST = ["--steps", "30", "--no-budget"]


@pytest.fixture
def inputs(tmp_path):
    table, cs = make_toy_dataset(rng=np.random.default_rng(3))
    d = tmp_path / "data"
    d.mkdir()
    write_csv(table, d / "toy.csv")
    save_schema(table.schema, d / "schema.json")
    save_rules(cs, d / "rules.json")
    other, _ = make_toy_dataset(rng=np.random.default_rng(99))
    write_csv(other, d / "other.csv")
    return {"dir": d, "data": str(d / "toy.csv"), "schema": str(d / "schema.json"),
            "rules": str(d / "rules.json"), "other": str(d / "other.csv")}


def base(inputs):
    return ["--data", inputs["data"], "--schema", inputs["schema"], "--rules", inputs["rules"]]


@pytest.fixture
def trained(tmp_path, inputs):
    out = tmp_path / "run"
    assert main(["train", *base(inputs), *FAST, "--out-dir", str(out)]) == 0
    return out


def test_help_lists_every_named_flag(capsys):
    parser = build_parser()
    shared = ["--config", "--seed", "--out-dir", "--data", "--schema", "--rules"]
    for cmd in ("train", "generate", "evaluate", "attack", "experiment", "validate-rules"):
        with pytest.raises(SystemExit):
            parser.parse_args([cmd, "--help"])
        text = capsys.readouterr().out
        assert all(f in text for f in shared), cmd
    with pytest.raises(SystemExit):
        parser.parse_args(["generate", "--help"])
    assert "--reject-invalid" in capsys.readouterr().out


def test_console_script_help():
    res = subprocess.run([sys.executable, "-m", "dpcgan.cli", "--help"], capture_output=True, text=True)
    assert res.returncode == 0
    assert "validate-rules" in res.stdout


def test_train_smoke(trained):
    rep = json.loads((trained / "train_report.json").read_text())
    assert (trained / "model.json").is_file()
    assert rep["steps"] == 30 and rep["status"] == "completed"
    assert rep["final_epsilon"] is not None and rep["final_epsilon"] > 0
    man = json.loads((trained / "manifest.json").read_text())
    assert {"model.json", "train_report.json", "audit.jsonl"} <= set(man["files"])


def test_train_deterministic(tmp_path, inputs, trained):
    out2 = tmp_path / "run2"
    assert main(["train", *base(inputs), *FAST, "--out-dir", str(out2)]) == 0
    assert (trained / "train_report.json").read_bytes() == (out2 / "train_report.json").read_bytes()
    assert (trained / "model.json").read_bytes() == (out2 / "model.json").read_bytes()


def test_missing_rules_names_path(tmp_path, inputs, capsys):
    missing = str(tmp_path / "nowhere" / "rules.json")
    code = main(["train", "--data", inputs["data"], "--schema", inputs["schema"], "--rules", missing,
                 "--out-dir", str(tmp_path / "o")])
    assert code == 2
    assert missing in capsys.readouterr().err


def test_precedence_flags_over_config(tmp_path, inputs):
    cfg = tmp_path / "c.toml"
    cfg.write_text("seed = 4\n[train]\nsteps = 12\nenforce_budget = false\n")
    assert main(["train", *base(inputs), "--config", str(cfg), "--out-dir", str(tmp_path / "a")]) == 0
    assert json.loads((tmp_path / "a" / "train_report.json").read_text())["steps"] == 12
    assert main(["train", *base(inputs), "--config", str(cfg), "--steps", "5", "--out-dir", str(tmp_path / "b")]) == 0
    man = json.loads((tmp_path / "b" / "manifest.json").read_text())
    assert man["config"]["train"]["steps"] == 5 and man["seed"] == 4


@pytest.mark.parametrize("body,field", [("[train]\nfoo = 1\n", "train.foo"), ("bogus = 1\n", "bogus"),
                                        ("[train]\nsteps = 0\n", "steps")])
def test_bad_config_field_level_error(tmp_path, inputs, capsys, body, field):
    cfg = tmp_path / "c.toml"
    cfg.write_text(body)
    assert main(["train", *base(inputs), "--config", str(cfg), "--out-dir", str(tmp_path / "o")]) == 2
    assert field in capsys.readouterr().err


def test_budget_halt_exits_zero(tmp_path, inputs):
    out = tmp_path / "o"
    assert main(["train", *base(inputs), "--steps", "500", "--target-epsilon", "3", "--out-dir", str(out)]) == 0
    rep = json.loads((out / "train_report.json").read_text())
    assert rep["status"] == "budget_exhausted" and rep["final_epsilon"] <= 3


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_exits_three(tmp_path, inputs):
    code = main(["train", *base(inputs), "--steps", "5", "--lr-d", "1e300", "--clip", "inf",
                 "--noise-multiplier", "0", "--out-dir", str(tmp_path / "o")])
    assert code == 3


def test_generate(tmp_path, trained):
    ck = str(trained / "model.json")
    a, b = tmp_path / "g1" / "s.csv", tmp_path / "g2" / "s.csv"
    assert main(["generate", "--checkpoint", ck, "--count", "500", "--out", str(a)]) == 0
    assert main(["generate", "--checkpoint", ck, "--count", "500", "--out", str(b)]) == 0
    lines = a.read_text().splitlines()
    assert len(lines) == 501 and lines[0].startswith("age,")
    assert a.read_bytes() == b.read_bytes()
    c = tmp_path / "g3" / "s.csv"
    assert main(["generate", "--checkpoint", ck, "--count", "500", "--out", str(c), "--reject-invalid"]) == 0
    assert json.loads(c.with_suffix(".violations.json").read_text())["violation_rate"] == 0.0


def test_generate_corrupt_checkpoint(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{"format": "something-else"}')
    assert main(["generate", "--checkpoint", str(bad), "--out-dir", str(tmp_path / "o")]) == 2
    assert "checkpoint" in capsys.readouterr().err


def test_evaluate_synth_equals_real(tmp_path, inputs):
    out = tmp_path / "ev"
    args = ["evaluate", "--data", inputs["data"], "--schema", inputs["schema"], "--synth", inputs["data"],
            "--test", inputs["other"], "--out-dir", str(out)]
    assert main(args) == 0
    doc = json.loads((out / "evaluation.json").read_text())
    f = doc["fidelity"]
    assert f["distance"] == 0 and f["aggregate_emd"] == 0
    assert all(v == 0 for v in f["emd"].values())
    for row in doc["utility"]["rows"]:
        assert all(v == 0 for v in row["gap"].values())
    header = (out / "evaluation.txt").read_text().splitlines()[1].split()
    assert header == ["model", "EMD", "Distance"]


def test_evaluate_fidelity_only(tmp_path, inputs):
    out = tmp_path / "ev"
    assert main(["evaluate", "--data", inputs["data"], "--schema", inputs["schema"], "--synth", inputs["other"],
                 "--no-utility", "--out-dir", str(out)]) == 0
    doc = json.loads((out / "evaluation.json").read_text())
    assert "fidelity" in doc and "utility" not in doc


def test_evaluate_schema_mismatch(tmp_path, inputs):
    bad = tmp_path / "bad.csv"
    bad.write_text("a,b\n1,2\n")
    assert main(["evaluate", "--data", inputs["data"], "--schema", inputs["schema"], "--synth", str(bad),
                 "--out-dir", str(tmp_path / "o")]) == 2


def test_attack_report_counts(tmp_path, inputs, trained):
    out = tmp_path / "at"
    args = ["attack", "--data", inputs["data"], "--schema", inputs["schema"], "--checkpoint",
            str(trained / "model.json"), "--non-members", inputs["other"], "--out-dir", str(out)]
    assert main(args) == 0
    reps = json.loads((out / "attacks.json").read_text())
    reid = [r for r in reps if r["attack"] == "reidentification"]
    assert [r["params"]["overlap"] for r in reid] == [0.3, 0.6, 0.9]
    mia = sorted(r["params"]["setting"] for r in reps if r["attack"] == "membership_inference")
    assert mia == ["FBB", "WB"]
    assert all("baseline" in r for r in reps)


def test_attack_independent_synth_is_chance(tmp_path, inputs):
    # synth and non-members are independent draws from the generating story, so nothing can leak
    nm = tmp_path / "nm" / "nm.csv"
    nm.parent.mkdir()
    write_csv(make_toy_dataset(rng=np.random.default_rng(7))[0], nm)
    out = tmp_path / "at"
    assert main(["attack", "--data", inputs["data"], "--schema", inputs["schema"], "--synth", inputs["other"],
                 "--non-members", str(nm), "--mia-settings", "FBB", "--out-dir", str(out)]) == 0
    for r in json.loads((out / "attacks.json").read_text()):
        if r["attack"] == "reidentification":
            assert r["success"] < 0.05
        else:
            assert abs(r["success"] - r["baseline"]) <= 0.05, r


def test_attack_wb_needs_checkpoint(tmp_path, inputs, capsys):
    code = main(["attack", "--data", inputs["data"], "--schema", inputs["schema"], "--synth", inputs["other"],
                 "--non-members", inputs["other"], "--attacks", "mia", "--out-dir", str(tmp_path / "o")])
    assert code == 2
    assert "checkpoint" in capsys.readouterr().err


def test_attack_mia_needs_non_members(tmp_path, inputs):
    code = main(["attack", "--data", inputs["data"], "--schema", inputs["schema"], "--synth", inputs["other"],
                 "--attacks", "mia", "--mia-settings", "FBB", "--out-dir", str(tmp_path / "o")])
    assert code == 2


def test_never_writes_into_input_dir(inputs, trained):
    before = sorted(p.name for p in inputs["dir"].rglob("*"))
    for out in (inputs["dir"], inputs["dir"] / "sub"):
        assert main(["train", *base(inputs), *FAST, "--out-dir", str(out)]) == 2
        assert main(["evaluate", "--data", inputs["data"], "--schema", inputs["schema"], "--synth", inputs["other"],
                     "--out-dir", str(out)]) == 2
        assert main(["generate", "--checkpoint", str(trained / "model.json"), "--data", inputs["data"],
                     "--out", str(out / "s.csv")]) == 2
    assert sorted(p.name for p in inputs["dir"].rglob("*")) == before


def test_validate_rules(inputs, tmp_path, capsys):
    assert main(["validate-rules", "--schema", inputs["schema"], "--rules", inputs["rules"],
                 "--data", inputs["data"]]) == 0
    assert "violation rate 0.0000" in capsys.readouterr().out
    bad = tmp_path / "bad.json"
    bad.write_text('{"rules": [{"id": "x", "kind": "forbid", "if": [{"column": "nope", "op": "eq", "value": "a"}]}]}')
    assert main(["validate-rules", "--schema", inputs["schema"], "--rules", str(bad)]) == 2


def test_toy_conflicts_with_data(tmp_path, inputs):
    assert main(["train", "--toy", "--rules", inputs["rules"], "--out-dir", str(tmp_path / "o")]) == 2


def test_experiment_deterministic(tmp_path):
    runs = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert main(["experiment", "--toy", "--toy-rows", "600", "--steps", "40", "--no-budget",
                     "--out-dir", str(out)]) == 0
        runs.append(out)
    ma, mb = (json.loads((r / "manifest.json").read_text()) for r in runs)
    for m in (ma, mb):
        m.pop("timestamps")
    assert ma == mb
    listed = set(ma["files"]) | {"manifest.json"}
    on_disk = {p.relative_to(runs[0]).as_posix() for p in runs[0].rglob("*") if p.is_file()}
    assert listed == on_disk
    for f in ("evaluation.json", "attacks.json", "synthetic.csv", "train_report.json"):
        assert (runs[0] / f).read_bytes() == (runs[1] / f).read_bytes()


def test_config_hash_stable():
    cfg = {"seed": 1, "out_dir": "x", "train": {"lam": 5.0, "steps": 3}}
    again = json.loads(json.dumps(cfg))
    again["out_dir"] = "elsewhere"
    assert config_hash(cfg) == config_hash(again)
    again["seed"] = 2
    assert config_hash(cfg) != config_hash(again)


def test_synth_log_level(tmp_path, inputs):
    env_run = lambda level: subprocess.run(
        [sys.executable, "-m", "dpcgan.cli", "train", *base(inputs), *FAST, "--out-dir", str(tmp_path / level)],
        capture_output=True, text=True, env={**__import__("os").environ, "SYNTH_LOG": level})
    assert "INFO" in env_run("info").stderr
    assert "INFO" not in env_run("error").stderr
