import json

import pytest

from rl2r.cli import EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC, EXIT_OK, main
from rl2r.data import compose_response
from rl2r.policy import PolicyParams


def run(tmp_path, *argv):
    return main([*argv, "--out", str(tmp_path)])


def test_simulate_writes_world(tmp_path):
    assert run(tmp_path, "simulate", "--seed", "4", "--run-name", "a",
               "--set", "n_images=30") == EXIT_OK
    rows = (tmp_path / "a" / "world.csv").read_text().splitlines()
    assert len(rows) == 31
    assert (tmp_path / "a" / "latent.csv").exists()
    assert "n_images = 30" in (tmp_path / "a" / "config.txt").read_text()


def test_simulate_same_seed_same_bytes(tmp_path):
    for name in ("a", "b"):
        run(tmp_path, "simulate", "--seed", "7", "--run-name", name)
    assert (tmp_path / "a" / "world.csv").read_bytes() == (tmp_path / "b" / "world.csv").read_bytes()


def test_invalid_scale_is_config_error(tmp_path):
    assert run(tmp_path, "simulate", "--set", "mos_low=5", "--set", "mos_high=1") == EXIT_CONFIG


def test_unknown_key_is_config_error(tmp_path, capsys):
    assert run(tmp_path, "simulate", "--set", "learning_rat=0.1") == EXIT_CONFIG
    assert "learning_rat" in capsys.readouterr().err


def test_config_file(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# small world\nn_images = 12\nseed = 2\n")
    assert run(tmp_path, "simulate", "--config", str(cfg), "--run-name", "c") == EXIT_OK
    assert len((tmp_path / "c" / "world.csv").read_text().splitlines()) == 13


def test_train_zero_epochs_then_eval(tmp_path):
    assert run(tmp_path, "train", "--epochs", "0", "--run-name", "t",
               "--set", "n_images=40") == EXIT_OK
    t = tmp_path / "t"
    ckpt = PolicyParams.from_json((t / "checkpoint.json").read_text())
    assert ckpt.log_std == pytest.approx(-0.6931471805599453)
    assert (t / "run_log.jsonl").read_text() == ""
    assert run(tmp_path, "eval", "--run-name", "e",
               "--set", f"checkpoint={t / 'checkpoint.json'}",
               "--set", f"world_csv={t / 'world.csv'}",
               "--set", f"latent_csv={t / 'latent.csv'}",
               "--set", f"split_file={t / 'split.json'}") == EXIT_OK
    metrics = json.loads((tmp_path / "e" / "metrics.json").read_text())
    assert metrics["vs_mos"]["n"] == 8
    assert len((tmp_path / "e" / "scores.csv").read_text().splitlines()) == 9


def test_train_short_run(tmp_path):
    assert run(tmp_path, "train", "--epochs", "2", "--run-name", "t",
               "--set", "n_images=40", "--variant", "case-v") == EXIT_OK
    t = tmp_path / "t"
    assert len((t / "run_log.jsonl").read_text().splitlines()) == 2 * 3
    assert (t / "std_curve.csv").read_text().startswith("step,mean_std\n")
    summary = json.loads((t / "train_summary.json").read_text())
    assert summary["steps"] == 6


def test_constant_policy_is_numeric_error(tmp_path):
    run(tmp_path, "simulate", "--run-name", "w", "--set", "n_images=10", "--set", "feature_dim=3")
    ckpt = tmp_path / "flat.json"
    ckpt.write_text(PolicyParams([0.0, 0.0, 0.0], 0.0, -1.0).to_json())
    code = run(tmp_path, "eval", "--set", f"checkpoint={ckpt}",
               "--set", f"world_csv={tmp_path / 'w' / 'world.csv'}")
    assert code == EXIT_NUMERIC


def test_missing_input_is_data_error(tmp_path):
    assert run(tmp_path, "eval", "--set", f"checkpoint={tmp_path / 'nope.json'}",
               "--set", "world_csv=x.csv") == EXIT_DATA


def _gmad_setup(tmp_path):
    run(tmp_path, "simulate", "--run-name", "w", "--set", "n_images=40", "--set", "feature_dim=3")
    ckpt = tmp_path / "a.json"
    ckpt.write_text(PolicyParams([1.0, -0.5, 0.3], 0.1, -1.0).to_json())
    return ckpt, tmp_path / "w"


def test_gmad_self_attack(tmp_path):
    ckpt, w = _gmad_setup(tmp_path)
    assert run(tmp_path, "gmad", "--run-name", "g", "--set", f"checkpoint={ckpt}",
               "--set", f"checkpoint_b={ckpt}", "--set", f"world_csv={w / 'world.csv'}",
               "--set", f"latent_csv={w / 'latent.csv'}", "--set", "gmad_tolerance=0.05",
               "--set", "n_levels=4") == EXIT_OK
    out = json.loads((tmp_path / "g" / "gmad.json").read_text())
    assert out["a_defends"]
    assert all(p["attacker_gap"] <= 0.05 for p in out["a_defends"] + out["b_defends"])
    assert (tmp_path / "g" / "gmad_b_defends.csv").exists()


def test_gmad_too_many_levels(tmp_path):
    ckpt, w = _gmad_setup(tmp_path)
    assert run(tmp_path, "gmad", "--run-name", "g", "--set", f"checkpoint={ckpt}",
               "--set", f"checkpoint_b={ckpt}", "--set", f"world_csv={w / 'world.csv'}",
               "--set", "n_levels=100") == EXIT_OK
    out = json.loads((tmp_path / "g" / "gmad.json").read_text())
    assert out["a_defends"] == [] and out["b_defends"] == []
    assert len(out["warnings"]) == 200


def _responses(tmp_path, bad=None):
    mos = tmp_path / "mos.csv"
    mos.write_text("image_id,mos,dataset_id\na,4.0,d\nb,2.0,d\nc,3.0,d\n")
    lines = []
    for iid, base in (("a", 3.5), ("b", 2.5), ("c", 3.0)):
        for k in range(6):
            lines.append({"image_id": iid, "text": compose_response(base + 0.1 * k, "ok")})
    if bad is not None:
        lines[1]["text"] = bad
    resp = tmp_path / "r.jsonl"
    resp.write_text("".join(json.dumps(x) + "\n" for x in lines))
    return mos, resp


def test_parse_logs_clamp_counter(tmp_path):
    mos, resp = _responses(tmp_path, "<think>harsh</think> <answer>0.2</answer>")
    assert run(tmp_path, "parse-logs", "--run-name", "p", "--clamp",
               "--set", f"mos_csv={mos}", "--set", f"responses={resp}") == EXIT_OK
    rep = json.loads((tmp_path / "p" / "reward_report.json").read_text())
    assert rep["clamped"] == 1
    assert rep["images"][0]["scores"][1] == 1.0
    assert all(0 <= r <= 1 for img in rep["images"] for r in img["rewards"])


def test_parse_logs_reject_underfills(tmp_path):
    mos, resp = _responses(tmp_path, "<answer>0.2</answer>")
    assert run(tmp_path, "parse-logs", "--reject",
               "--set", f"mos_csv={mos}", "--set", f"responses={resp}") == EXIT_DATA


def test_parse_logs_empty_file(tmp_path):
    mos, _ = _responses(tmp_path)
    empty = tmp_path / "empty.jsonl"
    empty.write_text("")
    assert run(tmp_path, "parse-logs", "--set", f"mos_csv={mos}",
               "--set", f"responses={empty}") == EXIT_DATA
