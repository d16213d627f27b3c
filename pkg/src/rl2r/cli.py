"""Command-line entry point.

Commands: ``simulate``, ``train``, ``eval``, ``gmad``, ``parse-logs``. Every
command reads an optional flat ``key = value`` config file, applies flag
overrides, writes its outputs plus the fully resolved config into a fresh run
directory, and exits with 0 (ok), 2 (config error), 3 (data error) or 4
(numeric failure).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import math
import sys
import time
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from . import data as D
from .estimator import RL2RRegressor
from .evaluation import (UndefinedMetricError, adjudicate, gmad_pairs, metric_report,
                         score_std_curve, write_records_csv, write_records_json,
                         write_std_curve_csv, GmadPair)
from .policy import GaussianScorePolicy, PolicyParams
from .quality_core import preference_matrix
from .reward import RewardKind, batch_rewards
from .thurstone import ThurstoneConfig, Variant

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    # shared
    seed: int = 0
    out_dir: str = "runs"
    run_name: str = ""
    # synthetic world
    n_images: int = 200
    feature_dim: int = 8
    mos_noise_std: float = 0.1
    mos_low: float = 1.0
    mos_high: float = 5.0
    compress: bool = False
    dataset_id: str = "synthetic"
    # training
    world_csv: str = ""
    latent_csv: str = ""
    epochs: int = 10
    batch_size: int = 8
    k_responses: int = 6
    learning_rate: float = 1e-2
    epsilon: float = 0.2
    beta: float = 0.04
    gamma: float = 1e-8
    variant: str = "mean-anchored"
    reward: str = "fidelity"
    tie_tol: float = 0.0
    variance_ddof: int = 0
    binary_tie_band: float = 0.1
    old_refresh: str = "epoch"
    init_log_std: float = math.log(0.5)
    train_fraction: float = 0.6
    val_fraction: float = 0.2
    # evaluation
    checkpoint: str = ""
    eval_csv: str = ""
    split_file: str = ""
    split: str = "test"
    # gMAD
    checkpoint_b: str = ""
    scores_a: str = ""
    scores_b: str = ""
    n_levels: int = 5
    gmad_tolerance: float = 0.0
    # response logs
    responses: str = ""
    mos_csv: str = ""
    clamp_policy: str = "clamp"

    def validate(self) -> None:
        try:
            Variant(self.variant)
            RewardKind(self.reward)
            D.ClampPolicy(self.clamp_policy)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if self.mos_high <= self.mos_low:
            raise ConfigError(f"mos_high ({self.mos_high}) must exceed mos_low ({self.mos_low})")
        if self.n_images < 2:
            raise ConfigError("n_images must be at least 2")
        if self.feature_dim < 1:
            raise ConfigError("feature_dim must be positive")
        if self.epochs < 0 or self.batch_size < 2 or self.k_responses < 2:
            raise ConfigError("need epochs >= 0, batch_size >= 2, k_responses >= 2")
        if not 0 < self.epsilon < 1 or self.beta < 0 or self.gamma <= 0:
            raise ConfigError("need 0 < epsilon < 1, beta >= 0, gamma > 0")
        if self.old_refresh not in ("epoch", "step"):
            raise ConfigError("old_refresh must be 'epoch' or 'step'")
        if self.split not in ("train", "val", "test", "all"):
            raise ConfigError("split must be train, val, test or all")
        if self.n_levels < 1:
            raise ConfigError("n_levels must be at least 1")
        if self.gmad_tolerance < 0:
            raise ConfigError("gmad_tolerance must be non-negative (0 picks the default)")
        if not (0 < self.train_fraction and 0 <= self.val_fraction
                and self.train_fraction + self.val_fraction <= 1):
            raise ConfigError("bad train/val fractions")

    def set(self, key: str, raw: str) -> None:
        types = {f.name: f.type for f in fields(self)}
        if key not in types:
            raise ConfigError(f"unknown config key {key!r}")
        typ = types[key]
        try:
            if typ == "bool":
                low = raw.strip().lower()
                if low not in ("true", "false", "1", "0", "yes", "no"):
                    raise ValueError(raw)
                value = low in ("true", "1", "yes")
            elif typ == "int":
                value = int(raw)
            elif typ == "float":
                value = float(raw)
            else:
                value = raw.strip()
        except ValueError:
            raise ConfigError(f"bad value for {key}: {raw!r}") from None
        setattr(self, key, value)

    def dump(self) -> str:
        return "".join(f"{f.name} = {getattr(self, f.name)}\n" for f in fields(self))


def read_config_file(path, cfg: RunConfig) -> None:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    for n, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{n}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        cfg.set(key, value)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rl2r", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("simulate", "train", "eval", "gmad", "parse-logs"):
        p = sub.add_parser(name)
        p.add_argument("--config", help="flat key = value config file")
        p.add_argument("--seed", type=int)
        p.add_argument("--epochs", type=int)
        p.add_argument("--variant", choices=[v.value for v in Variant])
        p.add_argument("--reward", choices=[r.value for r in RewardKind])
        g = p.add_mutually_exclusive_group()
        g.add_argument("--clamp", dest="clamp_policy", action="store_const", const="clamp")
        g.add_argument("--reject", dest="clamp_policy", action="store_const", const="reject")
        p.add_argument("--out", dest="out_dir", help="parent directory for run directories")
        p.add_argument("--run-name", help="run directory name (default: command-timestamp-seed)")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override any config key; repeatable")
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig()
    if args.config:
        read_config_file(args.config, cfg)
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        cfg.set(key.strip(), value)
    for key in ("seed", "epochs", "variant", "reward", "clamp_policy", "out_dir", "run_name"):
        value = getattr(args, key, None)
        if value is not None:
            setattr(cfg, key, value)
    cfg.validate()
    return cfg


def make_run_dir(cfg: RunConfig, command: str) -> Path:
    name = cfg.run_name or f"{command}-{time.strftime('%Y%m%d-%H%M%S')}-seed{cfg.seed}"
    run_dir = Path(cfg.out_dir) / name
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.txt").write_text(cfg.dump(), encoding="utf-8")
    return run_dir


def _require(path: str, key: str) -> Path:
    if not path:
        raise ConfigError(f"config key {key!r} is required for this command")
    p = Path(path)
    if not p.exists():
        raise D.DataError(f"{key}: {p} does not exist")
    return p


def _world_config(cfg: RunConfig) -> D.SyntheticWorldConfig:
    return D.SyntheticWorldConfig(n_images=cfg.n_images, feature_dim=cfg.feature_dim,
                                  mos_noise_std=cfg.mos_noise_std,
                                  mos_scale=(cfg.mos_low, cfg.mos_high), seed=cfg.seed,
                                  compress=cfg.compress, dataset_id=cfg.dataset_id)


def _write_json(obj, path: Path) -> None:
    path.write_text(json.dumps(obj, indent=2) + "\n", encoding="utf-8")


def estimator_from_config(cfg: RunConfig) -> RL2RRegressor:
    return RL2RRegressor(k_responses=cfg.k_responses, batch_size=cfg.batch_size,
                         epochs=cfg.epochs, learning_rate=cfg.learning_rate,
                         epsilon=cfg.epsilon, beta=cfg.beta, variant=cfg.variant,
                         reward=cfg.reward, gamma=cfg.gamma, tie_tol=cfg.tie_tol,
                         variance_ddof=cfg.variance_ddof, binary_tie_band=cfg.binary_tie_band,
                         old_refresh=cfg.old_refresh, init_log_std=cfg.init_log_std,
                         random_state=cfg.seed)


# --- commands ------------------------------------------------------------------

def cmd_simulate(cfg: RunConfig, run_dir: Path) -> dict:
    world = D.generate_world(_world_config(cfg))
    D.write_mos_csv(world.records, run_dir / "world.csv")
    D.write_latent_csv(world.latent, run_dir / "latent.csv")
    return {"n_images": len(world.records), "world_csv": str(run_dir / "world.csv")}


def _load_world(cfg: RunConfig, run_dir: Path):
    if cfg.world_csv:
        records = D.load_mos_csv(_require(cfg.world_csv, "world_csv"))
        latent = D.load_score_csv(_require(cfg.latent_csv, "latent_csv")) if cfg.latent_csv else None
    else:
        world = D.generate_world(_world_config(cfg))
        D.write_mos_csv(world.records, run_dir / "world.csv")
        D.write_latent_csv(world.latent, run_dir / "latent.csv")
        records, latent = world.records, world.latent
    return records, latent


def cmd_train(cfg: RunConfig, run_dir: Path) -> dict:
    records, latent = _load_world(cfg, run_dir)
    if not records[0].features:
        raise D.DataError("training needs feature columns f0..fD-1")
    ids = [r.image_id for r in records]
    split = D.split_ids(ids, np.random.default_rng(cfg.seed),
                        (cfg.train_fraction, cfg.val_fraction,
                         1.0 - cfg.train_fraction - cfg.val_fraction))
    _write_json(split, run_dir / "split.json")
    by_id = {r.image_id: r for r in records}
    train = [by_id[i] for i in split["train"]]
    X = np.array([r.features for r in train])
    y = np.array([r.mos for r in train])
    groups = np.array([r.dataset_id for r in train])

    model = estimator_from_config(cfg).fit(X, y, groups=groups)
    (run_dir / "checkpoint.json").write_text(model.params_.to_json() + "\n", encoding="utf-8")
    with open(run_dir / "run_log.jsonl", "w", encoding="utf-8") as fh:
        for rec in model.run_log_:
            fh.write(json.dumps(rec.to_dict()) + "\n")
    summary = {"steps": len(model.run_log_), "checkpoint": str(run_dir / "checkpoint.json")}
    if len(model.run_log_):
        write_std_curve_csv(score_std_curve(model.run_log_), run_dir / "std_curve.csv")

    test = [by_id[i] for i in split["test"]]
    if len(test) >= 2:
        pred = model.predict(np.array([r.features for r in test]))
        try:
            summary["test_vs_mos"] = dataclasses.asdict(
                metric_report(pred, [r.mos for r in test]))
            if latent is not None:
                summary["test_vs_latent"] = dataclasses.asdict(
                    metric_report(pred, [latent[r.image_id] for r in test]))
        except UndefinedMetricError as exc:
            summary["test_metrics_error"] = str(exc)
    _write_json(summary, run_dir / "train_summary.json")
    return summary


def _load_checkpoint(path) -> PolicyParams:
    try:
        return PolicyParams.from_json(Path(path).read_text(encoding="utf-8"))
    except (KeyError, json.JSONDecodeError, ValueError) as exc:
        raise D.DataError(f"bad checkpoint {path}: {exc}") from None


def _select(records, cfg: RunConfig):
    if not cfg.split_file or cfg.split == "all":
        return list(records)
    split = json.loads(_require(cfg.split_file, "split_file").read_text(encoding="utf-8"))
    keep = set(split[cfg.split])
    return [r for r in records if r.image_id in keep]


def cmd_eval(cfg: RunConfig, run_dir: Path) -> dict:
    params = _load_checkpoint(_require(cfg.checkpoint, "checkpoint"))
    records = _select(D.load_mos_csv(_require(cfg.eval_csv or cfg.world_csv, "eval_csv")), cfg)
    if len(records) < 2:
        raise D.DataError("need at least two images to evaluate")
    feats = np.array([r.features for r in records])
    if feats.ndim != 2 or feats.shape[1] != params.feature_dim:
        raise D.DataError("evaluation features do not match the checkpoint")
    pred = np.asarray(GaussianScorePolicy().mean_score(params, feats))
    report = {"vs_mos": dataclasses.asdict(metric_report(pred, [r.mos for r in records]))}
    if cfg.latent_csv:
        latent = D.load_score_csv(_require(cfg.latent_csv, "latent_csv"))
        report["vs_latent"] = dataclasses.asdict(
            metric_report(pred, [latent[r.image_id] for r in records]))
    _write_json(report, run_dir / "metrics.json")
    with open(run_dir / "metrics.csv", "w", encoding="utf-8") as fh:
        fh.write("target,srcc,plcc,n\n")
        for target, m in report.items():
            fh.write(f"{target},{m['srcc']!r},{m['plcc']!r},{m['n']}\n")
    with open(run_dir / "scores.csv", "w", encoding="utf-8") as fh:
        fh.write("image_id,score\n")
        for r, s in zip(records, pred):
            fh.write(f"{r.image_id},{float(s)!r}\n")
    return report


def _model_scores(cfg: RunConfig, which: str) -> dict[str, float]:
    ckpt = cfg.checkpoint if which == "a" else cfg.checkpoint_b
    scores = cfg.scores_a if which == "a" else cfg.scores_b
    if scores:
        return D.load_score_csv(_require(scores, f"scores_{which}"))
    params = _load_checkpoint(_require(ckpt, "checkpoint" if which == "a" else "checkpoint_b"))
    records = D.load_mos_csv(_require(cfg.eval_csv or cfg.world_csv, "eval_csv"))
    feats = np.array([r.features for r in records])
    pred = GaussianScorePolicy().mean_score(params, feats)
    return {r.image_id: float(s) for r, s in zip(records, np.atleast_1d(pred))}


def cmd_gmad(cfg: RunConfig, run_dir: Path) -> dict:
    a, b = _model_scores(cfg, "a"), _model_scores(cfg, "b")
    if set(a) != set(b):
        raise D.DataError("the two models score different image sets")
    tol_a = cfg.gmad_tolerance or None
    tol_b = cfg.gmad_tolerance or None
    a_def = gmad_pairs(a, b, cfg.n_levels, tol_a)
    b_def = gmad_pairs(b, a, cfg.n_levels, tol_b)
    cols = [f.name for f in fields(GmadPair)]
    write_records_csv(a_def.pairs, run_dir / "gmad_a_defends.csv", cols)
    write_records_csv(b_def.pairs, run_dir / "gmad_b_defends.csv", cols)
    out = {
        "a_defends": [dataclasses.asdict(p) for p in a_def.pairs],
        "b_defends": [dataclasses.asdict(p) for p in b_def.pairs],
        "warnings": [dict(direction="a_defends", **dataclasses.asdict(w)) for w in a_def.warnings]
                    + [dict(direction="b_defends", **dataclasses.asdict(w)) for w in b_def.warnings],
    }
    if cfg.latent_csv:
        truth = D.load_score_csv(_require(cfg.latent_csv, "latent_csv"))
        if a_def.pairs:
            out["b_attack_success"] = adjudicate(a_def.pairs, b, truth)
        if b_def.pairs:
            out["a_attack_success"] = adjudicate(b_def.pairs, a, truth)
    _write_json(out, run_dir / "gmad.json")
    return {"a_defends": len(a_def.pairs), "b_defends": len(b_def.pairs),
            "warnings": len(out["warnings"])}


def cmd_parse_logs(cfg: RunConfig, run_dir: Path) -> dict:
    log = D.load_response_groups(_require(cfg.responses, "responses"), cfg.k_responses,
                                 cfg.clamp_policy)
    mos = {r.image_id: r.mos for r in D.load_mos_csv(_require(cfg.mos_csv, "mos_csv"))}
    missing = [g.image_id for g in log.groups if g.image_id not in mos]
    if missing:
        raise D.DataError(f"no MOS for images {missing}")
    if len(log.groups) < 2:
        raise D.DataError("need responses for at least two images")
    scores = np.array([g.scores for g in log.groups])
    prefs = preference_matrix([mos[g.image_id] for g in log.groups], cfg.tie_tol)
    th = ThurstoneConfig(gamma=cfg.gamma, variant=Variant(cfg.variant), ddof=cfg.variance_ddof)
    kind = RewardKind(cfg.reward)
    if kind is RewardKind.REGRESSION:
        raise ConfigError("parse-logs computes ranking rewards; use fidelity or binary")
    rewards = batch_rewards(scores, prefs, kind, th, cfg.binary_tie_band)
    report = {
        "n_images": len(log.groups),
        "k": cfg.k_responses,
        "clamped": log.clamped,
        "failed": log.failed,
        "images": [{"image_id": g.image_id, "scores": list(g.scores),
                    "rewards": rewards[n].tolist(), "mean_reward": float(rewards[n].mean())}
                   for n, g in enumerate(log.groups)],
    }
    _write_json(report, run_dir / "reward_report.json")
    return {"n_images": report["n_images"], "clamped": log.clamped, "failed": log.failed}


COMMANDS = {
    "simulate": cmd_simulate,
    "train": cmd_train,
    "eval": cmd_eval,
    "gmad": cmd_gmad,
    "parse-logs": cmd_parse_logs,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
        run_dir = make_run_dir(cfg, args.command)
        summary = COMMANDS[args.command](cfg, run_dir)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (D.DataError, KeyError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (UndefinedMetricError, FloatingPointError, ArithmeticError) as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(json.dumps({"run_dir": str(run_dir), **summary}, indent=2))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
