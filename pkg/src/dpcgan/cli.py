"""Command-line front end: train, generate, evaluate, attack, experiment, validate-rules.

Settings come from built-in defaults, then an optional TOML file
(``--config``), then command-line flags, later sources winning.  One
top-level seed drives every random choice through named streams.

Exit codes: 0 success (a budget-exhausted halt included), 2 config or
validation error, 3 runtime or numeric failure.
"""

from __future__ import annotations

import argparse
import copy
import hashlib
import json
import logging
import os
import sys
from dataclasses import asdict
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .constraints import ConstraintSet, evaluate_batch, parse_rules, rules_from_dict, save_rules, violation_counts
from .data import Table, load_csv, load_schema, save_schema, split, write_csv
from .dpsgd import PrivacySpec
from .errors import CapabilityError, CheckpointError, DpcganError, ValidationError
from .evaluation import (
    AttackReport,
    FidelityReport,
    UtilityRow,
    attack_table,
    attribute_inference_attack,
    fidelity_table,
    membership_inference_attack,
    mixed_distance,
    reident_attack,
    tstr,
    utility_table,
)
from .gan import GanModel, TrainConfig, TrainingDiverged, load_checkpoint, sample, save_checkpoint, train
from .numerics import RngStreams
from .toy import ToySpec, make_toy_dataset

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

log = logging.getLogger("dpcgan")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3
LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}


class StageError(DpcganError):
    def __init__(self, stage: str, exc: BaseException):
        super().__init__(f"stage '{stage}' failed: {exc}")
        self.stage, self.cause = stage, exc


# -- configuration ------------------------------------------------------------

def _train_defaults() -> dict:
    d = TrainConfig().to_dict()
    for k in ("privacy", "seed"):
        d.pop(k)
    return d


DEFAULTS: dict = {
    "seed": 0,
    "out_dir": "dpcgan-run",
    "data": {"path": None, "schema": None, "rules": None, "toy": False, "toy_rows": 2000, "holdout": 0.3},
    "train": _train_defaults(),
    "privacy": asdict(PrivacySpec()),
    "generate": {"checkpoint": None, "count": None, "out": None, "reject_invalid": False},
    "evaluate": {"synth": None, "test": None, "fidelity": True, "utility": True,
                 "classifiers": ["logistic", "forest"]},
    "attack": {"synth": None, "checkpoint": None, "non_members": None,
               "attacks": ["reident", "attribute", "mia"], "overlaps": [0.3, 0.6, 0.9], "tolerance": 0.01,
               "sensitive": None, "target": None, "classifier": "logistic",
               "mia_settings": ["FBB", "WB"], "k_samples": None},
}


def _merge(base: dict, over: dict, where: str = "") -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        name = f"{where}{k}"
        if k not in base:
            raise ValidationError(f"{name}: unknown configuration option")
        if isinstance(base[k], dict):
            if not isinstance(v, dict):
                raise ValidationError(f"{name}: expected a table")
            out[k] = _merge(base[k], v, name + ".")
        else:
            out[k] = v
    return out


def load_config_file(path: str | Path) -> dict:
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except FileNotFoundError:
        raise ValidationError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ValidationError(f"{path}: invalid TOML ({exc})") from None


# (flag, config path, argparse kwargs) per section; every override defaults to None
_SHARED = [
    ("--seed", "seed", dict(type=int, help="top-level seed for all random streams")),
    ("--out-dir", "out_dir", dict(help="directory for every file this command writes")),
    ("--data", "data.path", dict(help="real table (CSV)")),
    ("--schema", "data.schema", dict(help="table schema (JSON)")),
    ("--rules", "data.rules", dict(help="constraint rules (JSON); omitted means no rules")),
]
_TOY = [
    ("--toy", "data.toy", dict(action="store_const", const=True, help="use the built-in toy table instead of --data")),
    ("--toy-rows", "data.toy_rows", dict(type=int, help="rows in the toy table")),
]
_HOLDOUT = [("--holdout", "data.holdout", dict(type=float, help="fraction of real rows held out for testing"))]
_TRAIN = [
    ("--steps", "train.steps", dict(type=int, help="training iterations T")),
    ("--lam", "train.lam", dict(type=float, help="constraint penalty weight lambda")),
    ("--batch-size", "train.batch_size", dict(type=int, help="expected batch size B")),
    ("--lr-d", "train.lr_d", dict(type=float, help="discriminator SGD learning rate")),
    ("--lr-g", "train.lr_g", dict(type=float, help="generator Adam learning rate")),
    ("--noise-dim", "train.noise_dim", dict(type=int, help="generator noise dimension")),
    ("--checkpoint-every", "train.checkpoint_every", dict(type=int, help="checkpoint cadence in steps (0 = off)")),
    ("--clip", "privacy.clip", dict(type=float, help="per-example clipping threshold C")),
    ("--noise-multiplier", "privacy.noise_multiplier", dict(type=float, help="noise multiplier sigma")),
    ("--target-epsilon", "privacy.target_epsilon", dict(type=float, help="privacy budget epsilon")),
    ("--target-delta", "privacy.target_delta", dict(type=float, help="privacy parameter delta")),
    ("--no-budget", "train.enforce_budget", dict(action="store_const", const=False,
                                                 help="train all steps even past the epsilon target")),
]
_GENERATE = [
    ("--checkpoint", "generate.checkpoint", dict(help="model checkpoint (default OUT_DIR/model.json)")),
    ("--count", "generate.count", dict(type=int, help="rows to generate")),
    ("--out", "generate.out", dict(help="output CSV (default OUT_DIR/synthetic.csv)")),
    ("--reject-invalid", "generate.reject_invalid", dict(action="store_const", const=True,
                                                         help="resample rows that break a rule")),
]
_EVALUATE = [
    ("--synth", "evaluate.synth", dict(help="synthetic table (CSV)")),
    ("--test", "evaluate.test", dict(help="real test table (CSV); default: hold out part of --data")),
    ("--no-fidelity", "evaluate.fidelity", dict(action="store_const", const=False, help="skip fidelity")),
    ("--no-utility", "evaluate.utility", dict(action="store_const", const=False, help="skip TSTR utility")),
    ("--classifiers", "evaluate.classifiers", dict(type=lambda s: s.split(","), help="comma list: logistic,forest")),
]
_ATTACK = [
    ("--synth", "attack.synth", dict(help="synthetic table (CSV)")),
    ("--checkpoint", "attack.checkpoint", dict(help="model checkpoint (needed for WB membership inference)")),
    ("--non-members", "attack.non_members", dict(help="real records not used in training (CSV)")),
    ("--attacks", "attack.attacks", dict(type=lambda s: s.split(","), help="comma list: reident,attribute,mia")),
    ("--overlaps", "attack.overlaps", dict(type=lambda s: [float(v) for v in s.split(",")],
                                           help="re-identification overlap fractions")),
    ("--tolerance", "attack.tolerance", dict(type=float, help="re-identification tolerance (real-std units)")),
    ("--sensitive", "attack.sensitive", dict(help="sensitive column for attribute inference")),
    ("--target", "attack.target", dict(help="target column for attribute inference")),
    ("--mia-settings", "attack.mia_settings", dict(type=lambda s: s.split(","), help="comma list: FBB,WB")),
    ("--k-samples", "attack.k_samples", dict(type=int, help="generated samples for FBB membership inference")),
]

_COMMANDS = {
    "train": (_SHARED + _TOY + _TRAIN, "train a constraint-aware DP generator"),
    "generate": (_SHARED + _GENERATE, "sample a synthetic CSV from a checkpoint"),
    "evaluate": (_SHARED + _HOLDOUT + _EVALUATE, "fidelity and TSTR utility of a synthetic table"),
    "attack": (_SHARED + _ATTACK, "privacy attacks on a synthetic table or checkpoint"),
    "experiment": (_SHARED + _TOY + _HOLDOUT + _TRAIN + [o for o in _GENERATE if o[0] in ("--count", "--reject-invalid")],
                   "train, generate, evaluate and attack in one run"),
    "validate-rules": (_SHARED, "check a rules file against a schema (and optionally a table)"),
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dpcgan", description=__doc__.split("\n\n")[0],
                                epilog="Set SYNTH_LOG=error|info|debug to control log output.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name, (opts, help_) in _COMMANDS.items():
        sp = sub.add_parser(name, help=help_, description=help_)
        sp.add_argument("--config", help="TOML configuration file")
        for flag, dest, kw in opts:
            if "action" not in kw:
                kw = {"metavar": flag[2:].upper().replace("-", "_"), **kw}
            sp.add_argument(flag, dest=dest.replace(".", "__"), default=None, **kw)
    return p


def resolve_config(args: argparse.Namespace) -> dict:
    cfg = copy.deepcopy(DEFAULTS)
    if getattr(args, "config", None):
        cfg = _merge(cfg, load_config_file(args.config))
    for key, val in vars(args).items():
        if "__" not in key and key not in ("seed", "out_dir") or val is None:
            continue
        parts = key.split("__")
        node = cfg
        for part in parts[:-1]:
            node = node[part]
        node[parts[-1]] = val
    return cfg


def config_hash(cfg: dict) -> str:
    # the output location does not influence results, so it is left out
    snap = {k: v for k, v in cfg.items() if k != "out_dir"}
    return hashlib.sha256(json.dumps(snap, sort_keys=True, separators=(",", ":")).encode()).hexdigest()


def train_config(cfg: dict) -> TrainConfig:
    t = dict(cfg["train"])
    try:
        t["privacy"] = PrivacySpec(**cfg["privacy"])
    except TypeError as exc:
        raise ValidationError(f"privacy: {exc}") from None
    t["seed"] = cfg["seed"]
    try:
        return TrainConfig.from_dict(t)
    except TypeError as exc:
        raise ValidationError(f"train: {exc}") from None


# -- I/O helpers ----------------------------------------------------------------

def _require_file(path, what: str) -> Path:
    if path is None:
        raise ValidationError(f"{what} is required")
    p = Path(path)
    if not p.is_file():
        raise ValidationError(f"{what} not found: {p}")
    return p


def _guard_out_dir(out: Path, inputs) -> None:
    """Refuse to write into (or below) the directory holding an input table."""
    o = out.resolve()
    for inp in inputs:
        if inp is None:
            continue
        d = Path(inp).resolve().parent
        if o == d or d in o.parents:
            raise ValidationError(f"output directory {out} lies inside input data directory {d}; "
                                  f"choose an --out-dir elsewhere")


def _write_json(path: Path, doc) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return path


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def load_inputs(cfg: dict, out: Path) -> tuple[Table, ConstraintSet]:
    """Real table and rule set from config; toy mode writes its inputs under OUT_DIR/inputs."""
    d = cfg["data"]
    if d["toy"]:
        given = [k for k in ("path", "schema", "rules") if d[k] is not None]
        if given:
            raise ValidationError(f"data.toy conflicts with data.{', data.'.join(given)}; use one or the other")
        rng = RngStreams(cfg["seed"]).generator("toy_data")
        table, cs = make_toy_dataset(ToySpec(rows=int(d["toy_rows"])), rng)
        inp = out / "inputs"
        inp.mkdir(parents=True, exist_ok=True)
        write_csv(table, inp / "toy.csv")
        save_schema(table.schema, inp / "toy_schema.json")
        save_rules(cs, inp / "toy_rules.json")
        return table, cs
    schema = load_schema(_require_file(d["schema"], "schema file (--schema)"))
    table = load_csv(_require_file(d["path"], "data file (--data)"), schema)
    if d["rules"] is None:
        cs = rules_from_dict({"rules": []}, schema)
    else:
        cs = parse_rules(_require_file(d["rules"], "rules file (--rules)"), schema)
    return table, cs


def _load_table(path, schema, what: str) -> Table:
    return load_csv(_require_file(path, what), schema)


def _holdout_split(table: Table, frac: float, seed: int) -> tuple[Table, Table]:
    if not 0 < frac < 1:
        raise ValidationError("data.holdout must lie in (0, 1)")
    return split(table, (1 - frac, frac), RngStreams(seed).generator("split"))


class Manifest:
    def __init__(self, command: str, cfg: dict, out: Path):
        self.out = out
        # out_dir is left out so identical runs in different places give identical manifests
        snap = {k: v for k, v in cfg.items() if k != "out_dir"}
        self.doc = {"command": command, "artifact_version": __version__, "seed": cfg["seed"],
                    "config": snap, "config_hash": config_hash(cfg), "files": {},
                    "timestamps": {"started": datetime.now(timezone.utc).isoformat()}}

    def add(self, path: Path) -> Path:
        self.doc["files"][path.resolve().relative_to(self.out.resolve()).as_posix()] = _sha256(path)
        return path

    def write(self, **timings) -> Path:
        self.doc["timestamps"]["finished"] = datetime.now(timezone.utc).isoformat()
        self.doc["timestamps"].update(timings)
        self.doc["files"] = dict(sorted(self.doc["files"].items()))
        return _write_json(self.out / "manifest.json", self.doc)


# -- stages -----------------------------------------------------------------------

def stage_train(cfg: dict, table: Table, cs: ConstraintSet, out: Path, man: Manifest) -> tuple[GanModel, dict]:
    tc = train_config(cfg)
    ck_dir = out / "checkpoints"
    try:
        model, rep = train(table, cs, tc, audit_log=out / "audit.jsonl", checkpoint_dir=ck_dir)
    except TrainingDiverged as exc:
        man.add(_write_json(out / "train_report.json", exc.report.to_dict(include_time=False)))
        raise
    finally:
        if (out / "audit.jsonl").exists():
            man.add(out / "audit.jsonl")
        for p in sorted(ck_dir.glob("*.json")) if ck_dir.exists() else ():
            man.add(p)
    save_checkpoint(model, out / "model.json", tc, rep.steps)
    man.add(out / "model.json")
    man.add(_write_json(out / "train_report.json", rep.to_dict(include_time=False)))
    log.info("training %s after %d steps; final epsilon %s", rep.status, rep.steps, rep.final_epsilon)
    return model, {"train_wall_time_s": rep.wall_time}


def stage_generate(cfg: dict, model: GanModel, out_csv: Path, man: Manifest | None) -> tuple[Table, dict]:
    g = cfg["generate"]
    count = int(g["count"]) if g["count"] is not None else 1000
    rng = RngStreams(cfg["seed"]).generator("generate")
    table, info = sample(model, count, rng, reject_invalid=bool(g["reject_invalid"]))
    out_csv.parent.mkdir(parents=True, exist_ok=True)
    write_csv(table, out_csv)
    side = out_csv.with_suffix(".violations.json")
    meta = {**info.to_dict(), "csv": out_csv.name}
    _write_json(side, meta)
    if man:
        man.add(out_csv)
        man.add(side)
    log.info("wrote %d rows to %s (violation rate %.4f)", table.m, out_csv, info.violation_rate)
    return table, meta


def stage_evaluate(cfg: dict, real: Table, test: Table | None, synth: Table, out: Path,
                   man: Manifest | None, fidelity_ref: Table | None = None) -> dict:
    """Fidelity against ``fidelity_ref`` (default ``real``); TSTR trains on ``real``, tests on ``test``."""
    e = cfg["evaluate"]
    doc: dict = {}
    if e["fidelity"]:
        doc["fidelity"] = mixed_distance(fidelity_ref if fidelity_ref is not None else real, synth).to_dict()
    if e["utility"]:
        target = real.schema.target
        if target is None:
            raise ValidationError("utility evaluation needs a schema target column")
        doc["utility"] = {"target": target,
                          "rows": [r.to_dict() for r in tstr(real, test, synth, target, tuple(e["classifiers"]),
                                                             cfg["seed"])]}
    paths = [_write_json(out / "evaluation.json", doc)]
    paths.append(out / "evaluation.txt")
    paths[-1].write_text(render_evaluation(doc))
    for p in paths:
        if man:
            man.add(p)
    return doc


def render_evaluation(doc: dict) -> str:
    """Text tables rendered from the JSON report."""
    parts = []
    if "fidelity" in doc:
        parts.append("Fidelity\n" + fidelity_table({"synthetic": FidelityReport(**doc["fidelity"])}))
    if "utility" in doc:
        rows = [UtilityRow(**r) for r in doc["utility"]["rows"]]
        parts.append(f"Utility (target: {doc['utility']['target']})\n" + utility_table(rows))
    return "\n\n".join(parts) + "\n"


def stage_attack(cfg: dict, real: Table, synth: Table | None, model: GanModel | None,
                 non_members: Table | None, out: Path, man: Manifest | None) -> list[dict]:
    a = cfg["attack"]
    streams = RngStreams(cfg["seed"])
    unknown = set(a["attacks"]) - {"reident", "attribute", "mia"}
    if unknown:
        raise ValidationError(f"attack.attacks: unknown attack(s) {sorted(unknown)}")
    if synth is None and model is not None:
        synth, _ = sample(model, real.m, streams.generator("attack_synth"))
    if synth is None:
        raise ValidationError("attacks need --synth or --checkpoint")
    reports: list[AttackReport] = []
    if "reident" in a["attacks"]:
        for f in a["overlaps"]:
            reports.append(reident_attack(real, synth, float(f), float(a["tolerance"]), streams.generator("reident")))
    if "attribute" in a["attacks"]:
        sens = a["sensitive"] or (real.schema.sensitive[0] if real.schema.sensitive else None)
        target = a["target"] or real.schema.target
        if sens is None or target is None:
            raise ValidationError("attribute inference needs a sensitive and a target column "
                                  "(--sensitive/--target or the schema)")
        reports.append(attribute_inference_attack(real, synth, sens, target, a["classifier"], cfg["seed"]))
    if "mia" in a["attacks"]:
        if non_members is None:
            raise ValidationError("membership inference needs --non-members")
        n = min(real.m, non_members.m)
        rng = streams.generator("mia_balance")
        members = real.take(np.sort(rng.permutation(real.m)[:n]))
        nonm = non_members.take(np.sort(rng.permutation(non_members.m)[:n]))
        for setting in a["mia_settings"]:
            if setting == "WB" and model is None:
                raise CapabilityError("white-box membership inference needs --checkpoint")
            source = model if model is not None else synth
            reports.append(membership_inference_attack(members, nonm, source, setting, a["k_samples"],
                                                       streams.generator("mia", len(reports))))
    docs = [r.to_dict() for r in reports]
    paths = [_write_json(out / "attacks.json", docs), out / "attacks.txt"]
    paths[1].write_text(attack_table([AttackReport(**d) for d in docs]) + "\n")
    for p in paths:
        if man:
            man.add(p)
    return docs


# -- commands -------------------------------------------------------------------

def cmd_train(cfg: dict) -> int:
    out = Path(cfg["out_dir"])
    _guard_out_dir(out, [cfg["data"]["path"]] if not cfg["data"]["toy"] else [])
    table, cs = load_inputs(cfg, out)
    out.mkdir(parents=True, exist_ok=True)
    man = Manifest("train", cfg, out)
    for p in sorted((out / "inputs").glob("*")) if cfg["data"]["toy"] else ():
        man.add(p)
    _, timing = stage_train(cfg, table, cs, out, man)
    man.write(**timing)
    return EXIT_OK


def _model_from(path) -> GanModel:
    model, _ = load_checkpoint(_require_file(path, "checkpoint (--checkpoint)"))
    return model


def cmd_generate(cfg: dict) -> int:
    out = Path(cfg["out_dir"])
    g = cfg["generate"]
    model = _model_from(g["checkpoint"] or out / "model.json")
    out_csv = Path(g["out"]) if g["out"] else out / "synthetic.csv"
    _guard_out_dir(out_csv.parent, [cfg["data"]["path"]])
    stage_generate(cfg, model, out_csv, None)
    return EXIT_OK


def _schema_for(cfg: dict, model: GanModel | None = None):
    if cfg["data"]["schema"] is not None:
        return load_schema(_require_file(cfg["data"]["schema"], "schema file (--schema)"))
    if model is not None:
        return model.schema
    raise ValidationError("schema file (--schema) is required")


def cmd_evaluate(cfg: dict) -> int:
    out = Path(cfg["out_dir"])
    e = cfg["evaluate"]
    _guard_out_dir(out, [cfg["data"]["path"], e["test"]])
    schema = _schema_for(cfg)
    real = _load_table(cfg["data"]["path"], schema, "data file (--data)")
    synth = _load_table(e["synth"], schema, "synthetic table (--synth)")
    train_part, test = real, None
    if e["utility"]:
        if e["test"]:
            test = _load_table(e["test"], schema, "test table (--test)")
        else:
            train_part, test = _holdout_split(real, float(cfg["data"]["holdout"]), cfg["seed"])
    out.mkdir(parents=True, exist_ok=True)
    doc = stage_evaluate(cfg, train_part, test, synth, out, None, fidelity_ref=real)
    print(render_evaluation(doc), end="")
    return EXIT_OK


def cmd_attack(cfg: dict) -> int:
    out = Path(cfg["out_dir"])
    a = cfg["attack"]
    _guard_out_dir(out, [cfg["data"]["path"], a["non_members"]])
    model = _model_from(a["checkpoint"]) if a["checkpoint"] else None
    schema = _schema_for(cfg, model)
    real = _load_table(cfg["data"]["path"], schema, "data file (--data)")
    synth = _load_table(a["synth"], schema, "synthetic table (--synth)") if a["synth"] else None
    nonm = _load_table(a["non_members"], schema, "non-member table (--non-members)") if a["non_members"] else None
    out.mkdir(parents=True, exist_ok=True)
    docs = stage_attack(cfg, real, synth, model, nonm, out, None)
    print(attack_table([AttackReport(**d) for d in docs]))
    return EXIT_OK


def _stage(name: str, fn, *args):
    try:
        return fn(*args)
    except (DpcganError, OSError) as exc:
        log.error("stage '%s' failed", name)
        raise StageError(name, exc) from exc


def cmd_experiment(cfg: dict) -> int:
    """train -> generate -> evaluate -> attack on a held-out split, with one manifest."""
    out = Path(cfg["out_dir"])
    _guard_out_dir(out, [cfg["data"]["path"]] if not cfg["data"]["toy"] else [])
    table, cs = _stage("load", load_inputs, cfg, out)
    out.mkdir(parents=True, exist_ok=True)
    man = Manifest("experiment", cfg, out)
    for p in sorted((out / "inputs").glob("*")) if cfg["data"]["toy"] else ():
        man.add(p)
    train_part, test_part = _stage("split", _holdout_split, table, float(cfg["data"]["holdout"]), cfg["seed"])
    (out / "split").mkdir(exist_ok=True)
    for name, part in (("train.csv", train_part), ("test.csv", test_part)):
        write_csv(part, out / "split" / name)
        man.add(out / "split" / name)
    model, timing = _stage("train", stage_train, cfg, train_part, cs, out, man)
    cfg = copy.deepcopy(cfg)
    if cfg["generate"]["count"] is None:
        cfg["generate"]["count"] = train_part.m
    synth, meta = _stage("generate", stage_generate, cfg, model, out / "synthetic.csv", man)
    _stage("evaluate", stage_evaluate, cfg, train_part, test_part, synth, out, man)
    _stage("attack", stage_attack, cfg, train_part, synth, model, test_part, out, man)
    man.write(**timing)
    print(f"experiment complete: {out}")
    return EXIT_OK


def cmd_validate_rules(cfg: dict) -> int:
    d = cfg["data"]
    schema = load_schema(_require_file(d["schema"], "schema file (--schema)"))
    cs = parse_rules(_require_file(d["rules"], "rules file (--rules)"), schema)
    print(f"{len(cs.rules)} rule(s) valid against schema")
    if d["path"] is not None:
        table = load_csv(_require_file(d["path"], "data file (--data)"), schema)
        _, rep = evaluate_batch(cs, table)
        print(f"{table.m} rows, violation rate {rep.rate:.4f}")
        for rid, n in sorted(violation_counts(cs, table).items()):
            print(f"  {rid}: {n}")
    return EXIT_OK


COMMANDS = {
    "train": cmd_train,
    "generate": cmd_generate,
    "evaluate": cmd_evaluate,
    "attack": cmd_attack,
    "experiment": cmd_experiment,
    "validate-rules": cmd_validate_rules,
}


def _exit_code(exc: BaseException) -> int:
    if isinstance(exc, StageError):
        exc = exc.cause
    if isinstance(exc, (ValidationError, CheckpointError, CapabilityError, FileNotFoundError)):
        return EXIT_CONFIG
    return EXIT_RUNTIME


def setup_logging() -> None:
    level = os.environ.get("SYNTH_LOG", "info").lower()
    logging.basicConfig(level=LOG_LEVELS.get(level, logging.INFO), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s", force=True)
    if level not in LOG_LEVELS:
        log.warning("SYNTH_LOG=%s not one of %s; using info", level, sorted(LOG_LEVELS))


def main(argv: list[str] | None = None) -> int:
    setup_logging()
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
        return COMMANDS[args.command](cfg)
    except (DpcganError, OSError, ValueError) as exc:
        code = _exit_code(exc)
        print(f"dpcgan {args.command}: error: {exc}", file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
