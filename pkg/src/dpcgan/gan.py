"""Constraint-aware DP-GAN: losses, training loop, sampling and checkpoints."""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np

from . import __version__
from .constraints import ConstraintSet, evaluate_batch, rules_from_dict
from .data import Table, TableSchema, access_phase, decode, encode, encoded_dim, segment_map
from .dpsgd import (
    AccountantState,
    PrivacySpec,
    account_step,
    add_noise,
    audit_record,
    calibrate_sigma,
    clip_factor,
    epsilon_at,
)
from .errors import CheckpointError, GenerationError, NumericError, ShapeError, ValidationError
from .numerics import (
    Activation,
    AdamConfig,
    AdamState,
    DenseNet,
    RngStreams,
    backward,
    forward,
    forward_trace,
    init_mlp,
    per_example_norms,
    sgd_step,
    weighted_gradient_sum,
    adam_step,
)

log = logging.getLogger(__name__)

PROB_CLAMP = 1e-7
CHECKPOINT_FORMAT = "dpcgan-checkpoint"
CHECKPOINT_VERSION = 1


# -- losses -----------------------------------------------------------------

def _clamp(p) -> np.ndarray:
    return np.clip(np.asarray(p, dtype=np.float64).reshape(-1), PROB_CLAMP, 1 - PROB_CLAMP)


def _clamp_mask(p) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64).reshape(-1)
    return (p > PROB_CLAMP) & (p < 1 - PROB_CLAMP)


def discriminator_loss(d_real, d_fake, validity, lam: float) -> tuple[float, np.ndarray, np.ndarray]:
    """Constraint-weighted BCE for the discriminator.

    loss = mean(-log D(x_real)) + mean(w_i * -log(1 - D(x_fake_i))),
    w_i = 1 + lam * (1 - CM_i).

    Returns (loss, g_real, g_fake) where g_* are derivatives of each
    example's own (un-averaged) term with respect to its discriminator
    output; these feed per-example clipping.
    """
    dr, df = _clamp(d_real), _clamp(d_fake)
    v = np.asarray(validity).reshape(-1)
    if df.shape != v.shape:
        raise ShapeError(f"{df.size} fake outputs but {v.size} validity flags")
    if lam < 0:
        raise ValidationError("lambda must be non-negative")
    if dr.size == 0 and df.size == 0:
        raise ValidationError("empty batch")
    w = 1.0 + lam * (1.0 - v)
    real_term = -np.log(dr)
    fake_term = -w * np.log1p(-df)
    loss = (real_term.mean() if dr.size else 0.0) + (fake_term.mean() if df.size else 0.0)
    g_real = np.where(_clamp_mask(d_real), -1.0 / dr, 0.0)
    g_fake = np.where(_clamp_mask(d_fake), w / (1.0 - df), 0.0)
    return float(loss), g_real, g_fake


def literal_L_D(d_real, d_fake, validity, lam: float) -> float:
    """E[log D(x_real)] + E[log(1 - D(x_gen))] - lam * mean CM(x_gen), for logging only."""
    dr, df = _clamp(d_real), _clamp(d_fake)
    v = np.asarray(validity, dtype=np.float64).reshape(-1)
    if df.shape != v.shape:
        raise ShapeError(f"{df.size} fake outputs but {v.size} validity flags")
    return float(np.mean(np.log(dr)) + np.mean(np.log1p(-df)) - lam * np.mean(v))


def generator_loss(d_fake, mode: str = "non_saturating") -> tuple[float, np.ndarray]:
    """Generator objective and its gradient w.r.t. D(G(z)) (already averaged).

    ``non_saturating``: mean(-log D(G(z))).  ``literal``: mean(log(1 - D(G(z)))),
    minimized as written.
    """
    df = _clamp(d_fake)
    if df.size == 0:
        raise ValidationError("empty batch")
    mask = _clamp_mask(d_fake)
    b = df.size
    if mode == "non_saturating":
        return float(np.mean(-np.log(df))), np.where(mask, -1.0 / (b * df), 0.0)
    if mode == "literal":
        return float(np.mean(np.log1p(-df))), np.where(mask, -1.0 / (b * (1.0 - df)), 0.0)
    raise ValidationError(f"unknown generator loss mode {mode!r}")


# -- model and config -------------------------------------------------------

@dataclass(frozen=True)
class GanModel:
    generator: DenseNet
    discriminator: DenseNet | None
    schema: TableSchema
    constraints: ConstraintSet
    noise_dim: int

    def __post_init__(self):
        d = encoded_dim(self.schema)
        if self.generator.output_dim != d or self.generator.input_dim != self.noise_dim:
            raise ShapeError("generator dimensions do not match schema/noise_dim")
        if self.discriminator is not None and (self.discriminator.input_dim != d or self.discriminator.output_dim != 1):
            raise ShapeError("discriminator must map the encoded width to one output")
        head = self.generator.layers[-1].activation
        want = tuple((s.offset, s.width) for s in segment_map(self.schema) if s.categorical)
        if head.kind != "softmax_segments" or head.segments != want:
            raise ShapeError("generator head segments do not match the schema encoding")


def generator_head(schema: TableSchema) -> Activation:
    segs = tuple((s.offset, s.width) for s in segment_map(schema) if s.categorical)
    return Activation("softmax_segments", segments=segs, rest="tanh")


def build_model(schema: TableSchema, constraints: ConstraintSet, rng: np.random.Generator,
                noise_dim: int = 64, hidden_g=(256, 256), hidden_d=(256, 256), leak: float = 0.2) -> GanModel:
    d = encoded_dim(schema)
    hidden = Activation("leaky_relu", leak)
    g = init_mlp(rng, [noise_dim, *hidden_g, d], hidden=hidden, head=generator_head(schema))
    dnet = init_mlp(rng, [d, *hidden_d, 1], hidden=hidden, head=Activation("sigmoid"))
    return GanModel(g, dnet, schema, constraints, noise_dim)


@dataclass(frozen=True)
class TrainConfig:
    lam: float = 5.0
    lr_d: float = 0.05
    lr_g: float = 1e-3
    adam_beta1: float = 0.5
    adam_beta2: float = 0.999
    batch_size: int | None = None  # None -> min(256, m // 4)
    steps: int = 2000
    d_steps: int = 1
    noise_dim: int = 64
    hidden_g: tuple[int, ...] = (256, 256)
    hidden_d: tuple[int, ...] = (256, 256)
    leak: float = 0.2
    generator_loss: str = "non_saturating"
    hard_fakes: bool = True  # D sees decoded fakes; G gets a straight-through gradient
    privacy: PrivacySpec = field(default_factory=PrivacySpec)
    enforce_budget: bool = True
    seed: int = 0
    checkpoint_every: int = 0
    log_every: int = 100

    def __post_init__(self):
        if self.lam < 0:
            raise ValidationError("lam must be >= 0")
        if not (self.lr_d > 0 and self.lr_g > 0):
            raise ValidationError("learning rates must be positive")
        if self.batch_size is not None and self.batch_size <= 0:
            raise ValidationError("batch_size must be positive")
        if self.steps <= 0 or self.d_steps <= 0 or self.noise_dim <= 0:
            raise ValidationError("steps, d_steps and noise_dim must be positive")
        if self.generator_loss not in ("non_saturating", "literal"):
            raise ValidationError(f"unknown generator loss {self.generator_loss!r}")
        if any(h <= 0 for h in (*self.hidden_g, *self.hidden_d)):
            raise ValidationError("hidden sizes must be positive")

    def resolved_batch(self, m: int) -> int:
        b = self.batch_size if self.batch_size is not None else min(256, max(1, m // 4))
        return min(b, m)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden_g"], d["hidden_d"] = list(self.hidden_g), list(self.hidden_d)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if "privacy" in d and isinstance(d["privacy"], dict):
            d["privacy"] = PrivacySpec(**d["privacy"])
        for k in ("hidden_g", "hidden_d"):
            if k in d:
                d[k] = tuple(int(v) for v in d[k])
        known = cls.__dataclass_fields__.keys()
        unknown = set(d) - set(known)
        if unknown:
            raise ValidationError(f"unknown training option(s): {sorted(unknown)}")
        return cls(**d)


@dataclass
class TrainReport:
    status: str = "running"
    steps: int = 0
    d_loss: list[float] = field(default_factory=list)
    literal_d_loss: list[float] = field(default_factory=list)
    g_loss: list[float] = field(default_factory=list)
    violation_rate: list[float] = field(default_factory=list)
    epsilon: list[float | None] = field(default_factory=list)
    sigma: float = 0.0
    sampling_rate: float = 0.0
    delta: float = 0.0
    clip: float = 0.0
    final_epsilon: float | None = None
    max_post_clip_norm: float = 0.0
    clip_violations: int = 0
    wall_time: float = 0.0
    message: str = ""

    def to_dict(self, include_time: bool = True) -> dict:
        d = asdict(self)
        if not include_time:
            d.pop("wall_time")
        return d


class TrainingDiverged(NumericError):
    def __init__(self, message: str, report: TrainReport, model: GanModel):
        super().__init__(message)
        self.report = report
        self.model = model


# -- training ---------------------------------------------------------------

def _finite_or_none(x: float) -> float | None:
    return x if math.isfinite(x) else None


def train(
    table: Table,
    constraints: ConstraintSet,
    config: TrainConfig = TrainConfig(),
    *,
    audit_log: str | Path | None = None,
    checkpoint_dir: str | Path | None = None,
    on_step: Callable[[int, GanModel, TrainReport], None] | None = None,
) -> tuple[GanModel, TrainReport]:
    """Train the generator against a DP discriminator with constraint feedback.

    Per iteration: Poisson-sample real rows, draw noise, generate and
    hard-decode fakes, look up CM, take a clipped+noised SGD step on D,
    advance the accountant, then take an Adam step on G through the frozen D.
    Halts early (status ``budget_exhausted``) before any step that would
    push epsilon past the target.
    """
    if table.m == 0:
        raise ValidationError("training table is empty")
    if constraints.schema != table.schema:
        raise ValidationError("constraint set was parsed against a different schema")
    schema = table.schema
    m = table.m
    B = config.resolved_batch(m)
    q = B / m
    spec = config.privacy
    spec.check_delta(m)
    sigma = spec.noise_multiplier
    if sigma is None:
        sigma = calibrate_sigma(q, config.steps * config.d_steps, spec.target_epsilon, spec.target_delta)
    clip = spec.clip
    private = sigma > 0
    streams = RngStreams(config.seed)
    model = build_model(schema, constraints, streams.generator("init"), config.noise_dim,
                        config.hidden_g, config.hidden_d, config.leak)
    G, D = model.generator, model.discriminator
    adam_cfg = AdamConfig(lr=config.lr_g, beta1=config.adam_beta1, beta2=config.adam_beta2)
    adam = AdamState.zeros(G)
    acct = AccountantState(q, sigma)
    report = TrainReport(sigma=sigma, sampling_rate=q, delta=spec.target_delta, clip=clip)
    t0 = time.perf_counter()
    audit_fh = open(audit_log, "w") if audit_log else None
    d_step = 0
    try:
        for step in range(1, config.steps + 1):
            halted = False
            for _ in range(config.d_steps):
                d_step += 1
                # budget check before touching any data for this step
                nxt = account_step(acct)
                eps_next = epsilon_at(nxt, spec.target_delta) if private else math.inf
                if private and config.enforce_budget and eps_next > spec.target_epsilon:
                    halted = True
                    break
                with access_phase("discriminator_update"):
                    pick = streams.generator("subsample", d_step).uniform(size=m) < q
                    real = encode(table.take(np.flatnonzero(pick))).matrix
                z = streams.generator("noise_z", d_step).standard_normal((B, config.noise_dim))
                fake = forward(G, z)
                fake_table = decode(fake, schema)
                validity, vrep = evaluate_batch(constraints, fake_table)
                if config.hard_fakes:
                    fake = encode(fake_table).matrix
                batch = np.vstack([real, fake])
                tr = forward_trace(D, batch)
                out = tr.output[:, 0]
                n_real = real.shape[0]
                d_loss, g_real, g_fake = discriminator_loss(out[:n_real], out[n_real:], validity, config.lam)
                lit = literal_L_D(out[:n_real], out[n_real:], validity, config.lam)
                upstream = np.concatenate([g_real, g_fake])[:, None]
                norms, deltas = per_example_norms(D, tr, upstream)
                if not np.all(np.isfinite(norms)) or not math.isfinite(d_loss):
                    raise NumericError(f"non-finite discriminator loss/gradient at step {step}")
                factors = clip_factor(norms, clip)
                post = norms * factors
                report.max_post_clip_norm = max(report.max_post_clip_norm, float(post.max()))
                bad = int(np.sum(post > clip + 1e-12))
                report.clip_violations += bad
                if bad:
                    raise NumericError(f"{bad} per-example gradients exceed C after clipping")
                clipped_sum = weighted_gradient_sum(tr, deltas, factors)
                grad = add_noise(clipped_sum, clip, sigma, streams.generator("dp_noise", d_step), B)
                D = sgd_step(D, grad, config.lr_d)
                acct = nxt
                if audit_fh:
                    audit_fh.write(json.dumps(audit_record(acct, spec.target_delta)) + "\n")
            if halted:
                report.status = "budget_exhausted"
                report.message = f"halted before step {step}: epsilon would exceed {spec.target_epsilon}"
                break
            with access_phase("generator_update"):
                zg = streams.generator("noise_g", step).standard_normal((B, config.noise_dim))
                gtr = forward_trace(G, zg)
                g_out = encode(decode(gtr.output, schema)).matrix if config.hard_fakes else gtr.output
                dtr = forward_trace(D, g_out)
                g_loss, g_up = generator_loss(dtr.output[:, 0], config.generator_loss)
                _, dx = backward(D, dtr, g_up[:, None])
                g_grad, _ = backward(G, gtr, dx)
                if not (math.isfinite(g_loss) and g_grad.is_finite()):
                    raise NumericError(f"non-finite generator loss/gradient at step {step}")
                G, adam = adam_step(G, g_grad, adam, adam_cfg)
            eps = epsilon_at(acct, spec.target_delta) if private else math.inf
            report.steps = step
            report.d_loss.append(d_loss)
            report.literal_d_loss.append(lit)
            report.g_loss.append(g_loss)
            report.violation_rate.append(vrep.rate)
            report.epsilon.append(_finite_or_none(eps))
            model = replace(model, generator=G, discriminator=D)
            if config.log_every and step % config.log_every == 0:
                log.info("step=%d L_D_literal=%.4f L_D=%.4f L_G=%.4f violation_rate=%.3f eps=%s",
                         step, lit, d_loss, g_loss, vrep.rate, f"{eps:.4f}" if math.isfinite(eps) else "inf")
            if checkpoint_dir and config.checkpoint_every and step % config.checkpoint_every == 0:
                save_checkpoint(model, Path(checkpoint_dir) / f"step_{step:06d}.json", config, step)
            if on_step:
                on_step(step, model, report)
        else:
            report.status = "completed"
    except NumericError as exc:
        report.status = "diverged"
        report.message = str(exc)
        model = replace(model, generator=G, discriminator=D)
        if checkpoint_dir:
            save_checkpoint(model, Path(checkpoint_dir) / "diagnostic.json", config, report.steps)
        raise TrainingDiverged(str(exc), report, model) from exc
    finally:
        if audit_fh:
            audit_fh.close()
        report.wall_time = time.perf_counter() - t0
    model = replace(model, generator=G, discriminator=D)
    report.final_epsilon = _finite_or_none(epsilon_at(acct, spec.target_delta) if private else math.inf)
    return model, report


# -- sampling ---------------------------------------------------------------

@dataclass(frozen=True)
class SampleInfo:
    rows: int
    violation_rate: float
    raw_violation_rate: float
    per_rule: dict
    rounds: int
    rejection: bool

    def to_dict(self) -> dict:
        return asdict(self)


def sample(model: GanModel, count: int, rng: np.random.Generator, reject_invalid: bool = False,
           max_rounds: int = 200) -> tuple[Table, SampleInfo]:
    """Draw ``count`` decoded records; optionally resample rows with CM = 0."""
    if count <= 0:
        raise ValidationError("count must be positive")
    z = rng.standard_normal((count, model.noise_dim))
    table = decode(forward(model.generator, z), model.schema)
    valid, rep = evaluate_batch(model.constraints, table)
    raw_rate = rep.rate
    rounds = 0
    if reject_invalid:
        arrays = [a.copy() for a in table.arrays()]
        bad = np.flatnonzero(valid == 0)
        while bad.size:
            rounds += 1
            if rounds > max_rounds:
                raise GenerationError(f"{bad.size} rows still invalid after {max_rounds} resampling rounds")
            z = rng.standard_normal((bad.size, model.noise_dim))
            fresh = decode(forward(model.generator, z), model.schema)
            for a, f in zip(arrays, fresh.arrays()):
                a[bad] = f
            table = Table(model.schema, tuple(arrays))
            valid, _ = evaluate_batch(model.constraints, table)
            bad = np.flatnonzero(valid == 0)
            arrays = [a.copy() for a in table.arrays()]
        _, rep = evaluate_batch(model.constraints, table)
    info = SampleInfo(count, rep.rate, raw_rate, dict(rep.per_rule), rounds, reject_invalid)
    return table, info


def discriminator_scores(model: GanModel, table: Table) -> np.ndarray:
    if model.discriminator is None:
        raise ValidationError("model has no discriminator")
    return forward(model.discriminator, encode(table).matrix)[:, 0]


# -- checkpoints ------------------------------------------------------------

def checkpoint_dict(model: GanModel, config: TrainConfig | None = None, step: int = 0) -> dict:
    return {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "artifact_version": __version__,
        "step": step,
        "noise_dim": model.noise_dim,
        "schema": model.schema.to_dict(),
        "rules": model.constraints.to_dict(),
        "generator": model.generator.to_dict(),
        "discriminator": model.discriminator.to_dict() if model.discriminator is not None else None,
        "rng": {"seed": config.seed if config else None,
                "streams": ["init", "subsample", "noise_z", "dp_noise", "noise_g"]},
        "config": config.to_dict() if config else None,
    }


def save_checkpoint(model: GanModel, path: str | Path, config: TrainConfig | None = None, step: int = 0) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(checkpoint_dict(model, config, step)))


def load_checkpoint(path: str | Path) -> tuple[GanModel, dict]:
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: unreadable checkpoint ({exc})") from None
    if not isinstance(doc, dict) or doc.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path}: not a {CHECKPOINT_FORMAT} file")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {doc.get('version')!r}")
    try:
        schema = TableSchema.from_dict(doc["schema"])
        cs = rules_from_dict(doc["rules"], schema)
        g = DenseNet.from_dict(doc["generator"])
        d = DenseNet.from_dict(doc["discriminator"]) if doc.get("discriminator") else None
        model = GanModel(g, d, schema, cs, int(doc["noise_dim"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"{path}: corrupt checkpoint ({exc})") from None
    return model, doc
