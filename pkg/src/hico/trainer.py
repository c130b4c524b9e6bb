"""End-to-end training: curriculum-scheduled batch assembly, feature-space
augmentation, loss evaluation, and plain SGD with warmup + cosine decay.

Pixel-space augmentations have no meaning on latent-feature clips, so the
"independent augmentation per view" contract is realized as additive
gaussian noise plus random coordinate masking.
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field, fields, replace

import numpy as np

from .losses import LossConfig, total_loss
from .model import ModelBundle, backward_batch, build_model, encode_batch
from .numerics import Rng, as_f64
from .timeline import (
    ClipTriple,
    Corpus,
    SamplerSchedule,
    gradual_delta,
    sample_topical_clip,
    sample_visual_pair,
)


class TrainingError(RuntimeError):
    """Training aborted on a numeric failure."""


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 60
    batch_videos: int = 8
    batches_per_epoch: int = 8
    learning_rate: float = 0.3
    warmup_epochs: int = 5
    clip_length: float = 1.0

    # ablation axes
    vcl: bool = True          # limit visual-pair distance
    tcl: bool = True          # topic prediction + topical clip in the pool
    gs: bool = True           # grow both distance caps with the epoch
    delta_cap: float = 1.0
    topical_cap: float = math.inf

    # loss details
    tau: float = 0.1
    focal_gamma: float = 0.5
    include_vk_negatives: bool = True
    concat_mode: str = "bidirectional"
    use_contrastive_term: bool = True  # drop to train on topic prediction alone
    tp_include_topical: bool = True
    exclude_self_pairs: bool = False

    # augmentation
    aug_noise_std: float = 0.1
    aug_mask_prob: float = 0.05

    # architecture
    activation: str = "relu"
    encoder_hidden: tuple[int, ...] = (64, 64)
    encoder_out: int = 64
    embed_dim: int = 128
    head_hidden: tuple[int, ...] = (128, 128)
    phi_hidden: tuple[int, ...] = (128, 128)

    # seeds: data and init streams are separate so either can be varied alone
    seed: int = 0
    init_seed: int | None = None
    data_seed: int | None = None

    def __post_init__(self):
        if self.batch_videos < 2:
            raise ValueError("need at least two videos per batch")
        if self.epochs < 1:
            raise ValueError("need at least one epoch")
        if self.learning_rate <= 0:
            raise ValueError("learning rate must be positive")
        for name in ("encoder_hidden", "head_hidden", "phi_hidden"):
            object.__setattr__(self, name, tuple(getattr(self, name)))

    @property
    def effective_init_seed(self) -> int:
        return self.seed if self.init_seed is None else self.init_seed

    @property
    def effective_data_seed(self) -> int:
        return self.seed if self.data_seed is None else self.data_seed

    def loss_config(self) -> LossConfig:
        return LossConfig(
            tau=self.tau,
            focal_gamma=self.focal_gamma,
            include_vk_negatives=self.include_vk_negatives and self.tcl,
            concat_mode=self.concat_mode,
            enable_vcl=self.use_contrastive_term,
            enable_tcl=self.tcl,
            tp_include_topical=self.tp_include_topical,
            exclude_self_pairs=self.exclude_self_pairs,
        )

    def schedule_for_epoch(self, epoch: int) -> SamplerSchedule:
        return SamplerSchedule(
            alpha=epoch,
            alpha_max=self.epochs,
            delta_cap=self.delta_cap if self.vcl else math.inf,
            topical_cap=self.topical_cap,
            gs_visual=self.gs and self.vcl,
            gs_topical=self.gs and self.tcl,
        )


_FLOAT_FIELDS_ALLOWING_INF = ("delta_cap", "topical_cap")


def train_config_from_dict(data: dict) -> TrainConfig:
    """Build a config from JSON-style keys, rejecting unknown ones by name."""
    known = {f.name for f in fields(TrainConfig)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise KeyError(f"unknown config keys: {', '.join(unknown)}")
    kwargs = dict(data)
    for name in _FLOAT_FIELDS_ALLOWING_INF:
        if isinstance(kwargs.get(name), str):
            kwargs[name] = float(kwargs[name])
    return TrainConfig(**kwargs)


def train_config_to_dict(cfg: TrainConfig) -> dict:
    out = {}
    for f in fields(TrainConfig):
        value = getattr(cfg, f.name)
        if isinstance(value, tuple):
            value = list(value)
        if isinstance(value, float) and math.isinf(value):
            value = "inf"
        out[f.name] = value
    return out


@dataclass
class MetricRow:
    epoch: int
    l_cl: float
    l_tp: float
    total: float
    delta_max: float
    probe_accuracy: float | None = None
    wall_time: float = 0.0


@dataclass
class MetricLog:
    rows: list[MetricRow] = field(default_factory=list)

    def append(self, row: MetricRow) -> None:
        if self.rows and row.epoch <= self.rows[-1].epoch:
            raise ValueError("epochs must be strictly increasing")
        self.rows.append(row)

    def write_csv(self, path) -> None:
        # wall_time is volatile and lives in the run manifest instead, so a
        # rerun with the same seed writes byte-identical CSVs
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "l_cl", "l_tp", "total", "delta_max", "probe_accuracy"])
            for r in self.rows:
                probe = "" if r.probe_accuracy is None else repr(r.probe_accuracy)
                writer.writerow(
                    [r.epoch, repr(r.l_cl), repr(r.l_tp), repr(r.total), repr(r.delta_max), probe]
                )


def augment(x, cfg: TrainConfig, rng: Rng) -> np.ndarray:
    """Additive gaussian noise, then independent coordinate masking."""
    x = as_f64(x)
    if cfg.aug_noise_std > 0.0:
        x = x + cfg.aug_noise_std * rng.normal(size=x.shape)
    if cfg.aug_mask_prob > 0.0:
        keep = rng.uniform(size=x.shape) >= cfg.aug_mask_prob
        x = x * keep
    return x


def assemble_batch(
    corpus: Corpus, sched: SamplerSchedule, cfg: TrainConfig, rng: Rng
) -> list[ClipTriple]:
    """Sample distinct videos, one visual pair plus one topical clip each,
    and observe every clip with its own augmentation."""
    if len(corpus) < cfg.batch_videos:
        raise ValueError("corpus smaller than the batch size")
    picks = rng.choice(len(corpus), size=cfg.batch_videos, replace=False)
    triples = []
    for vid in picks:
        t = corpus.timelines[int(vid)]
        rv = rng.split(("video", int(vid)))
        vi, vj = sample_visual_pair(t, sched, rv, cfg.clip_length)
        vk = sample_topical_clip(t, vi, sched, rv)
        xs = [augment(corpus.observe(c, rv), cfg, rv) for c in (vi, vj, vk)]
        triples.append(ClipTriple(vi, vj, vk, *xs))
    return triples


def learning_rate_at(cfg: TrainConfig, step: int, total_steps: int) -> float:
    """Linear warmup to the base rate, then cosine decay to zero."""
    warmup = cfg.warmup_epochs * cfg.batches_per_epoch
    if warmup > 0 and step < warmup:
        return cfg.learning_rate * (step + 1) / warmup
    span = max(1, total_steps - warmup)
    progress = (step - warmup) / span
    return cfg.learning_rate * 0.5 * (1.0 + math.cos(math.pi * progress))


def _apply_grads(params, grads, lr: float) -> None:
    for (w, b), (dw, db) in zip(zip(params.weights, params.biases), grads):
        w -= lr * dw
        b -= lr * db


def train_step(
    bundle: ModelBundle, triples: list[ClipTriple], cfg: TrainConfig, lr: float
):
    """One SGD update on an assembled batch; returns the loss bundle."""
    batch, cache = encode_batch(bundle, triples, with_cache=True)
    out = total_loss(batch, bundle, cfg.loss_config())
    if not math.isfinite(out.total):
        raise TrainingError("non-finite loss")
    grads = backward_batch(bundle, cache, out.d_z, out.d_t)
    _apply_grads(bundle.encoder.params, grads["encoder"], lr)
    _apply_grads(bundle.visual_head.params, grads["visual_head"], lr)
    _apply_grads(bundle.topical_head.params, grads["topical_head"], lr)
    if out.d_phi is not None:
        _apply_grads(bundle.predictor.params, out.d_phi, lr)
    return out


def init_bundle(corpus: Corpus, cfg: TrainConfig) -> ModelBundle:
    rng_init = Rng(cfg.effective_init_seed).split("init")
    return build_model(
        corpus.d_feat,
        rng_init,
        encoder_hidden=cfg.encoder_hidden,
        encoder_out=cfg.encoder_out,
        embed_dim=cfg.embed_dim,
        head_hidden=cfg.head_hidden,
        phi_hidden=cfg.phi_hidden,
        activation=cfg.activation,
    )


def train(corpus: Corpus, cfg: TrainConfig) -> tuple[ModelBundle, MetricLog]:
    """Full training run, deterministic given (corpus, config)."""
    bundle = init_bundle(corpus, cfg)
    rng_data = Rng(cfg.effective_data_seed).split("data")
    log = MetricLog()
    total_steps = cfg.epochs * cfg.batches_per_epoch
    start = time.monotonic()
    step = 0
    for epoch in range(cfg.epochs):
        sched = cfg.schedule_for_epoch(epoch)
        sums = np.zeros(3)
        for b in range(cfg.batches_per_epoch):
            rng_batch = rng_data.split(("batch", epoch, b))
            triples = assemble_batch(corpus, sched, cfg, rng_batch)
            lr = learning_rate_at(cfg, step, total_steps)
            try:
                out = train_step(bundle, triples, cfg, lr)
            except TrainingError as err:
                raise TrainingError(f"{err} at epoch {epoch}, batch {b}") from None
            sums += (out.l_cl, out.l_tp, out.total)
            step += 1
        mean = sums / cfg.batches_per_epoch
        log.append(
            MetricRow(
                epoch=epoch,
                l_cl=float(mean[0]),
                l_tp=float(mean[1]),
                total=float(mean[2]),
                delta_max=gradual_delta(sched),
                wall_time=time.monotonic() - start,
            )
        )
    return bundle, log


def ablation_grid(cfg: TrainConfig) -> dict[str, TrainConfig]:
    """The eight on/off combinations of the three ablation axes."""
    grid = {}
    for vcl in (False, True):
        for tcl in (False, True):
            for gs in (False, True):
                name = "".join(
                    flag if on else "-"
                    for flag, on in (("V", vcl), ("T", tcl), ("G", gs))
                )
                grid[name] = replace(cfg, vcl=vcl, tcl=tcl, gs=gs)
    return grid
