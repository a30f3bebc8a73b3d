"""Balanced sampling, warmup schedule, AdamW, and the token-level training loop."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

from .config import from_dict
from .datamodel import Dataset, PadConfig, stack_padded
from .errors import (
    ConfigError,
    DegenerateDataset,
    DimensionMismatch,
    InvalidConfig,
    NonFinite,
)
from .loss import LOSS_KINDS, ACAConfig, LossReport, batch_loss
from .model import ModelBundle, ModelConfig, save_checkpoint

CHECKPOINT_NAME = "model.ckpt"
LOSS_LOG_NAME = "loss_log.jsonl"


@dataclass
class TrainConfig:
    iterations: int = 25_000
    warmup: int = 2_500
    batch_size: int = 64
    lr_max: float = 8e-4
    weight_decay: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    loss_kind: str = "aca"
    seed: int = 0
    model: ModelConfig = field(default_factory=ModelConfig)
    pad: PadConfig = field(default_factory=PadConfig)
    aca: ACAConfig = field(default_factory=ACAConfig)

    def __post_init__(self):
        if self.iterations < 0 or self.warmup < 0 or self.warmup > self.iterations:
            raise InvalidConfig("need 0 <= warmup <= iterations")
        if self.batch_size < 2 or self.batch_size % 2:
            raise InvalidConfig("batch_size must be even and >= 2")
        if self.loss_kind not in LOSS_KINDS:
            raise InvalidConfig(f"loss_kind must be one of {LOSS_KINDS}")
        if self.lr_max <= 0 or self.weight_decay < 0:
            raise InvalidConfig("lr_max must be > 0 and weight_decay >= 0")

    @classmethod
    def from_dict(cls, doc: dict | None) -> "TrainConfig":
        doc = dict(doc or {})
        nested = {
            "model": (ModelConfig, doc.pop("model", None)),
            "pad": (PadConfig, doc.pop("pad", None)),
            "aca": (ACAConfig, doc.pop("aca", None)),
        }
        built = {k: from_dict(c, d, where=f"train.{k}") for k, (c, d) in nested.items()}
        return from_dict(cls, {**doc, **built}, where="train")

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


# -- sampling --------------------------------------------------------------


class _Cycler:
    """Endless stream of a class's indices: a fresh permutation per pass."""

    def __init__(self, idx: np.ndarray, rng: np.random.Generator):
        self.idx = idx
        self.rng = rng
        self.queue = np.empty(0, dtype=np.int64)

    def take(self, n: int) -> np.ndarray:
        out = []
        while n > 0:
            if self.queue.size == 0:
                self.queue = self.rng.permutation(self.idx)
            chunk = self.queue[:n]
            self.queue = self.queue[n:]
            out.append(chunk)
            n -= chunk.size
        return np.concatenate(out)


def balanced_batches(fake, batch_size: int, seed: int = 0) -> Iterator[np.ndarray]:
    """Token-index batches with exactly half real and half fake tokens.

    ``fake`` is a Dataset (fused labels are used) or a boolean array. Each class
    is walked without replacement and reshuffled once exhausted, so the smaller
    class repeats across a majority pass.
    """
    if isinstance(fake, Dataset):
        fake = fake.labels()[:, 2]
    fake = np.asarray(fake, dtype=bool)
    if batch_size < 2 or batch_size % 2:
        raise InvalidConfig("batch_size must be even and >= 2")
    fake_idx = np.flatnonzero(fake)
    real_idx = np.flatnonzero(~fake)
    if fake_idx.size == 0 or real_idx.size == 0:
        raise DegenerateDataset(
            f"balanced sampling needs both classes ({real_idx.size} real, {fake_idx.size} fake)"
        )
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(3,)))
    real, forged = _Cycler(real_idx, rng), _Cycler(fake_idx, rng)
    half = batch_size // 2
    while True:
        yield np.concatenate([real.take(half), forged.take(half)])


# -- optimisation ----------------------------------------------------------


def lr_at(iteration: int, cfg: TrainConfig) -> float:
    if iteration < cfg.warmup:
        return cfg.lr_max * (iteration + 1) / cfg.warmup
    return cfg.lr_max


@dataclass
class OptimState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0


def decays(name: str) -> bool:
    return not name.endswith(".b")


def optimizer_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
                   state: OptimState, lr: float, cfg: TrainConfig) -> OptimState:
    """One AdamW step, updating ``params`` arrays in place."""
    state.step += 1
    b1, b2 = cfg.beta1, cfg.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for name, p in params.items():
        g = grads[name]
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        update = (m / c1) / (np.sqrt(v / c2) + cfg.adam_eps)
        if cfg.weight_decay and decays(name):
            update = update + cfg.weight_decay * p
        p -= lr * update
    return state


# -- loop ------------------------------------------------------------------


@dataclass
class TrainResult:
    bundle: ModelBundle
    log: list[dict]
    batch_fake_counts: list[int]

    def loss_reports(self) -> list[LossReport]:
        return [LossReport(e["l_v"], e["l_a"], e["l_va"]) for e in self.log]


def check_dims(dataset: Dataset, bundle: ModelBundle) -> None:
    dims = dataset.feature_dims
    if dims is None:
        raise DegenerateDataset("dataset has no tokens")
    if dims != (bundle.realign_v.k, bundle.realign_a.k):
        raise DimensionMismatch(
            f"features are {dims} but the model expects "
            f"({bundle.realign_v.k}, {bundle.realign_a.k})"
        )


def train(dataset: Dataset, bundle: ModelBundle, cfg: TrainConfig, out_dir=None) -> TrainResult:
    """Train ``bundle`` in place on word tokens; optionally write checkpoint and loss log."""
    check_dims(dataset, bundle)
    xv, xa = stack_padded(dataset, cfg.pad)
    labels = dataset.labels()
    sampler = balanced_batches(labels[:, 2], cfg.batch_size, cfg.seed)
    drop_rng = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(4,)))
    params = bundle.trainable()
    state = OptimState()
    log, fake_counts = [], []
    for it in range(cfg.iterations):
        idx = next(sampler)
        fake_counts.append(int(labels[idx, 2].sum()))
        probs, cache = bundle.forward(xv[idx], xa[idx], training=True, rng=drop_rng)
        report, dp = batch_loss(probs, labels[idx], cfg.aca, cfg.loss_kind, with_grad=True)
        grads = bundle.backward(cache, dp * probs * (1.0 - probs))
        if not all(np.all(np.isfinite(g)) for g in grads.values()):
            raise NonFinite(f"non-finite gradient at iteration {it}")
        lr = lr_at(it, cfg)
        optimizer_step(params, grads, state, lr, cfg)
        log.append({"it": it, **report.as_dict(), "lr": lr})
    if out_dir is not None:
        write_outputs(bundle, cfg, log, out_dir)
    return TrainResult(bundle, log, fake_counts)


def checkpoint_config(cfg: TrainConfig) -> dict:
    return {"train": cfg.as_dict()}


def pad_from_checkpoint(config: dict) -> PadConfig:
    try:
        return PadConfig(**config["train"]["pad"])
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"checkpoint config lacks padding settings: {exc}") from exc


def write_outputs(bundle: ModelBundle, cfg: TrainConfig, log: list[dict], out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(bundle, out / CHECKPOINT_NAME, checkpoint_config(cfg))
    with open(out / LOSS_LOG_NAME, "w", encoding="utf-8") as fh:
        for entry in log:
            fh.write(json.dumps(entry) + "\n")
