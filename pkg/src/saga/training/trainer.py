"""Two-stage training: binary pretraining, then few-label multi-class adaptation."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable, Iterator

import numpy as np

from ..embeddings.dataset import VAL, DatasetIndex, pk_batches, stratified_subsample
from ..errors import ConfigError, ParameterError
from ..labels import AttributionLevel
from ..losses import (DEFAULT_ALPHA, DEFAULT_LAMBDA, MiningBatch, batch_hnm_loss, batch_semi_hnm_loss,
                      combined_loss, cross_entropy)
from ..model import Model, build_model, forward_batch, replace_head
from ..tensor import Graph, Prng, Tensor, mix_seed
from .metrics import Metrics
from .optim import AdamState, adam_step

log = logging.getLogger(__name__)

LOSSES = ("ce", "ce+semi", "ce+hnm")
EVAL_BATCH = 256

# sub-stream tags derived from the run seed
_DROPOUT, _HEAD, _SUBSET, _BATCHES = 11, 12, 13, 14


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 5
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 64
    real_fraction: float = 0.5
    P: int = 6
    K: int = 4
    loss: str = "ce+hnm"
    alpha: float = DEFAULT_ALPHA
    lam: float = DEFAULT_LAMBDA
    normalize: bool = False
    valid_mean: bool = False
    fraction: float = 1.0
    floor: int = 1
    seed: int = 0
    freeze: tuple[str, ...] = ()
    eval_every: int = 0

    @classmethod
    def stage1(cls, **kw) -> "TrainConfig":
        return cls(**{"epochs": 5, "lr": 1e-3, "loss": "ce", **kw})

    @classmethod
    def stage2(cls, **kw) -> "TrainConfig":
        return cls(**{"epochs": 30, "lr": 3e-4, "loss": "ce+hnm", "normalize": True, **kw})

    def validate(self) -> None:
        if not self.lr > 0:
            raise ParameterError(f"learning rate must be > 0, got {self.lr}")
        if self.epochs < 0:
            raise ParameterError(f"epochs must be >= 0, got {self.epochs}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1 and self.eps > 0):
            raise ParameterError("Adam betas must lie in [0, 1) and eps must be > 0")
        if not 0.0 <= self.lam <= 1.0:
            raise ParameterError(f"lambda must lie in [0, 1], got {self.lam}")
        if not self.alpha > 0:
            raise ParameterError(f"alpha must be > 0, got {self.alpha}")
        if self.P * self.K < 4:
            raise ParameterError(f"P*K must be >= 4, got P={self.P} K={self.K}")
        if self.batch_size < 2:
            raise ParameterError(f"batch_size must be >= 2, got {self.batch_size}")
        if not 0.0 < self.real_fraction < 1.0:
            raise ParameterError(f"real_fraction must lie in (0, 1), got {self.real_fraction}")
        if self.loss not in LOSSES:
            raise ParameterError(f"loss must be one of {LOSSES}, got {self.loss!r}")
        if not 0.0 < self.fraction <= 1.0:
            raise ParameterError(f"fraction must lie in (0, 1], got {self.fraction}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["freeze"] = list(self.freeze)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        d["freeze"] = tuple(d.get("freeze", ()))
        return cls(**d)


@dataclass
class RunReport:
    """Everything needed to reproduce a run, plus its outcome.

    ``wall_clock`` is kept out of :meth:`to_dict` unless asked for, so that
    repeated runs serialize byte-identically.
    """

    stage: str
    config: dict
    model_config: dict
    epoch_losses: list[float] = field(default_factory=list)
    val_accuracy: list[tuple[int, float]] = field(default_factory=list)
    metrics: dict[str, dict] = field(default_factory=dict)
    subset_sizes: dict[str, int] = field(default_factory=dict)
    checksum: str = ""
    wall_clock: float = 0.0

    def to_dict(self, include_timing: bool = False) -> dict:
        d = asdict(self)
        d["val_accuracy"] = [list(v) for v in self.val_accuracy]
        if not include_timing:
            d.pop("wall_clock")
        return d

    def to_json(self, include_timing: bool = False) -> str:
        return json.dumps(self.to_dict(include_timing), indent=2, sort_keys=True) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "RunReport":
        d = json.loads(Path(path).read_text(encoding="utf-8"))
        d["val_accuracy"] = [tuple(v) for v in d.get("val_accuracy", [])]
        return cls(**d)


# ---------------------------------------------------------------- batching

def binary_batches(bin_labels: np.ndarray, batch_size: int, real_fraction: float, seed: int,
                   epoch: int) -> Iterator[np.ndarray]:
    """One epoch of binary batches with the real class (index 0) oversampled.

    An epoch has ``ceil(n / batch_size)`` batches. Each batch holds
    ``round(batch_size * real_fraction)`` real items; reals and fakes are each
    drawn from their own reshuffled cycle.
    """
    real = np.flatnonzero(bin_labels == 0)
    fake = np.flatnonzero(bin_labels != 0)
    if real.size == 0 or fake.size == 0:
        raise ConfigError("binary pretraining needs both real and fake items")
    n_real = min(batch_size - 1, max(1, int(round(batch_size * real_fraction))))
    n_fake = batch_size - n_real
    n_batches = -(-bin_labels.size // batch_size)
    prng = Prng(seed).spawn(epoch)

    def cycle(pos: np.ndarray, need: int) -> np.ndarray:
        reps = -(-need // pos.size)
        return np.concatenate([pos[prng.permutation(pos.size)] for _ in range(reps)])[:need]

    reals = cycle(real, n_batches * n_real)
    fakes = cycle(fake, n_batches * n_fake)
    for b in range(n_batches):
        yield np.concatenate([reals[b * n_real:(b + 1) * n_real], fakes[b * n_fake:(b + 1) * n_fake]])


# ---------------------------------------------------------------- core loop

def _trainable(model: Model, freeze: Iterable[str]) -> list[tuple[str, Tensor]]:
    freeze = tuple(freeze)
    return [(n, p) for n, p in model.named_parameters() if not any(n.startswith(f) for f in freeze)]


def _train(model: Model, cfg: TrainConfig, batches: Callable[[int], Iterable[np.ndarray]],
           step_loss: Callable[[Model, np.ndarray], Tensor], report: RunReport,
           val_fn: Callable[[Model], float] | None = None) -> AdamState:
    trainable = _trainable(model, cfg.freeze)
    frozen = [p for n, p in model.named_parameters() if all(p is not q for _, q in trainable)]
    params = [p for _, p in trainable]
    state = AdamState.zeros(params)
    for p in frozen:
        p.requires_grad = False
    try:
        for epoch in range(cfg.epochs):
            model.train(mix_seed(mix_seed(cfg.seed, _DROPOUT), epoch))
            losses = []
            for pos in batches(epoch):
                for p in params:
                    p.grad = None
                with Graph() as g:
                    loss = step_loss(model, pos)
                g.backward(loss, leaves=params)
                adam_step(params, [p.grad for p in params], state, cfg.lr, (cfg.beta1, cfg.beta2), cfg.eps)
                losses.append(float(loss.data))
            model.eval()
            report.epoch_losses.append(float(np.mean(losses)) if losses else 0.0)
            log.info("%s epoch %d/%d loss %.5f", report.stage, epoch + 1, cfg.epochs, report.epoch_losses[-1])
            if val_fn is not None and cfg.eval_every and (epoch + 1) % cfg.eval_every == 0:
                report.val_accuracy.append((epoch + 1, val_fn(model)))
    finally:
        for p in frozen:
            p.requires_grad = True
        for p in params:
            p.grad = None
        model.eval()
    return state


def _levels_needed(model: Model, index: DatasetIndex, level) -> AttributionLevel:
    level = AttributionLevel.parse(level)
    n = index.manifest.classes_at_level(level).n_classes
    if model.config.n_classes != n:
        raise ConfigError(f"model head has {model.config.n_classes} classes but level {level.name} has {n}")
    return level


def _val_fn(index: DatasetIndex, level):
    val = index.split(VAL)
    if len(val) == 0:
        return None
    return lambda m: evaluate(m, val, level).accuracy


def pretrain_stage1(model: Model, index: DatasetIndex, cfg: TrainConfig | None = None,
                    val_index: DatasetIndex | None = None) -> tuple[Model, RunReport]:
    """Binary real/fake pretraining with cross-entropy, in place on ``model``.

    ``index`` holds the training items; ``val_index`` (optional) is scored
    every ``eval_every`` epochs.
    """
    cfg = cfg or TrainConfig.stage1()
    cfg.validate()
    _levels_needed(model, index, AttributionLevel.BIN)
    labels = index.labels_at(AttributionLevel.BIN)
    report = RunReport("stage1", cfg.to_dict(), model.config.to_dict())
    t0 = time.perf_counter()

    def step_loss(m: Model, pos: np.ndarray) -> Tensor:
        out = forward_batch(m, index.frames(pos))
        return cross_entropy(out.logits, labels[pos])

    val_fn = (lambda m: evaluate(m, val_index, AttributionLevel.BIN).accuracy) if val_index is not None else None
    _train(model, cfg, lambda e: binary_batches(labels, cfg.batch_size, cfg.real_fraction,
                                               mix_seed(cfg.seed, _BATCHES), e),
           step_loss, report, val_fn)
    report.checksum = model.checksum()
    report.wall_clock = time.perf_counter() - t0
    return model, report


def adapt_stage2(pretrained: Model, index: DatasetIndex, level="GEN", cfg: TrainConfig | None = None,
                 allow_scratch: bool = False, val_index: DatasetIndex | None = None) -> tuple[Model, RunReport]:
    """Swap in a head for ``level`` and fine-tune on a stratified subset.

    ``index`` holds the training pool; ``cfg.fraction`` of each class (at
    least ``cfg.floor`` items) is kept. With ``allow_scratch`` the model is
    freshly initialized instead (the single-stage baseline).
    """
    cfg = cfg or TrainConfig.stage2()
    cfg.validate()
    level = AttributionLevel.parse(level)
    classes = index.manifest.classes_at_level(level)
    if allow_scratch:
        config = replace(pretrained.config, n_classes=classes.n_classes)
        model = build_model(config, Prng(mix_seed(cfg.seed, _HEAD)))
    else:
        if pretrained.config.n_classes != 2:
            raise ConfigError(f"expected a binary stage-1 model, got {pretrained.config.n_classes} classes "
                              "(pass allow_scratch for the single-stage baseline)")
        model = replace_head(pretrained, classes.n_classes, Prng(mix_seed(cfg.seed, _HEAD)))
    subset = index if cfg.fraction >= 1.0 and cfg.floor <= 1 else stratified_subsample(
        index, cfg.fraction, cfg.floor, mix_seed(cfg.seed, _SUBSET), level)
    labels = subset.labels_at(level)
    counts = np.bincount(labels, minlength=classes.n_classes)
    report = RunReport("stage2", {**cfg.to_dict(), "level": level.name, "scratch": allow_scratch},
                       model.config.to_dict())
    report.subset_sizes = {name: int(c) for name, c in zip(classes.names, counts)}
    t0 = time.perf_counter()
    P = min(cfg.P, int((counts > 0).sum()))
    K = min(cfg.K, int(counts[counts > 0].min()))

    def step_loss(m: Model, pos: np.ndarray) -> Tensor:
        out = forward_batch(m, subset.frames(pos))
        y = labels[pos]
        ce = cross_entropy(out.logits, y)
        if cfg.loss == "ce":
            return ce
        batch = MiningBatch(out.phi, y)
        if cfg.loss == "ce+hnm":
            metric = batch_hnm_loss(batch, cfg.alpha, cfg.normalize)
        else:
            metric = batch_semi_hnm_loss(batch, cfg.alpha, cfg.normalize, cfg.valid_mean)
        return combined_loss(ce, metric, cfg.lam)

    val_fn = (lambda m: evaluate(m, val_index, level).accuracy) if val_index is not None else None
    _train(model, cfg, lambda e: pk_batches(labels, P, K, mix_seed(cfg.seed, _BATCHES), e),
           step_loss, report, val_fn)
    report.checksum = model.checksum()
    report.wall_clock = time.perf_counter() - t0
    return model, report


# ---------------------------------------------------------------- evaluation

def predict(model: Model, index: DatasetIndex, batch_size: int = EVAL_BATCH) -> tuple[np.ndarray, np.ndarray]:
    """EVAL-mode ``(argmax predictions, phi)`` over every item of ``index``."""
    model.eval()
    preds, phis = [], []
    for start in range(0, len(index), batch_size):
        out = forward_batch(model, index.frames(np.arange(start, min(len(index), start + batch_size))))
        preds.append(np.argmax(out.logits.data, axis=1))
        phis.append(out.phi.data)
    if not preds:
        return np.zeros(0, dtype=np.int64), np.zeros((0, model.config.d_t))
    return np.concatenate(preds), np.concatenate(phis)


def evaluate(model: Model, index: DatasetIndex, level) -> Metrics:
    level = _levels_needed(model, index, level)
    preds, _ = predict(model, index)
    return Metrics.from_predictions(index.labels_at(level), preds,
                                    index.manifest.classes_at_level(level).names)


def evaluate_projected(gen_model: Model, index: DatasetIndex, coarse_level) -> Metrics:
    """Score GEN-level predictions after mapping them to ``coarse_level``."""
    _levels_needed(gen_model, index, AttributionLevel.GEN)
    coarse = AttributionLevel.parse(coarse_level)
    preds, _ = predict(gen_model, index)
    projected = index.manifest.project_predictions(preds, coarse)
    return Metrics.from_predictions(index.labels_at(coarse), projected,
                                    index.manifest.classes_at_level(coarse).names)


def export_embeddings(model: Model, index: DatasetIndex, path) -> None:
    """CSV of ``video_id, generator_id, e0..e{d-1}`` with one row per item."""
    _, phi = predict(model, index)
    d = model.config.d_t
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(["video_id", "generator_id"] + [f"e{i}" for i in range(d)]) + "\n")
        for vid, gid, row in zip(index.video_ids(), index.generator_ids(), phi):
            fh.write(",".join([vid, gid] + [f"{float(v):.9g}" for v in row]) + "\n")
