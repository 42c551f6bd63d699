"""Deterministic training loop: grid NLL loss, AdamW, per-epoch dev selection."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from gapdner import tensor as T
from gapdner.data import AnnotatedExample, derive_label_set
from gapdner.evaluate import EvalResult, predict_corpus, span_f1
from gapdner.model import GapDNER, ModelConfig, Vocab
from gapdner.scheme import GridLabelMatrix, encode_grid

log = logging.getLogger(__name__)

PROB_FLOOR = 1e-12


class NonFiniteLossError(FloatingPointError):
    def __init__(self, example_id, epoch):
        self.example_id = example_id
        super().__init__(f"non-finite loss on example {example_id!r} in epoch {epoch}")


@dataclass
class TrainConfig:
    epochs: int = 15
    batch_size: int = 8
    learning_rate: float = 1e-3
    seed: int = 0
    clip_norm: float | None = 5.0
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    class_weights: list[float] | None = None  # per label id; None keeps the plain mean over cells

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    dev: EvalResult | None
    path_limit_failures: int = 0


@dataclass
class TrainReport:
    epochs: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0
    best_f1: float = 0.0
    checkpoint: str | None = None
    lossy_examples: int = 0  # training examples whose gold grid could not hold every span
    model: GapDNER | None = field(default=None, compare=False, repr=False)


def nll_loss(probs: T.Tensor, gold: GridLabelMatrix, class_weights=None) -> T.Tensor:
    """-(1/n^2) sum_ij log p_ij[gold_ij], with log clamped at log(1e-12)."""
    n = gold.n
    if probs.shape[:2] != (n, n):
        raise T.ShapeError(f"probabilities {probs.shape} do not match a {n}x{n} gold grid")
    n_labels = probs.shape[2]
    if gold.cells.max() >= n_labels or gold.cells.min() < 0:
        raise ValueError(f"gold label id outside [0, {n_labels})")
    rows, cols = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    picked = T.log(probs[rows, cols, gold.cells], floor=PROB_FLOOR)
    if class_weights is not None:
        w = np.asarray(class_weights, dtype=np.float64)
        if w.shape != (n_labels,):
            raise ValueError(f"class_weights needs {n_labels} entries")
        picked = picked * T.constant(w[gold.cells])
    return -T.mean(picked)


class AdamW:
    """Adam with decoupled weight decay."""

    def __init__(self, params: dict, cfg: TrainConfig):
        self.params = params
        self.cfg = cfg
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.t = 0

    def step(self, grads: dict):
        cfg = self.cfg
        self.t += 1
        if cfg.clip_norm is not None:
            norm = math.sqrt(sum(float((g * g).sum()) for _, g in sorted(grads.items())))
            if norm > cfg.clip_norm:
                grads = {k: g * (cfg.clip_norm / norm) for k, g in grads.items()}
        c1 = 1.0 - cfg.beta1**self.t
        c2 = 1.0 - cfg.beta2**self.t
        for name in sorted(self.params):
            p = self.params[name]
            g = grads.get(name)
            if g is None:
                g = np.zeros_like(p.data)
            m, v = self.m[name], self.v[name]
            m *= cfg.beta1
            m += (1.0 - cfg.beta1) * g
            v *= cfg.beta2
            v += (1.0 - cfg.beta2) * g * g
            p.data *= 1.0 - cfg.learning_rate * cfg.weight_decay
            p.data -= cfg.learning_rate * (m / c1) / (np.sqrt(v / c2) + cfg.eps)


def build_model(corpus, model_cfg: ModelConfig | dict, rng) -> GapDNER:
    labels = derive_label_set(corpus)
    vocab = Vocab.build(corpus)
    overrides = model_cfg.to_dict() if isinstance(model_cfg, ModelConfig) else dict(model_cfg)
    overrides.update(vocab_size=len(vocab), num_labels=len(labels))
    return GapDNER.create(ModelConfig(**overrides), labels, vocab, rng)


def example_loss(model: GapDNER, example, gold: GridLabelMatrix, train_cfg: TrainConfig, rng=None, vectors=None):
    result = model.forward(example, train=rng is not None, rng=rng, vectors=vectors)
    return nll_loss(result.probs, gold, train_cfg.class_weights)


def train(
    corpus: list[AnnotatedExample],
    dev: list[AnnotatedExample] | None,
    model_cfg: ModelConfig | dict,
    train_cfg: TrainConfig,
    checkpoint=None,
    vectors=None,
    on_epoch=None,
) -> TrainReport:
    """Fit a fresh model; the label set and vocabulary come from `corpus` only.

    Each epoch visits the corpus in a seeded shuffle, accumulating per-example
    gradients and stepping every `batch_size` examples. Dev F1 is computed
    after every epoch and the best epoch's parameters are kept (and written
    to `checkpoint` when given). Without dev data the last epoch is kept.
    """
    if not corpus:
        raise ValueError("training corpus is empty")
    init_seq, shuffle_seq, dropout_seq = np.random.SeedSequence(train_cfg.seed).spawn(3)
    model = build_model(corpus, model_cfg, np.random.default_rng(init_seq))
    shuffle_rng = np.random.default_rng(shuffle_seq)
    dropout_rng = np.random.default_rng(dropout_seq)

    golds, lossy = [], 0
    for ex in corpus:
        grid, report = encode_grid(ex, model.labels)
        lossy += not report.lossless
        golds.append(grid)
    if lossy:
        log.warning("%d training examples have lossy grid encodings", lossy)

    opt = AdamW(model.params, train_cfg)
    out = TrainReport(lossy_examples=lossy)
    best_state = None
    for epoch in range(1, train_cfg.epochs + 1):
        order = shuffle_rng.permutation(len(corpus))
        losses = []
        for start in range(0, len(order), train_cfg.batch_size):
            batch = order[start : start + train_cfg.batch_size]
            acc: dict[str, np.ndarray] = {}
            for k in batch:
                model.zero_grad()
                loss = example_loss(model, corpus[k], golds[k], train_cfg, dropout_rng, vectors)
                value = float(loss.data)
                if not math.isfinite(value):
                    raise NonFiniteLossError(corpus[k].id, epoch)
                T.backward(loss)
                losses.append(value)
                for name, p in model.params.items():
                    if p.grad is not None:
                        if name in acc:
                            acc[name] += p.grad
                        else:
                            acc[name] = p.grad.copy()
            model.zero_grad()
            opt.step({k: g / len(batch) for k, g in acc.items()})
        for name, p in model.params.items():
            if not np.all(np.isfinite(p.data)):
                raise FloatingPointError(f"parameter {name} became non-finite in epoch {epoch}")

        dev_result, failures = None, 0
        if dev:
            preds, failed = predict_corpus(model, dev, vectors, on_path_limit="skip")
            failures = len(failed)
            dev_result = span_f1(preds, {ex.id: ex.entities for ex in dev})
        record = EpochRecord(epoch, float(np.mean(losses)), dev_result, failures)
        out.epochs.append(record)
        if on_epoch is not None:
            on_epoch(record)
        score = dev_result.f1 if dev_result is not None else -float(epoch)
        if best_state is None or score > out.best_f1 or dev_result is None:
            out.best_epoch, out.best_f1 = epoch, (dev_result.f1 if dev_result else 0.0)
            best_state = {k: p.data.copy() for k, p in model.params.items()}

    for name, data in best_state.items():
        model.params[name].data = data
    if checkpoint is not None:
        model.save(checkpoint, extra={"best_epoch": out.best_epoch, "best_f1": out.best_f1, "seed": train_cfg.seed})
        out.checkpoint = str(checkpoint)
    out.model = model
    return out


def epoch_record_line(record: EpochRecord) -> str:
    rec = {"epoch": record.epoch, "loss": record.loss}
    if record.dev is not None:
        rec.update(dev_precision=record.dev.precision, dev_recall=record.dev.recall, dev_f1=record.dev.f1)
    if record.path_limit_failures:
        rec["path_limit_failures"] = record.path_limit_failures
    return json.dumps(rec)


def split_config(raw: dict) -> tuple[dict, TrainConfig]:
    """Split a flat key-value config into model overrides and a TrainConfig."""
    model_keys = {f.name for f in fields(ModelConfig)} - {"vocab_size", "num_labels"}
    train_keys = {f.name for f in fields(TrainConfig)}
    unknown = set(raw) - model_keys - train_keys
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    model = {k: v for k, v in raw.items() if k in model_keys}
    train_cfg = TrainConfig(**{k: v for k, v in raw.items() if k in train_keys})
    return model, train_cfg


def report_to_dict(report: TrainReport) -> dict:
    return {
        "epochs": [asdict(e) for e in report.epochs],
        "best_epoch": report.best_epoch,
        "best_f1": report.best_f1,
        "checkpoint": report.checkpoint,
        "lossy_examples": report.lossy_examples,
    }
