"""Adam optimisation of the total loss, evaluation and report writing."""

from __future__ import annotations

import csv
import hashlib
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import List

import numpy as np

from . import tensor as T
from .checkpoint import save_model
from .errors import ConfigError, NonFiniteError
from .metrics import accuracy, compute_auc, decide
from .model import case_forward, case_loss
from .preprocess import PreprocessConfig, augment

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    lr0: float = 5e-5
    lr_decay: float = 0.9
    epochs: int = 10
    batch_size: int = 4
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    augment: bool = False

    def validate(self):
        if self.lr0 <= 0:
            raise ConfigError(f"lr0 must be positive, got {self.lr0}")
        if not 0 < self.lr_decay <= 1:
            raise ConfigError(f"lr_decay must lie in (0, 1], got {self.lr_decay}")
        if self.batch_size < 1 or self.epochs < 0:
            raise ConfigError("batch_size must be >= 1 and epochs >= 0")

    def lr_at(self, epoch):
        return self.lr0 * self.lr_decay ** epoch


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0


def adam_step(params, grads, state, lr, cfg):
    """One bias-corrected Adam update, applied to every parameter in ``params``.

    ``params`` maps paths to Tensors, ``grads`` maps the same paths to arrays
    (a missing entry counts as a zero gradient).
    """
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"non-finite gradient for parameter {name}")
    state.t += 1
    t = state.t
    c1 = 1.0 - cfg.beta1 ** t
    c2 = 1.0 - cfg.beta2 ** t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        m = cfg.beta1 * state.m.get(name, 0.0) + (1 - cfg.beta1) * g
        v = cfg.beta2 * state.v.get(name, 0.0) + (1 - cfg.beta2) * g * g
        state.m[name], state.v[name] = m, v
        p.data = np.asarray(p.data - lr * (m / c1) / (np.sqrt(v / c2) + cfg.eps))
    return state


@dataclass
class EpochLoss:
    epoch: int
    corr: float
    clss_cc: float
    clss_mlo: float
    total: float


@dataclass
class TrainResult:
    model: object
    loss_trace: List[EpochLoss]
    checkpoints: list = field(default_factory=list)


def epoch_order(seed, epoch, n):
    return np.random.default_rng(np.random.SeedSequence([seed, epoch, 7])).permutation(n)


def train(cases, model, cfg=None, checkpoint_dir=None, preprocess_cfg=None):
    """Minimise corr + bce_cc + bce_mlo with Adam; returns the per-epoch loss trace.

    Batches are accumulated case by case in a fixed order, so the result is
    bit-reproducible for a fixed seed.
    """
    cfg = cfg or TrainConfig()
    cfg.validate()
    cases = [c for c in cases if c.img_cc is not None and c.img_mlo is not None]
    if not cases:
        raise ConfigError("training needs at least one dual-view case")
    pcfg = preprocess_cfg or PreprocessConfig()
    params = model.named_parameters()
    state = AdamState()
    trace, ckpts = [], []
    if checkpoint_dir is not None:
        checkpoint_dir = Path(checkpoint_dir)
        checkpoint_dir.mkdir(parents=True, exist_ok=True)
    for epoch in range(cfg.epochs):
        lr = cfg.lr_at(epoch)
        order = epoch_order(cfg.seed, epoch, len(cases))
        aug_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, epoch, 11]))
        sums = np.zeros(4)
        for step, start in enumerate(range(0, len(order), cfg.batch_size)):
            batch = order[start:start + cfg.batch_size]
            T.zero_grad(params.values())
            for idx in batch:
                case = cases[idx]
                if cfg.augment:
                    case = augment(case, aug_rng, pcfg)
                lb = case_loss(case, model)
                values = lb.values()
                if not np.isfinite(values[3]):
                    raise NonFiniteError(f"non-finite loss at epoch {epoch}, step {step}, case {case.case_id}")
                sums += values
                T.backward(lb.total)
            grads = {n: p.grad / len(batch) for n, p in params.items() if p.grad is not None}
            adam_step(params, grads, state, lr, cfg)
        means = sums / len(cases)
        trace.append(EpochLoss(epoch, *map(float, means)))
        log.info("epoch %d lr %.3g corr %.4f clss_cc %.4f clss_mlo %.4f total %.4f",
                 epoch, lr, *means)
        if checkpoint_dir is not None:
            ckpts.append(save_model(checkpoint_dir / f"epoch{epoch:03d}.ckpt", model))
    T.zero_grad(params.values())
    return TrainResult(model, trace, ckpts)


@dataclass
class CasePrediction:
    case_id: str
    p_cc: float
    p_mlo: float
    p_avg: float
    label: int
    decision: int


@dataclass
class MetricsReport:
    accuracy: float
    auc: float
    per_case: List[CasePrediction]
    loss_trace: List[EpochLoss] = field(default_factory=list)
    mean_corr: float = float("nan")


def predict_case(case, model):
    out = case_forward(case, model)
    return decide(out.p_cc.item(), out.p_mlo.item())


def evaluate(cases, model, loss_trace=None):
    """Per-case predictions, accuracy at 0.5 and AUC of the averaged probability.

    ``mean_corr`` is the mean correlation loss over the evaluated pairs,
    computed whether or not the model trains with it.
    """
    from .losses import dual_view_corr_loss

    rows, corrs = [], []
    for case in cases:
        out = case_forward(case, model)
        p_avg, dec = decide(out.p_cc.item(), out.p_mlo.item())
        rows.append(CasePrediction(case.case_id, out.p_cc.item(), out.p_mlo.item(), p_avg, case.label, dec))
        corrs.append(dual_view_corr_loss(out.r_cc, out.r_mlo).item())
    labels = [r.label for r in rows]
    scores = [r.p_avg for r in rows]
    auc = compute_auc(scores, labels) if len(set(labels)) == 2 else float("nan")
    return MetricsReport(
        accuracy([r.decision for r in rows], labels),
        auc,
        rows,
        list(loss_trace or []),
        float(np.mean(corrs)),
    )


def split_by_case_id(cases, val_fraction=0.2):
    """Deterministic split on a hash of the case id (never by image)."""
    train, val = [], []
    for case in cases:
        h = int(hashlib.sha256(case.case_id.encode()).hexdigest()[:8], 16) / 0xFFFFFFFF
        (val if h < val_fraction else train).append(case)
    return train, val


def write_loss_trace(path, trace):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "corr", "clss_cc", "clss_mlo", "total"])
        for e in trace:
            w.writerow([e.epoch, repr(e.corr), repr(e.clss_cc), repr(e.clss_mlo), repr(e.total)])
    return Path(path)


def read_loss_trace(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [EpochLoss(int(r["epoch"]), float(r["corr"]), float(r["clss_cc"]),
                      float(r["clss_mlo"]), float(r["total"])) for r in rows]


def write_report(directory, report):
    """``per_case.csv`` plus ``summary.txt`` holding ``accuracy=<v> auc=<v>``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    with open(directory / "per_case.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["case_id", "p_cc", "p_mlo", "p_avg", "label"])
        for r in report.per_case:
            w.writerow([r.case_id, repr(r.p_cc), repr(r.p_mlo), repr(r.p_avg), r.label])
    summary = f"accuracy={report.accuracy!r} auc={report.auc!r}\n"
    (directory / "summary.txt").write_text(summary)
    return summary.strip()
