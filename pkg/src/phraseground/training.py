"""Losses and the two-stage training regime.

Stage one is phrase-specific pre-training: per sample one phrase mask is
drawn uniformly, concatenated onto the text features, and the confidence
scores are supervised against that phrase's object. Stage two fine-tunes on
the full task with zero mask input: grounding CE on the target, soft
cross-entropy on the alignment map, auxiliary class heads, and a BCE head
predicting the target-phrase token mask. "baseline" drops the alignment and
mask terms, which is the ablation reference point.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, replace

import numpy as np

from . import data as D
from .errors import ConfigurationError, TrainingError
from .evaluation import evaluate
from .model import (
    BatchOutput,
    GroundingModel,
    ModelOutput,
    PreparedBatch,
    PreparedSample,
    batch_mask_channel,
    collate,
)
from .nn import tensor as T
from .nn.optim import adam_step, clip_grad_norm
from .nn.rng import Rng, derive_seed
from .nn.tensor import Tensor

MODES = ("pretrain", "finetune", "baseline")

METRICS_HEADER = (
    "epoch,loss_total,loss_ground,loss_poa,loss_aux,loss_mask,acc_vg,acc_pag,acc_pg,lr"
)


@dataclass(frozen=True)
class LossWeights:
    ground: float = 1.0
    poa: float = 1.0
    obj_class: float = 0.5
    cls_class: float = 0.5
    mask: float = 0.5

    def __post_init__(self):
        for name, value in self.__dict__.items():
            if value < 0:
                raise ConfigurationError(f"loss weight {name} must be non-negative")


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 16
    lr_pretrain: float = 1e-4
    lr_finetune: float = 1e-5
    lr_decay: float = 0.65
    decay_every: int = 10
    epochs: int = 40
    seed: int = 0
    poa_enabled: bool = True
    pretrain_enabled: bool = True
    # When the drawn phrase is the target phrase, present the canonical
    # zero mask this often instead of its span mask. Bridges the input
    # distribution to mask-free fine-tuning/inference while supervision
    # still flows only through the drawn phrase.
    pretrain_zero_mask_frac: float = 0.75
    # Whether the pre-training stage also optimizes the alignment map.
    # Off by default; the full two-stage recipe switches it on so the slow
    # warm fine-tune only has to polish the map, not learn it.
    pretrain_poa: bool = False
    # Global gradient-norm clip applied before every Adam step; None disables.
    clip_norm: float | None = 1.0
    weights: LossWeights = field(default_factory=LossWeights)

    def __post_init__(self):
        if self.lr_pretrain <= 0 or self.lr_finetune <= 0:
            raise ConfigurationError("learning rates must be positive")
        if not (0.0 < self.lr_decay < 1.0):
            raise ConfigurationError("lr_decay must lie in (0, 1)")
        if not (0.0 <= self.pretrain_zero_mask_frac <= 1.0):
            raise ConfigurationError("pretrain_zero_mask_frac must lie in [0, 1]")


def lr_at(epoch: int, lr0: float, cfg: TrainConfig) -> float:
    """Step decay: lr0 * decay^(epoch // decay_every)."""
    return lr0 * cfg.lr_decay ** (epoch // cfg.decay_every)


# -- loss terms -----------------------------------------------------------------


def _nll_rows(logits: Tensor, idx: np.ndarray, mask: np.ndarray | None = None) -> Tensor:
    """Mean negative log-likelihood of picked entries over the last axis."""
    picked = T.gather_last(T.log_softmax_last(logits, mask=mask), idx)
    return -1.0 * T.mean_all(picked)


def _masked_nll_rows(logits: Tensor, idx: np.ndarray, row_valid: np.ndarray) -> Tensor:
    picked = T.gather_last(T.log_softmax_last(logits), idx)
    weighted = picked * Tensor(row_valid.astype(logits.dtype))
    count = max(int(row_valid.sum()), 1)
    return T.sum_all(weighted) * (-1.0 / count)


def _poa_ce(poa: Tensor, gt_soft: np.ndarray, rows: int) -> Tensor:
    """-sum(gt * log poa) / rows; padded rows/columns carry zero target mass."""
    picked = T.mul(T.log_clamp(poa), Tensor(gt_soft.astype(poa.dtype)))
    return T.sum_all(picked) * (-1.0 / rows)


def loss_total(
    out: ModelOutput,
    prep: PreparedSample,
    weights: LossWeights = LossWeights(),
    mode: str = "finetune",
    poa_enabled: bool = True,
    ground_target: int | None = None,
):
    """Per-sample loss; returns (scalar Tensor, raw per-term breakdown)."""
    if mode not in MODES:
        raise ConfigurationError(f"unknown loss mode: {mode}")
    m = out.scores.shape[0]
    target = prep.target_idx if ground_target is None else ground_target
    ground = _nll_rows(T.reshape(out.scores, (1, m)), np.asarray([target]))
    obj_cls = _nll_rows(out.obj_class_logits, prep.obj_class_ids)
    num_classes = out.cls_target_logits.shape[0]
    cls_cls = _nll_rows(
        T.reshape(out.cls_target_logits, (1, num_classes)),
        np.asarray([prep.target_class_id]),
    )
    total = weights.ground * ground + weights.obj_class * obj_cls + weights.cls_class * cls_cls
    terms = {"ground": ground.item(), "obj_class": obj_cls.item(),
             "cls_class": cls_cls.item(), "poa": 0.0, "mask": 0.0}
    if mode == "finetune":
        if poa_enabled:
            if prep.gt_soft is None:
                raise ConfigurationError("POA mode requires a ground-truth alignment")
            poa = T.cross_entropy_soft(out.poa, prep.gt_soft)
            total = total + weights.poa * poa
            terms["poa"] = poa.item()
        mask = T.bce_with_logits(out.target_mask_logits, prep.target_mask)
        total = total + weights.mask * mask
        terms["mask"] = mask.item()
    terms["total"] = total.item()
    return total, terms


def loss_total_batch(
    bout: BatchOutput,
    batch: PreparedBatch,
    weights: LossWeights = LossWeights(),
    mode: str = "finetune",
    poa_enabled: bool = True,
    ground_targets: np.ndarray | None = None,
    pretrain_poa: bool = False,
):
    """Batched loss over padded tensors; padding is masked out of every term.

    Pre-training is grounding CE plus the auxiliary class heads; it adds the
    alignment-map CE only when ``pretrain_poa`` asks for it. Fine-tuning adds
    the alignment-map CE (if enabled) and the target-mask BCE; baseline drops
    both extras.
    """
    if mode not in MODES:
        raise ConfigurationError(f"unknown loss mode: {mode}")
    targets = batch.target_idx if ground_targets is None else ground_targets
    ground = _nll_rows(bout.scores, targets, mask=batch.obj_valid)
    obj_cls = _masked_nll_rows(bout.obj_class_logits, batch.obj_class_ids, batch.obj_valid)
    cls_cls = _nll_rows(bout.cls_target_logits, batch.target_class_id)
    total = weights.ground * ground + weights.obj_class * obj_cls + weights.cls_class * cls_cls
    terms = {"ground": ground.item(), "obj_class": obj_cls.item(),
             "cls_class": cls_cls.item(), "poa": 0.0, "mask": 0.0}
    with_poa = (mode == "finetune" and poa_enabled) or (mode == "pretrain" and pretrain_poa)
    if with_poa:
        poa = _poa_ce(bout.poa, batch.gt_soft, rows=int(batch.obj_valid.sum()))
        total = total + weights.poa * poa
        terms["poa"] = poa.item()
    if mode == "finetune":
        mask = T.bce_with_logits(bout.target_mask_logits, batch.target_mask,
                                 mask=batch.tok_real)
        total = total + weights.mask * mask
        terms["mask"] = mask.item()
    terms["total"] = total.item()
    return total, terms


# -- steps ------------------------------------------------------------------------


def pretrain_step(model: GroundingModel, batch: PreparedBatch, rng: Rng, lr: float,
                  weights: LossWeights = LossWeights(),
                  zero_mask_frac: float = 0.75,
                  poa_enabled: bool = False,
                  clip_norm: float | None = 1.0) -> dict:
    """Draw one phrase mask per sample and ground that phrase's object.

    Target-phrase draws are presented without their mask ``zero_mask_frac``
    of the time, so the model also learns the mask-free conditioning that
    fine-tuning and inference use; the supervised object is the drawn
    phrase's object either way.
    """
    rows = [rng.randint(0, p.phrase_masks.shape[0]) for p in batch.preps]
    channel = batch_mask_channel(batch.preps, rows, model.cfg.l_max)
    for i, (p, row) in enumerate(zip(batch.preps, rows)):
        if p.sample.phrases[row].is_target and rng.uniform() < zero_mask_frac:
            channel[i] = 0.0
    ground_targets = np.asarray(
        [p.sample.phrases[row].object_id for p, row in zip(batch.preps, rows)]
    )
    bout = model.forward_batch(batch, mask_channel=channel)
    total, terms = loss_total_batch(
        bout, batch, weights, mode="pretrain", ground_targets=ground_targets,
        pretrain_poa=poa_enabled,
    )
    _check_finite(total, batch, terms)
    total.backward()
    if clip_norm is not None:
        clip_grad_norm(model.store, clip_norm)
    adam_step(model.store, lr)
    return terms


def finetune_step(model: GroundingModel, batch: PreparedBatch, lr: float,
                  weights: LossWeights = LossWeights(), mode: str = "finetune",
                  poa_enabled: bool = True, clip_norm: float | None = 1.0) -> dict:
    """Fine-tune on the full task; the mask channel stays all-zeros."""
    bout = model.forward_batch(batch)
    total, terms = loss_total_batch(bout, batch, weights, mode=mode,
                                    poa_enabled=poa_enabled)
    _check_finite(total, batch, terms)
    total.backward()
    if clip_norm is not None:
        clip_grad_norm(model.store, clip_norm)
    adam_step(model.store, lr)
    return terms


def _check_finite(total: Tensor, batch: PreparedBatch, terms: dict) -> None:
    if np.isfinite(total.data).all():
        return
    dump = {
        "sample_ids": [p.sample.sample_id for p in batch.preps],
        "terms": terms,
    }
    raise TrainingError(f"non-finite loss; offending batch: {json.dumps(dump)}")


# -- weak supervision ----------------------------------------------------------------


def make_weak_samples(samples: list[D.GroundingSample], class_vocab):
    """Strip annotations down to the rule-parsed target phrase.

    Returns (weak samples, parse-miss count); samples whose parser misses are
    skipped, mirroring how weak supervision would treat unparseable text.
    """
    weak: list[D.GroundingSample] = []
    misses = 0
    for s in samples:
        span = D.parse_target_phrase(s.tokens, class_vocab)
        if span is None:
            misses += 1
            continue
        phrase = D.PhraseSpan(span.start, span.end, s.target_id, is_target=True)
        weak.append(
            D.GroundingSample(
                sample_id=s.sample_id,
                scene_id=s.scene_id,
                tokens=list(s.tokens),
                target_id=s.target_id,
                phrases=[phrase],
                tags=dict(s.tags),
            )
        )
    return weak, misses


# -- training loop ----------------------------------------------------------------


def reset_optimizer(model: GroundingModel) -> None:
    """Fresh Adam state; each training stage is its own optimizer run."""
    for p in model.store:
        p.m = np.zeros_like(p.m)
        p.v = np.zeros_like(p.v)
        p.step = 0


def run_training(
    model: GroundingModel,
    train: list[PreparedSample],
    val: list[PreparedSample],
    cfg: TrainConfig,
    stage: str,
    warm_start: bool = False,
    metrics_path: str | None = None,
    on_best=None,
) -> list[dict]:
    """One training stage with per-epoch validation.

    Returns the metrics rows (one per epoch). ``on_best`` is invoked with the
    model whenever validation Acc_VG improves, which is where checkpointing
    hooks in. Fine-tuning runs at lr_finetune only when warm-started; the
    optimizer starts fresh either way (second moments accumulated during
    pre-training would otherwise suppress the smaller fine-tune steps).
    """
    if stage not in MODES:
        raise ConfigurationError(f"unknown training stage: {stage}")
    if stage == "pretrain" or not warm_start:
        lr0 = cfg.lr_pretrain
    else:
        lr0 = cfg.lr_finetune
    reset_optimizer(model)
    rng = Rng(derive_seed(cfg.seed, "train", stage))
    rows: list[dict] = []
    best = -1.0
    order = list(range(len(train)))
    for epoch in range(cfg.epochs):
        lr = lr_at(epoch, lr0, cfg)
        rng_epoch = rng.child("epoch", epoch)
        rng_epoch.shuffle(order)
        sums: dict[str, float] = {}
        steps = 0
        for lo in range(0, len(order), cfg.batch_size):
            chunk = [train[i] for i in order[lo:lo + cfg.batch_size]]
            batch = collate(chunk, model.cfg)
            if stage == "pretrain":
                terms = pretrain_step(model, batch, rng_epoch, lr, cfg.weights,
                                      zero_mask_frac=cfg.pretrain_zero_mask_frac,
                                      poa_enabled=cfg.pretrain_poa,
                                      clip_norm=cfg.clip_norm)
            else:
                terms = finetune_step(model, batch, lr, cfg.weights, mode=stage,
                                      poa_enabled=cfg.poa_enabled,
                                      clip_norm=cfg.clip_norm)
            steps += 1
            for key, value in terms.items():
                sums[key] = sums.get(key, 0.0) + value
        means = {k: v / max(steps, 1) for k, v in sums.items()}
        report = evaluate(model, val, mode="full")
        w = cfg.weights
        rows.append({
            "epoch": epoch,
            "loss_total": means.get("total", 0.0),
            "loss_ground": w.ground * means.get("ground", 0.0),
            "loss_poa": w.poa * means.get("poa", 0.0),
            "loss_aux": w.obj_class * means.get("obj_class", 0.0)
                        + w.cls_class * means.get("cls_class", 0.0),
            "loss_mask": w.mask * means.get("mask", 0.0),
            "acc_vg": report.acc_vg,
            "acc_pag": report.acc_pag,
            "acc_pg": report.acc_pg,
            "lr": lr,
        })
        if report.acc_vg > best:
            best = report.acc_vg
            if on_best is not None:
                on_best(model, report, epoch)
    if metrics_path is not None:
        write_metrics_csv(metrics_path, rows)
    return rows


def write_metrics_csv(path: str, rows: list[dict]) -> None:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(METRICS_HEADER + "\n")
        for r in rows:
            fh.write(
                f"{r['epoch']},{r['loss_total']:.6f},{r['loss_ground']:.6f},"
                f"{r['loss_poa']:.6f},{r['loss_aux']:.6f},{r['loss_mask']:.6f},"
                f"{r['acc_vg']:.6f},{r['acc_pag']:.6f},{r['acc_pg']:.6f},"
                f"{r['lr']:.8f}\n"
            )


def scaled_config(cfg: TrainConfig, **overrides) -> TrainConfig:
    return replace(cfg, **overrides)
