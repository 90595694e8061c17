"""Metrics and inference protocols.

A phrase is grounded by averaging its token columns of the alignment map and
taking the argmax over objects. Sentence-level accuracy (was the top-scored
proposal the target), the product metric over target and non-target phrases,
and the flat all-phrases accuracy are reported together with easy/hard and
view-dependent/independent breakdowns.

All reports state that the all-phrases accuracy includes target phrases.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import canonical_json
from .errors import ConfigurationError, ValidationError
from .model import GroundingModel, PreparedSample, collate, narrow_batch_poa
from .nn import tensor as T
from .nn.rng import Rng

EVAL_MODES = ("full", "weak", "randselect")

PG_NOTE = "acc_pg counts every annotated phrase, target phrases included"


@dataclass
class PhrasePrediction:
    phrase_index: int
    predicted_id: int
    gt_id: int

    @property
    def correct(self) -> bool:
        return self.predicted_id == self.gt_id


@dataclass
class SentenceResult:
    sample_id: str
    target_correct: bool
    phrases: list[PhrasePrediction]
    is_target_row: list[bool]
    tags: dict

    @property
    def nontarget_flags(self) -> list[bool]:
        return [p.correct for i, p in enumerate(self.phrases) if not self.is_target_row[i]]


@dataclass
class EvalReport:
    mode: str
    acc_vg: float
    acc_pag: float
    acc_pg: float
    bucket_acc: dict
    bucket_counts: dict
    num_sentences: int
    num_phrases: int
    note: str = PG_NOTE
    sentences: list = field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "note": self.note,
            "acc_vg": round(self.acc_vg, 6),
            "acc_pag": round(self.acc_pag, 6),
            "acc_pg": round(self.acc_pg, 6),
            "buckets": {
                name: {"acc_vg": round(self.bucket_acc[name], 6),
                       "count": self.bucket_counts[name]}
                for name in sorted(self.bucket_acc)
            },
            "num_sentences": self.num_sentences,
            "num_phrases": self.num_phrases,
        }

    def to_json(self) -> str:
        return canonical_json(self.to_dict())

    def to_text(self) -> str:
        cols = ["OA", "Easy", "Hard", "View-dep.", "View-indep.", "PAG", "PG"]
        vals = [
            self.acc_vg,
            self.bucket_acc["easy"],
            self.bucket_acc["hard"],
            self.bucket_acc["view_dep"],
            self.bucket_acc["view_indep"],
            self.acc_pag,
            self.acc_pg,
        ]
        head = " ".join(f"{c:>12}" for c in cols)
        body = " ".join(f"{100 * v:12.1f}" for v in vals)
        return f"# mode={self.mode}; {self.note}\n{head}\n{body}"


def ground_phrase(poa: np.ndarray, token_indices) -> int:
    """Argmax object for one phrase: mean its token columns, ties -> lowest id."""
    idx = list(token_indices)
    if not idx:
        raise ValidationError("empty phrase span")
    if max(idx) >= poa.shape[1] - 1:
        raise ValidationError("phrase token outside the map columns")
    scores = poa[:, idx].mean(axis=1)
    return int(np.argmax(scores))


def acc_pag_sentence(target_correct: bool, nontarget_correct: list[bool]) -> float:
    """Product of the target indicator and the non-target fraction.

    Sentences without non-target phrases score the fraction as 1, so the
    product degenerates to the target indicator.
    """
    vg = 1.0 if target_correct else 0.0
    if not nontarget_correct:
        return vg
    return vg * (sum(nontarget_correct) / len(nontarget_correct))


def _batched(seq, size):
    for lo in range(0, len(seq), size):
        yield seq[lo:lo + size]


def _full_forward_predictions(model, preps, batch_size):
    """(pred_target, per-sample narrowed POA map) via zero-mask forwards."""
    out = []
    for chunk in _batched(preps, batch_size):
        batch = collate(chunk, model.cfg)
        with T.no_grad():
            bout = model.forward_batch(batch)
        scores = bout.scores.data.copy()
        scores[~batch.obj_valid] = -np.inf
        poa = bout.poa.data
        for i, prep in enumerate(chunk):
            m = prep.points.shape[0]
            c = narrow_batch_poa(poa[i, :m], prep.length, model.cfg.l_max)
            out.append((int(np.argmax(scores[i])), c))
    return out


def _masked_phrase_predictions(model, jobs, batch_size):
    """Ground (prep, phrase_row) pairs through the mask-input pathway."""
    preds = []
    for chunk in _batched(jobs, batch_size):
        chunk_preps = [prep for prep, _row in chunk]
        batch = collate(chunk_preps, model.cfg)
        channel = np.zeros((len(chunk), model.cfg.l_max), dtype=np.float32)
        for i, (prep, row) in enumerate(chunk):
            channel[i, :prep.length] = prep.phrase_masks[row]
        with T.no_grad():
            bout = model.forward_batch(batch, mask_channel=channel)
        scores = bout.scores.data.copy()
        scores[~batch.obj_valid] = -np.inf
        preds.extend(int(np.argmax(scores[i])) for i in range(len(chunk)))
    return preds


def evaluate(
    model: GroundingModel,
    preps: list[PreparedSample],
    mode: str = "full",
    rng: Rng | None = None,
    batch_size: int = 64,
) -> EvalReport:
    """Run one protocol over prepared samples and aggregate every metric.

    full: one zero-mask forward per sample; the target comes from the score
    argmax and every phrase from the alignment map. weak: non-target phrases
    are grounded by feeding their ground-truth span mask through the
    pre-training pathway; the target uses the standard forward. randselect:
    every phrase (target included) gets a uniformly random object.
    """
    if mode not in EVAL_MODES:
        raise ConfigurationError(f"unknown eval mode: {mode}")
    if mode == "randselect" and rng is None:
        rng = Rng(0)

    sentences: list[SentenceResult] = []
    if mode == "randselect":
        for prep in preps:
            m = prep.points.shape[0]
            phrases = [
                PhrasePrediction(i, rng.randint(0, m), p.object_id)
                for i, p in enumerate(prep.sample.phrases)
            ]
            target_row = next(i for i, p in enumerate(prep.sample.phrases) if p.is_target)
            sentences.append(_sentence(prep, phrases[target_row].correct, phrases))
    else:
        fulls = _full_forward_predictions(model, preps, batch_size)
        weak_jobs = []
        if mode == "weak":
            for prep in preps:
                for row, p in enumerate(prep.sample.phrases):
                    if not p.is_target:
                        weak_jobs.append((prep, row))
            weak_preds = _masked_phrase_predictions(model, weak_jobs, batch_size)
            weak_iter = iter(weak_preds)
        for prep, (pred_target, poa) in zip(preps, fulls):
            phrases = []
            for i, p in enumerate(prep.sample.phrases):
                if mode == "full":
                    predicted = ground_phrase(poa, range(p.start, p.end))
                elif p.is_target:
                    predicted = pred_target
                else:
                    predicted = next(weak_iter)
                phrases.append(PhrasePrediction(i, predicted, p.object_id))
            target_correct = pred_target == prep.target_idx
            sentences.append(_sentence(prep, target_correct, phrases))

    return aggregate(sentences, mode)


def _sentence(prep: PreparedSample, target_correct: bool,
              phrases: list[PhrasePrediction]) -> SentenceResult:
    return SentenceResult(
        sample_id=prep.sample.sample_id,
        target_correct=target_correct,
        phrases=phrases,
        is_target_row=[p.is_target for p in prep.sample.phrases],
        tags=dict(prep.sample.tags),
    )


def aggregate(sentences: list[SentenceResult], mode: str) -> EvalReport:
    """Streaming reduction of per-sentence results into an EvalReport."""
    if not sentences:
        raise ValidationError("nothing to evaluate")
    vg_sum = pag_sum = 0.0
    phrase_total = phrase_correct = 0
    buckets = {"easy": [0, 0], "hard": [0, 0], "view_dep": [0, 0], "view_indep": [0, 0]}
    for s in sentences:
        vg = 1.0 if s.target_correct else 0.0
        nontargets = s.nontarget_flags
        vg_sum += vg
        pag_sum += acc_pag_sentence(s.target_correct, nontargets)
        phrase_total += len(s.phrases)
        phrase_correct += sum(1 for p in s.phrases if p.correct)
        buckets["hard" if s.tags["hard"] else "easy"][0] += vg
        buckets["hard" if s.tags["hard"] else "easy"][1] += 1
        buckets["view_dep" if s.tags["view_dep"] else "view_indep"][0] += vg
        buckets["view_dep" if s.tags["view_dep"] else "view_indep"][1] += 1
    n = len(sentences)
    return EvalReport(
        mode=mode,
        acc_vg=vg_sum / n,
        acc_pag=pag_sum / n,
        acc_pg=phrase_correct / phrase_total,
        bucket_acc={k: (v[0] / v[1] if v[1] else 0.0) for k, v in buckets.items()},
        bucket_counts={k: v[1] for k, v in buckets.items()},
        num_sentences=n,
        num_phrases=phrase_total,
        sentences=sentences,
    )
