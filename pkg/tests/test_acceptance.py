"""Acceptance suite.

Each criterion is one test that prints `ACCEPTANCE <name>: PASS` when it
holds (run with -s to see the lines live). The directional ablation trains
3 seeds x {baseline, +alignment, +pretraining, full} on a 2000/500 corpus
and dominates the runtime; everything else is minutes.
"""

import json
import math
import os

import numpy as np
import pytest

from phraseground import data as D
from phraseground import evaluation as E
from phraseground import scenegen as G
from phraseground import training as TR
from phraseground.cli import main as cli_main
from phraseground.model import (
    GroundingModel,
    ModelConfig,
    build_class_index,
    collate,
    prepare_sample,
)
from phraseground.nn import tensor as T
from phraseground.nn.gradcheck import finite_difference_check
from phraseground.nn.layers import MultiHeadAttention, ParamStore
from phraseground.nn.rng import Rng
from phraseground.nn.tensor import Tensor


def _ok(name: str) -> None:
    print(f"\nACCEPTANCE {name}: PASS")


# --------------------------------------------------------------------------
# Gradient suite: every differentiable op and the end-to-end tiny model.
# --------------------------------------------------------------------------


def _rand(rng, *shape):
    return Tensor(rng.normal(int(np.prod(shape))).reshape(shape),
                  requires_grad=True, dtype=np.float64)


def test_gradient_suite(small_setup):
    worst = 0.0
    for seed in range(10):
        rng = Rng(seed)
        a, b = _rand(rng, 5, 4), _rand(rng, 4, 3)
        worst = max(worst, finite_difference_check(
            lambda: T.mean_all(T.matmul(a, b)), [a, b]))

        x = _rand(rng, 3, 4)
        w = Tensor(rng.uniform(12).reshape(3, 4))
        worst = max(worst, finite_difference_check(
            lambda: T.mean_all(T.softmax_rows(x) * w), [x]))

        ln_x, gamma, beta = _rand(rng, 3, 8), _rand(rng, 8), _rand(rng, 8)
        worst = max(worst, finite_difference_check(
            lambda: T.mean_all(T.layer_norm(ln_x, gamma, beta)), [ln_x, gamma, beta]))

        lx, lw, lb = _rand(rng, 4, 6), _rand(rng, 6, 2), _rand(rng, 1, 2)
        worst = max(worst, finite_difference_check(
            lambda: T.mean_all(T.relu(T.matmul(lx, lw) + lb)), [lx, lw, lb]))

        table = _rand(rng, 7, 4)
        worst = max(worst, finite_difference_check(
            lambda: T.mean_all(T.embedding_lookup(table, np.array([1, 3, 3, 0]))),
            [table]))

        pool = _rand(rng, 6, 3)
        worst = max(worst, finite_difference_check(
            lambda: T.mean_all(T.max_pool_over_set(pool)), [pool]))

        logits = _rand(rng, 4, 5)
        target = rng.uniform(20).reshape(4, 5)
        target /= target.sum(axis=1, keepdims=True)
        worst = max(worst, finite_difference_check(
            lambda: T.cross_entropy_soft(T.softmax_rows(logits), target), [logits]))

        # Attention supervised purely through its maps stays well-posed.
        store = ParamStore(dtype=np.float64)
        mha = MultiHeadAttention(store, "m", 8, 2, Rng(seed))
        q = Tensor(rng.normal(24).reshape(3, 8), dtype=np.float64)
        kv = Tensor(rng.normal(32).reshape(4, 8), dtype=np.float64)
        attn_target = np.zeros((2, 3, 4))
        attn_target[:, :, seed % 4] = 1.0

        def attn_loss():
            _, attn = mha(q, kv, kv)
            picked = T.mul(T.log_clamp(attn), Tensor(attn_target))
            return T.mul(T.sum_all(picked), Tensor(np.asarray(-1.0 / 6.0)))

        worst = max(worst, finite_difference_check(attn_loss, store.tensors()))
    assert worst < 1e-3

    # End-to-end tiny model (hidden width 8), 10 seeds.
    scenes = small_setup["scenes"]
    samples = small_setup["samples"]
    vocab = small_setup["vocab"]
    class_index = small_setup["class_index"]
    e2e_worst = 0.0
    for seed in range(10):
        cfg = ModelConfig(vocab_size=len(vocab), num_classes=len(class_index),
                          dim=8, heads=2, joint_layers=1, text_layers=1,
                          point_mlp_widths=(8,), n_points=8, seed=seed)
        model = GroundingModel(cfg, dtype=np.float64)
        sample = samples[seed % len(samples)]
        prep = prepare_sample(sample, scenes[sample.scene_id], vocab, class_index, cfg)
        prep.points = prep.points[:3]
        prep.boxes = prep.boxes[:3]
        prep.obj_class_ids = prep.obj_class_ids[:3]
        prep.gt_soft = prep.gt_soft[:3]
        prep.target_idx = min(prep.target_idx, 2)

        def loss():
            out = model.forward(prep)
            total, _ = TR.loss_total(out, prep, mode="finetune")
            return total

        e2e_worst = max(e2e_worst, finite_difference_check(
            loss, model.store.tensors(), h=1e-6,
            max_coords_per_param=2, rng=Rng(seed + 1)))
    assert e2e_worst < 1e-3
    _ok(f"gradient-suite (op max rel err {worst:.2e}, e2e {e2e_worst:.2e})")


# --------------------------------------------------------------------------
# Alignment-map contract on random inputs and 10,000 generated samples.
# --------------------------------------------------------------------------


def test_poa_contract(small_setup, small_model):
    # Random inputs: the map is (M, L+1) and row-stochastic.
    for prep in small_setup["preps"][:20]:
        with T.no_grad():
            out = small_model.forward(prep)
        m, L = prep.points.shape[0], prep.length
        assert out.poa.shape == (m, L + 1)
        assert np.allclose(out.poa.data.sum(axis=1), 1.0, atol=1e-5)
        assert np.all(out.poa.data >= 0.0)

    # 10,000 generated samples: alignment invariants via an independent
    # span scan.
    spec = G.CorpusSpec(n_scenes=60, n_samples=10000, seed=990)
    scenes, samples, _ = G.build_corpus(spec)
    by_id = {s.scene_id: s for s in scenes}
    for sample in samples:
        m = len(by_id[sample.scene_id].objects)
        L = len(sample.tokens)
        gt = D.build_gt_alignment(sample, m)
        assert gt.shape == (m, L + 1)
        expected = {i: set() for i in range(m)}
        for p in sample.phrases:
            expected[p.object_id].update(range(p.start, p.end))
        for i in range(m):
            row = set(np.nonzero(gt[i, :L])[0])
            assert row == expected[i]
            assert gt[i, L] == (0.0 if expected[i] else 1.0)
        col_hits = gt[:, :L].sum(axis=0)
        assert np.all(col_hits <= 1.0)
        soft = D.soft_targets(gt)
        assert np.allclose(soft.sum(axis=1), 1.0, atol=1e-9)
    _ok(f"poa-contract ({len(samples)} samples span-scanned)")


# --------------------------------------------------------------------------
# Metric oracle equivalence on 1,000 randomized prediction sets.
# --------------------------------------------------------------------------


def test_metric_oracle_equivalence():
    rng = Rng(2024)
    for trial in range(1000):
        n = rng.randint(3, 40)
        sentences = []
        for i in range(n):
            k = rng.randint(1, 5)
            phrases = [
                E.PhrasePrediction(
                    j,
                    rng.randint(0, 5),
                    rng.randint(0, 5),
                )
                for j in range(k)
            ]
            sentences.append(E.SentenceResult(
                sample_id=f"t{trial}s{i}",
                target_correct=phrases[0].correct,
                phrases=phrases,
                is_target_row=[j == 0 for j in range(k)],
                tags={"hard": rng.uniform() < 0.5, "view_dep": rng.uniform() < 0.5},
            ))
        report = E.aggregate(sentences, "full")
        # Brute-force recomputation.
        vg = pag = 0.0
        correct = total = 0
        for s in sentences:
            nts = [p.correct for p, t in zip(s.phrases, s.is_target_row) if not t]
            s_vg = 1.0 if s.target_correct else 0.0
            s_pag = E.acc_pag_sentence(s.target_correct, nts)
            assert s_pag <= s_vg  # per-sentence product property
            vg += s_vg
            pag += s_pag
            correct += sum(p.correct for p in s.phrases)
            total += len(s.phrases)
        assert report.acc_vg == vg / n
        assert report.acc_pag == pag / n
        assert report.acc_pg == correct / total
        assert report.acc_pag <= report.acc_vg + 1e-15
    _ok("metric-oracle-equivalence (1000 prediction sets, exact)")


# --------------------------------------------------------------------------
# Overfit probe: 32 samples, hidden width 64.
# --------------------------------------------------------------------------


def test_overfit_probe():
    spec = G.CorpusSpec(n_scenes=8, n_samples=32, seed=7)
    scenes, samples, _ = G.build_corpus(spec)
    by_id = {s.scene_id: s for s in scenes}
    vocab = D.build_vocab(samples)
    index = build_class_index(D.CLASS_NAMES)
    cfg = ModelConfig(vocab_size=len(vocab), num_classes=len(index), dim=64,
                      heads=4, joint_layers=2, text_layers=1,
                      point_mlp_widths=(16, 32, 64), n_points=32, seed=0)
    preps = [prepare_sample(s, by_id[s.scene_id], vocab, index, cfg) for s in samples]
    model = GroundingModel(cfg)
    rng = Rng(3)
    order = list(range(len(preps)))
    reached_at = None
    for step in range(1, 2001):
        rng.shuffle(order)
        batch = collate([preps[i] for i in order[:16]], cfg)
        TR.finetune_step(model, batch, lr=1e-4)
        if step % 100 == 0:
            report = E.evaluate(model, preps, mode="full")
            if report.acc_vg == 1.0 and report.acc_pg >= 0.95:
                reached_at = (step, report.acc_vg, report.acc_pg)
                break
    assert reached_at is not None, "did not reach VG=100%, PG>=95% within 2000 steps"
    _ok(f"overfit-probe (VG=100%, PG={reached_at[2]:.2%} at step {reached_at[0]})")


# --------------------------------------------------------------------------
# RandSelect sanity: PG = 1/M on uniform scenes.
# --------------------------------------------------------------------------


def test_randselect_sanity():
    gen = G.GenConfig(m_min=10, m_max=10, duplicate_classes=1, duplicate_count=3)
    spec = G.CorpusSpec(n_scenes=25, n_samples=5100, seed=5, config=gen)
    scenes, samples, _ = G.build_corpus(spec)
    by_id = {s.scene_id: s for s in scenes}
    vocab = D.build_vocab(samples)
    index = build_class_index(D.CLASS_NAMES)
    cfg = ModelConfig(vocab_size=len(vocab), num_classes=len(index), dim=8,
                      heads=2, joint_layers=0, text_layers=0,
                      point_mlp_widths=(8,), n_points=8)
    preps = [prepare_sample(s, by_id[s.scene_id], vocab, index, cfg) for s in samples]
    report = E.evaluate(None, preps, mode="randselect", rng=Rng(123))
    assert report.num_phrases >= 10000
    assert abs(report.acc_pg - 0.1) <= 0.01
    _ok(f"randselect-sanity (PG={report.acc_pg:.3f} over {report.num_phrases} phrases)")


# --------------------------------------------------------------------------
# Table 1 derived statistics, exactly at two decimals.
# --------------------------------------------------------------------------


def test_stats_reproduction():
    assert D.phrases_per_sentence(92691, 32919) == 2.82
    assert D.phrases_per_sentence(137158, 65846) == 2.08
    assert D.phrases_per_sentence(87391, 36665) == 2.38
    _ok("stats-reproduction (2.82 / 2.08 / 2.38)")


# --------------------------------------------------------------------------
# Pipeline determinism: gen + train + eval twice, byte identical.
# --------------------------------------------------------------------------


def test_pipeline_determinism(tmp_path, capsys):
    def pipeline(root):
        data = os.path.join(root, "data")
        ckpt = os.path.join(root, "model.ckpt")
        assert cli_main(["gen", "--scenes", "5", "--samples", "40", "--out", data,
                         "--seed", "123"]) == 0
        assert cli_main(["train", "--data", data, "--out", ckpt, "--no-pretrain",
                         "--epochs", "2", "--dim", "16", "--n-points", "8",
                         "--batch-size", "8", "--seed", "5"]) == 0
        assert cli_main(["eval", "--data", data, "--ckpt", ckpt, "--json"]) == 0
        report_line = capsys.readouterr().out.strip().splitlines()[-1]
        files = {}
        for name in ("data/scenes.jsonl", "data/samples.jsonl", "data/splits.json",
                     "model.ckpt", "model.ckpt.metrics.csv"):
            with open(os.path.join(root, name), "rb") as fh:
                files[name] = fh.read()
        files["eval.json"] = report_line.encode()
        return files

    a = pipeline(os.path.join(tmp_path, "run_a"))
    b = pipeline(os.path.join(tmp_path, "run_b"))
    assert set(a) == set(b)
    for name in a:
        assert a[name] == b[name], f"{name} differs between runs"
    _ok("pipeline-determinism (datasets, checkpoints, reports byte-identical)")


# --------------------------------------------------------------------------
# Directional ablation (3 seeds) and the weak-supervision ordering.
# --------------------------------------------------------------------------

ABLATION_SEEDS = (0, 1, 2)


@pytest.fixture(scope="module")
def ablation_runs():
    spec = G.CorpusSpec(n_scenes=250, n_samples=2500, seed=42)
    scenes, samples, splits = G.build_corpus(spec)
    by_id = {s.scene_id: s for s in scenes}
    train_ids = set(splits["train"])
    val_ids = set(splits["val"])
    train = [s for s in samples if s.scene_id in train_ids][:2000]
    val = [s for s in samples if s.scene_id in val_ids][:500]
    assert len(train) == 2000 and len(val) == 500
    vocab = D.build_vocab(train)
    index = build_class_index(D.CLASS_NAMES)

    def make_cfg(seed):
        return ModelConfig(vocab_size=len(vocab), num_classes=len(index), dim=64,
                           heads=4, joint_layers=2, text_layers=1,
                           point_mlp_widths=(16, 32, 64), n_points=32, seed=seed)

    cfg0 = make_cfg(0)
    tp = [prepare_sample(s, by_id[s.scene_id], vocab, index, cfg0) for s in train]
    vp = [prepare_sample(s, by_id[s.scene_id], vocab, index, cfg0) for s in val]

    def run_variant(stage, pretrain_epochs, poa, seed):
        model = GroundingModel(make_cfg(seed))
        warm = False
        if pretrain_epochs:
            TR.run_training(model, tp, vp,
                            TR.TrainConfig(epochs=pretrain_epochs, seed=seed),
                            stage="pretrain")
            warm = True
        rows = TR.run_training(model, tp, vp,
                               TR.TrainConfig(epochs=40, seed=seed, poa_enabled=poa),
                               stage=stage, warm_start=warm)
        return model, max(r["acc_vg"] for r in rows)

    results = {"B": [], "C": [], "D": [], "FULL": []}
    full_models = []
    for seed in ABLATION_SEEDS:
        _, b = run_variant("baseline", 0, False, seed)
        _, c = run_variant("finetune", 0, True, seed)
        _, d = run_variant("baseline", 40, False, seed)
        m_full, f = run_variant("finetune", 40, True, seed)
        results["B"].append(b)
        results["C"].append(c)
        results["D"].append(d)
        results["FULL"].append(f)
        full_models.append(m_full)
        print(f"\n[ablation seed {seed}] B={b:.3f} C={c:.3f} D={d:.3f} FULL={f:.3f}",
              flush=True)

    # Weak supervision: pretraining-style training on rule-parsed target
    # phrases only, then the masked-pathway evaluation protocol.
    weak_samples, _ = TR.make_weak_samples(train, D.CLASS_NAMES)
    wp = [prepare_sample(s, by_id[s.scene_id], vocab, index, cfg0)
          for s in weak_samples]
    weak_model = GroundingModel(make_cfg(0))
    TR.run_training(weak_model, wp, vp, TR.TrainConfig(epochs=40, seed=0),
                    stage="pretrain")
    weak_report = E.evaluate(weak_model, vp, mode="weak")
    full_report = E.evaluate(full_models[0], vp, mode="full")
    rand_report = E.evaluate(None, vp, mode="randselect", rng=Rng(9))
    return {
        "acc": results,
        "weak": weak_report,
        "full": full_report,
        "rand": rand_report,
    }


def test_table6_directional_analog(ablation_runs):
    acc = ablation_runs["acc"]
    mean = {k: float(np.mean(v)) for k, v in acc.items()}
    print("\nablation means: " + " ".join(f"{k}={v:.3f}" for k, v in mean.items()))
    assert mean["C"] >= mean["B"] + 0.01, f"POA gain too small: {mean}"
    assert mean["D"] >= mean["B"] + 0.01, f"pretraining gain too small: {mean}"
    assert mean["FULL"] >= mean["B"], f"full vs B: {mean}"
    assert mean["FULL"] >= mean["C"], f"full vs C: {mean}"
    assert mean["FULL"] >= mean["D"], f"full vs D: {mean}"
    _ok("table6-directional-analog "
        + " ".join(f"{k}={100 * v:.1f}" for k, v in mean.items()))


def test_weak_supervision_ordering(ablation_runs):
    weak = ablation_runs["weak"]
    full = ablation_runs["full"]
    rand = ablation_runs["rand"]
    print(f"\nweak ordering: rand PAG={rand.acc_pag:.3f} PG={rand.acc_pg:.3f} | "
          f"weak PAG={weak.acc_pag:.3f} PG={weak.acc_pg:.3f} | "
          f"full PAG={full.acc_pag:.3f} PG={full.acc_pg:.3f}")
    assert rand.acc_pag < weak.acc_pag < full.acc_pag
    assert rand.acc_pg < weak.acc_pg < full.acc_pg
    _ok("weak-supervision-ordering (RandSelect < weak < fully supervised)")


# --------------------------------------------------------------------------
# [SECONDARY] Annotation round trip over the HTTP endpoints (no UI needed).
# --------------------------------------------------------------------------


def test_secondary_annotation_round_trip(tmp_path):
    from fastapi.testclient import TestClient

    from phraseground.service import create_app

    spec = G.CorpusSpec(n_scenes=5, n_samples=20, seed=314)
    scenes, samples, splits = G.build_corpus(spec)
    corpus = os.path.join(tmp_path, "demo")
    D.save_corpus(corpus, scenes, samples, splits)
    client = TestClient(create_app(corpus, os.path.join(tmp_path, "store.jsonl")))

    # Hidden ground truth: what the annotators "enter through the UI".
    disputed_id = samples[3].sample_id
    for sample in samples:
        for annotator in ("alice", "bob"):
            spans = [
                {"start": p.start, "end": p.end, "object_id": p.object_id,
                 "is_target": p.is_target}
                for p in sample.phrases
            ]
            if sample.sample_id == disputed_id and annotator == "bob":
                spans[-1]["object_id"] = (spans[-1]["object_id"] + 1) % 2
            body = {"sample_id": sample.sample_id, "annotator_id": annotator,
                    "spans": spans, "unsure": False, "timestamp": 7.0}
            assert client.post("/api/annotations", json=body).status_code == 200
        for annotator in ("alice", "bob"):
            r = client.post("/api/verify", json={
                "sample_id": sample.sample_id, "annotator_id": annotator,
                "approve": True,
            })
            assert r.status_code == 200

    lines = client.get("/api/export").text.strip().splitlines()
    exported = {rec["sample_id"]: rec for rec in map(json.loads, lines)}
    assert disputed_id not in exported  # disputed records never export
    assert len(exported) == len(samples) - 1
    by_id = {s.sample_id: s for s in samples}
    for sample_id, rec in exported.items():
        truth = by_id[sample_id]
        got = D.sample_from_dict(rec, path="export[?]")
        D.validate_sample(got)
        assert got.tokens == truth.tokens
        assert got.target_id == truth.target_id
        want = {(p.start, p.end, p.object_id, p.is_target) for p in truth.phrases}
        have = {(p.start, p.end, p.object_id, p.is_target) for p in got.phrases}
        assert want == have
    _ok("secondary-annotation-round-trip (19 exported exactly, 1 dispute excluded)")
