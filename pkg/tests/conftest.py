"""Shared fixtures: a small corpus and prepared model inputs."""

import numpy as np
import pytest

from phraseground import data as D
from phraseground import scenegen as G
from phraseground.model import GroundingModel, ModelConfig, build_class_index, prepare_sample


TINY_CFG = dict(dim=16, heads=2, joint_layers=1, text_layers=1,
                point_mlp_widths=(8, 16), n_points=16)


@pytest.fixture(scope="session")
def small_corpus():
    spec = G.CorpusSpec(n_scenes=8, n_samples=64, seed=1234)
    scenes, samples, splits = G.build_corpus(spec)
    return {s.scene_id: s for s in scenes}, samples, splits


@pytest.fixture(scope="session")
def small_setup(small_corpus):
    scenes, samples, _ = small_corpus
    vocab = D.build_vocab(samples)
    class_index = build_class_index(D.CLASS_NAMES)
    cfg = ModelConfig(vocab_size=len(vocab), num_classes=len(class_index), **TINY_CFG)
    preps = [
        prepare_sample(s, scenes[s.scene_id], vocab, class_index, cfg)
        for s in samples
    ]
    return {
        "scenes": scenes,
        "samples": samples,
        "vocab": vocab,
        "class_index": class_index,
        "cfg": cfg,
        "preps": preps,
    }


@pytest.fixture()
def small_model(small_setup):
    return GroundingModel(small_setup["cfg"])
