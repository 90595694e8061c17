"""Deterministic synthetic scenes and templated referential descriptions.

Scenes are rooms of axis-aligned, non-overlapping boxes on the floor, with
class/color attributes and a per-object point-cloud seed. Descriptions are
instantiated from token templates over a closed relation inventory, so every
phrase span and its object binding is exact by construction, and the target
is guaranteed to be the unique object of its class satisfying the relation.

All spatial language is judged from one canonical viewpoint: an observer at
the room-entrance midpoint (x = width/2, y = 0) facing +y. "Left" decreases
x, "in front of" means closer to the observer (smaller y).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import (
    CLASS_NAMES,
    COLOR_NAMES,
    GroundingSample,
    PhraseSpan,
    Scene,
    SceneObject,
)
from .errors import GenerationError, ValidationError
from .nn.rng import Rng, derive_seed

VIEW_DEPENDENT_KINDS = ("left-of", "right-of", "in-front-of", "behind")

RELATION_KINDS = VIEW_DEPENDENT_KINDS + (
    "closest-to", "farthest-from", "between", "on-top-of", "under",
)

REL_TOKENS = {
    "left-of": ("left", "of"),
    "right-of": ("right", "of"),
    "in-front-of": ("in", "front", "of"),
    "behind": ("behind",),
    "closest-to": ("closest", "to"),
    "farthest-from": ("farthest", "from"),
    "between": ("between",),
    "on-top-of": ("on", "top", "of"),
    "under": ("under",),
}

PALETTE_RGB = {
    "red": (0.85, 0.10, 0.10),
    "green": (0.10, 0.70, 0.15),
    "blue": (0.15, 0.20, 0.85),
    "yellow": (0.90, 0.85, 0.10),
    "white": (0.95, 0.95, 0.95),
    "black": (0.05, 0.05, 0.05),
    "brown": (0.55, 0.35, 0.15),
    "gray": (0.50, 0.50, 0.50),
}

# Characteristic box extents (sx, sy, sz) per class. Classes must be
# recognizable from their geometry alone, otherwise grounding on unseen
# scenes is impossible and models can only memorize.
CLASS_SIZES = {
    "bed": (1.6, 2.0, 0.5),
    "bench": (1.4, 0.45, 0.45),
    "bin": (0.35, 0.35, 0.45),
    "cabinet": (0.9, 0.45, 1.7),
    "chair": (0.5, 0.5, 0.9),
    "desk": (1.3, 0.7, 0.75),
    "door": (0.95, 0.12, 2.05),
    "lamp": (0.3, 0.3, 1.5),
    "mirror": (0.7, 0.08, 1.1),
    "monitor": (0.55, 0.12, 0.35),
    "pillow": (0.55, 0.35, 0.15),
    "plant": (0.45, 0.45, 1.1),
    "printer": (0.5, 0.45, 0.35),
    "rug": (1.5, 1.0, 0.04),
    "shelf": (1.1, 0.3, 1.8),
    "sofa": (1.9, 0.85, 0.8),
    "stool": (0.4, 0.4, 0.5),
    "table": (1.2, 1.2, 0.75),
    "vase": (0.22, 0.22, 0.5),
    "window": (1.2, 0.1, 1.2),
}


@dataclass(frozen=True)
class RelationSpec:
    kind: str
    anchors: tuple[int, ...]

    def __post_init__(self):
        if self.kind not in RELATION_KINDS:
            raise ValidationError(f"unknown relation kind: {self.kind}")
        expected = 2 if self.kind == "between" else 1
        if len(self.anchors) != expected:
            raise ValidationError(
                f"{self.kind} takes {expected} anchor(s), got {len(self.anchors)}"
            )

    @property
    def view_dependent(self) -> bool:
        return self.kind in VIEW_DEPENDENT_KINDS


@dataclass(frozen=True)
class GenConfig:
    room: tuple[float, float, float] = (10.0, 8.0, 3.0)
    classes: tuple[str, ...] = CLASS_NAMES
    m_min: int = 10
    m_max: int = 14
    duplicate_classes: int = 2
    duplicate_count: int = 3
    size_jitter: float = 0.15
    min_gap: float = 0.02
    wall_margin: float = 0.1
    tau_between: float = 0.5
    tau_z: float = 0.05
    max_place_attempts: int = 10000


# -- scene generation -----------------------------------------------------------


def _boxes_clear(obj: SceneObject, placed: list[SceneObject], gap: float) -> bool:
    for other in placed:
        dx = abs(obj.center[0] - other.center[0])
        dy = abs(obj.center[1] - other.center[1])
        if dx < (obj.size[0] + other.size[0]) / 2 + gap and dy < (
            obj.size[1] + other.size[1]
        ) / 2 + gap:
            return False
    return True


def generate_scene(config: GenConfig, seed: int) -> Scene:
    """Rejection-sample a scene; deterministic in (config, seed).

    The class assignment always contains ``duplicate_classes`` classes with
    ``duplicate_count`` instances each, so referential ambiguity exists, and
    fills the rest with distinct classes.
    """
    rng = Rng(seed)
    m = rng.randint(config.m_min, config.m_max + 1)
    dup_total = config.duplicate_classes * config.duplicate_count
    if m < dup_total:
        raise GenerationError(f"m={m} too small for duplicate block of {dup_total}")

    pool = list(config.classes)
    rng.shuffle(pool)
    dup = pool[: config.duplicate_classes]
    rest = pool[config.duplicate_classes:]
    labels = [c for c in dup for _ in range(config.duplicate_count)]
    while len(labels) < m:
        labels.append(rest[(len(labels) - dup_total) % len(rest)])
    rng.shuffle(labels)

    w, d, _h = config.room
    objects: list[SceneObject] = []
    attempts = 0
    jitter = config.size_jitter
    for idx, label in enumerate(labels):
        proto = CLASS_SIZES.get(label, (0.5, 0.5, 0.5))
        while True:
            attempts += 1
            if attempts > config.max_place_attempts:
                raise GenerationError("box placement failed; room too small")
            sx = proto[0] * rng.uniform(lo=1.0 - jitter, hi=1.0 + jitter)
            sy = proto[1] * rng.uniform(lo=1.0 - jitter, hi=1.0 + jitter)
            sz = proto[2] * rng.uniform(lo=1.0 - jitter, hi=1.0 + jitter)
            cx = rng.uniform(lo=config.wall_margin + sx / 2, hi=w - config.wall_margin - sx / 2)
            cy = rng.uniform(lo=config.wall_margin + sy / 2, hi=d - config.wall_margin - sy / 2)
            candidate = SceneObject(
                id=idx,
                label=label,
                center=(cx, cy, sz / 2),
                size=(sx, sy, sz),
                color=rng.choice(COLOR_NAMES),
                point_seed=rng.u64(),
            )
            if _boxes_clear(candidate, objects, config.min_gap):
                objects.append(candidate)
                break
    return Scene(scene_id=f"scene_{seed:016x}", room=config.room, objects=objects)


# -- relation semantics -----------------------------------------------------------


def evaluate_relation(
    scene: Scene, rel: RelationSpec, candidate_class: str,
    tau_between: float = 0.5, tau_z: float = 0.05,
) -> set[int]:
    """All objects of candidate_class satisfying the relation, anchors excluded."""
    for a in rel.anchors:
        if not (0 <= a < len(scene.objects)):
            raise ValidationError(f"anchor {a} not in scene")
    candidates = [
        o for o in scene.objects
        if o.label == candidate_class and o.id not in rel.anchors
    ]
    if not candidates:
        return set()
    anchor = scene.by_id(rel.anchors[0])

    if rel.kind == "left-of":
        return {o.id for o in candidates if o.center[0] < anchor.center[0]}
    if rel.kind == "right-of":
        return {o.id for o in candidates if o.center[0] > anchor.center[0]}
    if rel.kind == "in-front-of":
        return {o.id for o in candidates if o.center[1] < anchor.center[1]}
    if rel.kind == "behind":
        return {o.id for o in candidates if o.center[1] > anchor.center[1]}

    if rel.kind in ("closest-to", "farthest-from"):
        dists = {
            o.id: np.hypot(o.center[0] - anchor.center[0], o.center[1] - anchor.center[1])
            for o in candidates
        }
        pick = min(dists.values()) if rel.kind == "closest-to" else max(dists.values())
        return {oid for oid, dist in dists.items() if dist == pick}

    if rel.kind == "between":
        a = np.asarray(scene.by_id(rel.anchors[0]).center[:2])
        b = np.asarray(scene.by_id(rel.anchors[1]).center[:2])
        ab = b - a
        norm2 = float(ab @ ab)
        if norm2 == 0.0:
            return set()
        hits = set()
        for o in candidates:
            p = np.asarray(o.center[:2])
            t = float((p - a) @ ab) / norm2
            perp = float(np.hypot(*(p - (a + t * ab))))
            if 0.0 < t < 1.0 and perp < tau_between:
                hits.add(o.id)
        return hits

    if rel.kind == "on-top-of":
        return {
            o.id for o in candidates
            if abs(o.z_min - anchor.z_max) < tau_z and o.horizontal_overlap(anchor) > 0
        }
    if rel.kind == "under":
        return {
            o.id for o in candidates
            if abs(o.z_max - anchor.z_min) < tau_z and o.horizontal_overlap(anchor) > 0
        }
    raise ValidationError(f"unknown relation kind: {rel.kind}")


# -- templates ----------------------------------------------------------------------


SINGLE_ANCHOR_PATTERNS = (
    ("the", "[TGT]", "that", "is", "[REL]", "the", "[ANC1]"),
    ("the", "[TGT]", "[REL]", "the", "[ANC1]"),
)

BETWEEN_PATTERNS = (
    ("the", "[TGT]", "that", "is", "between", "the", "[ANC1]", "and", "the", "[ANC2]"),
    ("the", "[TGT]", "between", "the", "[ANC1]", "and", "the", "[ANC2]"),
)


def instantiate_template(
    pattern: tuple[str, ...], target_label: str, kind: str, anchor_labels: list[str]
) -> tuple[list[str], tuple[int, int], list[tuple[int, int]]]:
    """Expand a pattern into tokens plus the target/anchor spans.

    Every slot is preceded by "the"; phrase spans cover determiner + noun.
    """
    tokens: list[str] = []
    target_span = None
    anchor_spans: list[tuple[int, int]] = []
    for item in pattern:
        if item == "[TGT]":
            tokens.append(target_label)
            target_span = (len(tokens) - 2, len(tokens))
        elif item == "[REL]":
            tokens.extend(REL_TOKENS[kind])
        elif item in ("[ANC1]", "[ANC2]"):
            tokens.append(anchor_labels[0 if item == "[ANC1]" else 1])
            anchor_spans.append((len(tokens) - 2, len(tokens)))
        else:
            tokens.append(item)
    assert target_span is not None
    return tokens, target_span, anchor_spans


# -- triples and descriptions ---------------------------------------------------------


@dataclass(frozen=True)
class Triple:
    target_id: int
    rel: RelationSpec
    target_class: str
    hard: bool
    view_dep: bool


def enumerate_triples(scene: Scene, config: GenConfig = GenConfig()) -> list[Triple]:
    """All (target class, relation, anchors) with exactly one solution.

    Anchors are restricted to objects whose class occurs once in the scene so
    the anchor phrase itself is unambiguous; `between` additionally requires
    two anchors of distinct classes.
    """
    counts: dict[str, int] = {}
    for o in scene.objects:
        counts[o.label] = counts.get(o.label, 0) + 1
    unique_objs = [o for o in scene.objects if counts[o.label] == 1]
    triples: list[Triple] = []
    for target_class in sorted(counts):
        hard = counts[target_class] > 2
        for kind in RELATION_KINDS:
            if kind == "between":
                for i, a in enumerate(unique_objs):
                    for b in unique_objs[i + 1:]:
                        if target_class in (a.label, b.label) or a.label == b.label:
                            continue
                        rel = RelationSpec(kind, (a.id, b.id))
                        sol = evaluate_relation(
                            scene, rel, target_class,
                            tau_between=config.tau_between, tau_z=config.tau_z,
                        )
                        if len(sol) == 1:
                            triples.append(Triple(sol.pop(), rel, target_class, hard, False))
            else:
                for anchor in unique_objs:
                    if anchor.label == target_class:
                        continue
                    rel = RelationSpec(kind, (anchor.id,))
                    sol = evaluate_relation(
                        scene, rel, target_class,
                        tau_between=config.tau_between, tau_z=config.tau_z,
                    )
                    if len(sol) == 1:
                        triples.append(
                            Triple(sol.pop(), rel, target_class, hard, rel.view_dependent)
                        )
    return triples


def generate_description(
    scene: Scene,
    rng: Rng,
    config: GenConfig = GenConfig(),
    want_hard: bool | None = None,
    want_view_dep: bool | None = None,
    triples: list[Triple] | None = None,
) -> GroundingSample | None:
    """One sample over a uniquely-referring triple, or None if none matches."""
    if triples is None:
        triples = enumerate_triples(scene, config)
    pool = [
        t for t in triples
        if (want_hard is None or t.hard == want_hard)
        and (want_view_dep is None or t.view_dep == want_view_dep)
    ]
    if not pool:
        return None
    triple = rng.choice(pool)
    anchors = [scene.by_id(a) for a in triple.rel.anchors]
    if triple.rel.kind == "between":
        pattern = rng.choice(BETWEEN_PATTERNS)
    else:
        pattern = rng.choice(SINGLE_ANCHOR_PATTERNS)
    tokens, tgt_span, anchor_spans = instantiate_template(
        pattern, triple.target_class, triple.rel.kind, [a.label for a in anchors]
    )
    phrases = [PhraseSpan(tgt_span[0], tgt_span[1], triple.target_id, is_target=True)]
    for span, anchor in zip(anchor_spans, anchors):
        phrases.append(PhraseSpan(span[0], span[1], anchor.id))
    sample = GroundingSample(
        sample_id="",
        scene_id=scene.scene_id,
        tokens=tokens,
        target_id=triple.target_id,
        phrases=phrases,
    )
    sample.tags = classify_sample(scene, sample)
    return sample


def relation_kind_of(tokens: list[str]) -> str | None:
    """Recover the relation kind from a templated token stream."""
    # Longest token signatures first so "left of" never shadows "in front of".
    by_length = sorted(REL_TOKENS.items(), key=lambda kv: -len(kv[1]))
    for kind, signature in by_length:
        k = len(signature)
        for i in range(len(tokens) - k + 1):
            if tuple(tokens[i:i + k]) == signature:
                return kind
    return None


def classify_sample(scene: Scene, sample: GroundingSample) -> dict:
    """Difficulty tags: hard iff >2 same-class objects as the target."""
    target_label = scene.by_id(sample.target_id).label
    hard = scene.label_count(target_label) > 2
    kind = relation_kind_of(sample.tokens)
    return {"hard": hard, "view_dep": kind in VIEW_DEPENDENT_KINDS}


# -- point sampling ----------------------------------------------------------------


def sample_points(obj: SceneObject, n: int) -> np.ndarray:
    """n x 6 (xyz + rgb) points on the box surface, jittered and colored.

    Deterministic in obj.point_seed. Jitter is Gaussian with sigma scaled to
    the smallest box extent, so points stay near the surface.
    """
    if n < 8:
        raise ValidationError(f"need at least 8 points, got {n}")
    rng = Rng(obj.point_seed)
    sx, sy, sz = obj.size
    # Face order: -x, +x, -y, +y, -z, +z; probability by area.
    areas = np.array([sy * sz, sy * sz, sx * sz, sx * sz, sx * sy, sx * sy])
    cum = np.cumsum(areas / areas.sum())
    picks = np.searchsorted(cum, rng.uniform(n))
    u = rng.uniform(n) - 0.5
    v = rng.uniform(n) - 0.5
    pts = np.zeros((n, 3))
    for face in range(6):
        sel = picks == face
        axis, sign = divmod(face, 2)
        half = obj.size[axis] / 2
        pts[sel, axis] = half if sign else -half
        other = [i for i in range(3) if i != axis]
        pts[sel, other[0]] = u[sel] * obj.size[other[0]]
        pts[sel, other[1]] = v[sel] * obj.size[other[1]]
    sigma = 0.01 * min(obj.size)
    pts += rng.normal(3 * n, sigma=sigma).reshape(n, 3)
    pts += np.asarray(obj.center)
    rgb = np.asarray(PALETTE_RGB[obj.color]) + rng.normal(3 * n, sigma=0.05).reshape(n, 3)
    return np.hstack([pts, np.clip(rgb, 0.0, 1.0)])


def object_box_features(obj: SceneObject) -> np.ndarray:
    """center ⊕ size, the 6-float geometric summary fed to the model."""
    return np.asarray(obj.center + obj.size, dtype=np.float64)


# -- corpus assembly ----------------------------------------------------------------


@dataclass
class CorpusSpec:
    n_scenes: int
    n_samples: int
    seed: int
    hard_frac: float = 0.5
    view_dep_frac: float = 0.5
    config: GenConfig = field(default_factory=GenConfig)


def build_corpus(spec: CorpusSpec):
    """Scenes plus samples whose hard/view-dep fractions track the request.

    Per sample the difficulty flags are drawn Bernoulli and a scene offering a
    matching triple is searched round-robin; if no scene matches, the flags
    are relaxed (view-dep first) so generation always terminates.
    """
    scenes = [
        generate_scene(spec.config, derive_seed(spec.seed, "scene", i))
        for i in range(spec.n_scenes)
    ]
    triple_cache = {s.scene_id: enumerate_triples(s, spec.config) for s in scenes}
    rng = Rng(derive_seed(spec.seed, "samples"))
    samples: list[GroundingSample] = []
    for j in range(spec.n_samples):
        want_hard = rng.uniform() < spec.hard_frac
        want_view = rng.uniform() < spec.view_dep_frac
        sample = None
        for wants in ((want_hard, want_view), (want_hard, None), (None, None)):
            for k in range(spec.n_scenes):
                scene = scenes[(j + k) % spec.n_scenes]
                sample = generate_description(
                    scene, rng, spec.config,
                    want_hard=wants[0], want_view_dep=wants[1],
                    triples=triple_cache[scene.scene_id],
                )
                if sample is not None:
                    break
            if sample is not None:
                break
        if sample is None:
            raise GenerationError("no scene offers a uniquely-referring triple")
        sample.sample_id = f"s{j:06d}"
        samples.append(sample)
    n_train = max(1, round(0.8 * len(scenes)))
    splits = {
        "train": [s.scene_id for s in scenes[:n_train]],
        "val": [s.scene_id for s in scenes[n_train:]],
    }
    return scenes, samples, splits
