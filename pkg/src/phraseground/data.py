"""Data model, serialization, tokenization and alignment-target construction.

Holds the plain record types shared across the pipeline (scenes, samples,
phrase spans), the ground-truth object/token alignment matrix and the
per-phrase binary masks, the rule-based target-phrase parser used for weak
supervision, corpus statistics, and canonical JSONL round-tripping.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import SchemaError, ValidationError

COLOR_NAMES = ("red", "green", "blue", "yellow", "white", "black", "brown", "gray")

CLASS_NAMES = (
    "bed", "bench", "bin", "cabinet", "chair", "desk", "door", "lamp",
    "mirror", "monitor", "pillow", "plant", "printer", "rug", "shelf",
    "sofa", "stool", "table", "vase", "window",
)

DETERMINERS = ("the", "a", "an", "this", "that")
SIZE_ADJECTIVES = ("small", "large", "tall", "short", "left", "right")

PAD_ID, CLS_ID, UNK_ID = 0, 1, 2
RESERVED_TOKENS = ("[PAD]", "[CLS]", "[UNK]")

L_MAX = 24
M_MAX = 24


# -- record types --------------------------------------------------------------


@dataclass
class SceneObject:
    id: int
    label: str
    center: tuple[float, float, float]
    size: tuple[float, float, float]
    color: str
    point_seed: int

    @property
    def z_min(self) -> float:
        return self.center[2] - self.size[2] / 2

    @property
    def z_max(self) -> float:
        return self.center[2] + self.size[2] / 2

    def horizontal_overlap(self, other: "SceneObject") -> float:
        """Overlap area of the two xy footprints (0 when disjoint)."""
        ox = min(self.center[0] + self.size[0] / 2, other.center[0] + other.size[0] / 2) - max(
            self.center[0] - self.size[0] / 2, other.center[0] - other.size[0] / 2
        )
        oy = min(self.center[1] + self.size[1] / 2, other.center[1] + other.size[1] / 2) - max(
            self.center[1] - self.size[1] / 2, other.center[1] - other.size[1] / 2
        )
        return max(ox, 0.0) * max(oy, 0.0)


@dataclass
class Scene:
    scene_id: str
    room: tuple[float, float, float]
    objects: list[SceneObject]

    @property
    def viewpoint(self) -> tuple[tuple[float, float], tuple[float, float]]:
        """Canonical observer: room-entrance midpoint, facing +depth."""
        return (self.room[0] / 2.0, 0.0), (0.0, 1.0)

    def by_id(self, object_id: int) -> SceneObject:
        return self.objects[object_id]

    def label_count(self, label: str) -> int:
        return sum(1 for o in self.objects if o.label == label)


@dataclass
class PhraseSpan:
    start: int
    end: int
    object_id: int
    is_target: bool = False


@dataclass
class GroundingSample:
    sample_id: str
    scene_id: str
    tokens: list[str]
    target_id: int
    phrases: list[PhraseSpan]
    tags: dict = field(default_factory=lambda: {"hard": False, "view_dep": False})


def validate_sample(sample: GroundingSample, num_objects: int | None = None) -> None:
    """Enforce the sample invariants; raises ValidationError on the first hit."""
    L = len(sample.tokens)
    if L == 0 or L > L_MAX:
        raise ValidationError(f"{sample.sample_id}: token count {L} outside (0, {L_MAX}]")
    if not sample.phrases:
        raise ValidationError(f"{sample.sample_id}: no phrase spans")
    targets = [p for p in sample.phrases if p.is_target]
    if len(targets) != 1:
        raise ValidationError(f"{sample.sample_id}: expected exactly one target span")
    if targets[0].object_id != sample.target_id:
        raise ValidationError(f"{sample.sample_id}: target span object != target_id")
    covered = np.zeros(L, dtype=bool)
    for p in sample.phrases:
        if not (0 <= p.start < p.end <= L):
            raise ValidationError(f"{sample.sample_id}: span [{p.start},{p.end}) out of bounds")
        if covered[p.start:p.end].any():
            raise ValidationError(f"{sample.sample_id}: overlapping spans")
        covered[p.start:p.end] = True
        if num_objects is not None and not (0 <= p.object_id < num_objects):
            raise ValidationError(f"{sample.sample_id}: object id {p.object_id} not in scene")


# -- alignment targets ----------------------------------------------------------


def build_gt_alignment(sample: GroundingSample, num_objects: int) -> np.ndarray:
    """Binary (M, L+1) map: object rows are 1 at their phrase token columns.

    Objects mentioned by no phrase get a single 1 in the trailing no-object
    column. An object mentioned by several phrases ORs their token sets.
    """
    validate_sample(sample, num_objects)
    L = len(sample.tokens)
    gt = np.zeros((num_objects, L + 1), dtype=np.float32)
    for p in sample.phrases:
        gt[p.object_id, p.start:p.end] = 1.0
    for m in range(num_objects):
        if gt[m, :L].sum() == 0:
            gt[m, L] = 1.0
    return gt


def soft_targets(gt: np.ndarray) -> np.ndarray:
    """Row-normalize a GT alignment into soft cross-entropy targets."""
    sums = gt.sum(axis=-1, keepdims=True)
    if np.any(sums == 0):
        raise ValidationError("alignment row with no mass")
    return gt / sums


def build_phrase_masks(sample: GroundingSample) -> np.ndarray:
    """K x L binary masks, one per phrase, in phrase order."""
    L = len(sample.tokens)
    masks = np.zeros((len(sample.phrases), L), dtype=np.float32)
    for i, p in enumerate(sample.phrases):
        masks[i, p.start:p.end] = 1.0
    return masks


# -- tokenization ----------------------------------------------------------------


def tokenize(text: str) -> list[str]:
    return text.lower().split()


class Vocabulary:
    """Token-to-index map with [PAD]/[CLS]/[UNK] reserved at 0/1/2."""

    def __init__(self, tokens: list[str]):
        self.id_to_token = list(RESERVED_TOKENS) + list(tokens)
        self.token_to_id = {t: i for i, t in enumerate(self.id_to_token)}
        if len(self.token_to_id) != len(self.id_to_token):
            raise ValidationError("duplicate tokens in vocabulary")

    def __len__(self) -> int:
        return len(self.id_to_token)

    def __contains__(self, token: str) -> bool:
        return token in self.token_to_id

    def encode(self, token: str) -> int:
        return self.token_to_id.get(token, UNK_ID)

    def decode(self, idx: int) -> str:
        return self.id_to_token[idx]

    def to_list(self) -> list[str]:
        return self.id_to_token[len(RESERVED_TOKENS):]

    @classmethod
    def from_list(cls, tokens: list[str]) -> "Vocabulary":
        return cls(tokens)


def build_vocab(samples: list[GroundingSample]) -> Vocabulary:
    """Vocabulary over the training split only, sorted for determinism."""
    seen = sorted({tok for s in samples for tok in s.tokens})
    return Vocabulary(seen)


def encode_tokens(tokens: list[str], vocab: Vocabulary, l_max: int = L_MAX) -> np.ndarray:
    """[CLS] + token ids, padded with [PAD] to length l_max + 1."""
    if len(tokens) > l_max:
        raise ValidationError(f"sentence of {len(tokens)} tokens exceeds L_max={l_max}")
    ids = [CLS_ID] + [vocab.encode(t) for t in tokens]
    ids += [PAD_ID] * (l_max + 1 - len(ids))
    return np.asarray(ids, dtype=np.int64)


def decode_tokens(ids: np.ndarray, vocab: Vocabulary) -> list[str]:
    """Inverse of encode_tokens for in-vocabulary sentences."""
    out = []
    for idx in ids:
        if idx in (PAD_ID, CLS_ID):
            continue
        out.append(vocab.decode(int(idx)))
    return out


# -- rule-based phrase parsing ----------------------------------------------------


def parse_all_phrases(tokens: list[str], class_vocab) -> list[PhraseSpan]:
    """All maximal (determiner? modifier* noun) spans whose noun is a class word.

    Modifiers are the color/size adjectives plus any word that is neither a
    determiner nor a class word and is sandwiched between a determiner and the
    noun (so "the office chair" parses whole even though "office" is not in
    the closed adjective list). Spans are returned left to right with
    object_id -1 (unbound); is_target is left False.
    """
    class_set = set(class_vocab)
    spans: list[PhraseSpan] = []
    for i, tok in enumerate(tokens):
        if tok not in class_set:
            continue
        prev_end = spans[-1].end if spans else 0
        start = i
        while start > prev_end and tokens[start - 1] not in DETERMINERS \
                and tokens[start - 1] not in class_set:
            start -= 1
        if start > prev_end and tokens[start - 1] in DETERMINERS:
            start -= 1
        else:
            # No determiner found: only the closed adjective set may extend
            # the span, otherwise fall back to the bare noun.
            adjectives = set(COLOR_NAMES) | set(SIZE_ADJECTIVES)
            start = i
            while start > prev_end and tokens[start - 1] in adjectives:
                start -= 1
        spans.append(PhraseSpan(start=start, end=i + 1, object_id=-1))
    return spans


def parse_target_phrase(tokens: list[str], class_vocab) -> PhraseSpan | None:
    """First class-word phrase, or None as the parse-miss signal."""
    if not tokens:
        raise ValidationError("empty token list")
    spans = parse_all_phrases(tokens, class_vocab)
    return spans[0] if spans else None


# -- statistics -------------------------------------------------------------------


def phrases_per_sentence(num_phrases: int, num_sentences: int) -> float:
    return round(num_phrases / num_sentences, 2)


def dataset_stats(samples: list[GroundingSample]) -> dict:
    """Sentence/phrase counts plus the two derived ratios, at 2 decimals."""
    if not samples:
        raise ValidationError("no samples")
    num_sentences = len(samples)
    num_phrases = sum(len(s.phrases) for s in samples)
    total_len = sum(p.end - p.start for s in samples for p in s.phrases)
    return {
        "num_sentences": num_sentences,
        "num_phrases": num_phrases,
        "phrases_per_sentence": phrases_per_sentence(num_phrases, num_sentences),
        "avg_phrase_len": round(total_len / num_phrases, 2),
    }


# -- canonical JSON / JSONL --------------------------------------------------------


def canonical_json(value) -> str:
    """Deterministic JSON: sorted keys, floats as %.6f, no whitespace drift."""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        text = f"{float(value):.6f}"
        return "0.000000" if text == "-0.000000" else text
    if isinstance(value, str):
        return json.dumps(value, ensure_ascii=False)
    if isinstance(value, (list, tuple)):
        return "[" + ",".join(canonical_json(v) for v in value) + "]"
    if isinstance(value, dict):
        items = sorted(value.items())
        return "{" + ",".join(f"{json.dumps(k)}:{canonical_json(v)}" for k, v in items) + "}"
    if value is None:
        return "null"
    raise SchemaError(f"cannot serialize {type(value).__name__}")


def write_jsonl(path: str, rows: list[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(canonical_json(row) + "\n")


def read_jsonl(path: str) -> list[dict]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                rows.append(json.loads(line))
    return rows


def _need(record: dict, key: str, kind, path: str):
    if key not in record:
        raise SchemaError(f"{path}.{key}")
    value = record[key]
    if kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise SchemaError(f"{path}.{key}")
        return float(value)
    if kind is int and (isinstance(value, bool) or not isinstance(value, int)):
        raise SchemaError(f"{path}.{key}")
    if kind is not int and not isinstance(value, kind):
        raise SchemaError(f"{path}.{key}")
    return value


def scene_to_dict(scene: Scene) -> dict:
    return {
        "scene_id": scene.scene_id,
        "room": list(scene.room),
        "objects": [
            {
                "id": o.id,
                "label": o.label,
                "center": list(o.center),
                "size": list(o.size),
                "color": o.color,
                "point_seed": o.point_seed,
            }
            for o in scene.objects
        ],
    }


def scene_from_dict(record: dict, path: str = "scenes[?]") -> Scene:
    scene_id = _need(record, "scene_id", str, path)
    room = _need(record, "room", list, path)
    if len(room) != 3:
        raise SchemaError(f"{path}.room")
    objects = []
    for i, raw in enumerate(_need(record, "objects", list, path)):
        opath = f"{path}.objects[{i}]"
        center = _need(raw, "center", list, opath)
        size = _need(raw, "size", list, opath)
        if len(center) != 3 or len(size) != 3:
            raise SchemaError(f"{opath}.center")
        objects.append(
            SceneObject(
                id=_need(raw, "id", int, opath),
                label=_need(raw, "label", str, opath),
                center=tuple(float(c) for c in center),
                size=tuple(float(s) for s in size),
                color=_need(raw, "color", str, opath),
                point_seed=_need(raw, "point_seed", int, opath),
            )
        )
    if [o.id for o in objects] != list(range(len(objects))):
        raise SchemaError(f"{path}.objects")
    return Scene(scene_id=scene_id, room=tuple(float(r) for r in room), objects=objects)


def sample_to_dict(sample: GroundingSample) -> dict:
    return {
        "sample_id": sample.sample_id,
        "scene_id": sample.scene_id,
        "tokens": list(sample.tokens),
        "target_id": sample.target_id,
        "phrases": [
            {"start": p.start, "end": p.end, "object_id": p.object_id, "is_target": p.is_target}
            for p in sample.phrases
        ],
        "tags": {"hard": bool(sample.tags["hard"]), "view_dep": bool(sample.tags["view_dep"])},
    }


def sample_from_dict(record: dict, path: str = "samples[?]") -> GroundingSample:
    phrases = []
    for i, raw in enumerate(_need(record, "phrases", list, path)):
        ppath = f"{path}.phrases[{i}]"
        phrases.append(
            PhraseSpan(
                start=_need(raw, "start", int, ppath),
                end=_need(raw, "end", int, ppath),
                object_id=_need(raw, "object_id", int, ppath),
                is_target=bool(_need(raw, "is_target", bool, ppath)),
            )
        )
    tags = _need(record, "tags", dict, path)
    sample = GroundingSample(
        sample_id=_need(record, "sample_id", str, path),
        scene_id=_need(record, "scene_id", str, path),
        tokens=list(_need(record, "tokens", list, path)),
        target_id=_need(record, "target_id", int, path),
        phrases=phrases,
        tags={
            "hard": bool(_need(tags, "hard", bool, f"{path}.tags")),
            "view_dep": bool(_need(tags, "view_dep", bool, f"{path}.tags")),
        },
    )
    return sample


# -- corpus on disk -----------------------------------------------------------------


def save_corpus(out_dir: str, scenes: list[Scene], samples: list[GroundingSample],
                splits: dict[str, list[str]]) -> None:
    os.makedirs(out_dir, exist_ok=True)
    write_jsonl(os.path.join(out_dir, "scenes.jsonl"), [scene_to_dict(s) for s in scenes])
    write_jsonl(os.path.join(out_dir, "samples.jsonl"), [sample_to_dict(s) for s in samples])
    with open(os.path.join(out_dir, "splits.json"), "w", encoding="utf-8") as fh:
        fh.write(canonical_json(splits) + "\n")


def load_corpus(data_dir: str):
    """Returns (scenes by id, train samples, val samples)."""
    scene_rows = read_jsonl(os.path.join(data_dir, "scenes.jsonl"))
    scenes = {}
    for k, row in enumerate(scene_rows):
        scene = scene_from_dict(row, path=f"scenes[{k}]")
        scenes[scene.scene_id] = scene
    sample_rows = read_jsonl(os.path.join(data_dir, "samples.jsonl"))
    samples = [sample_from_dict(row, path=f"samples[{k}]") for k, row in enumerate(sample_rows)]
    for s in samples:
        if s.scene_id not in scenes:
            raise SchemaError(f"sample {s.sample_id}: unknown scene {s.scene_id}")
        validate_sample(s, len(scenes[s.scene_id].objects))
    with open(os.path.join(data_dir, "splits.json"), encoding="utf-8") as fh:
        splits = json.load(fh)
    train_ids, val_ids = set(splits["train"]), set(splits["val"])
    train = [s for s in samples if s.scene_id in train_ids]
    val = [s for s in samples if s.scene_id in val_ids]
    return scenes, train, val
