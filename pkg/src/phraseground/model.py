"""Cross-modal grounding transformer.

Object and text encoders feed a joint self-attention stack over the
concatenated token sequence, followed by one cross-attention layer whose
head-averaged attention map doubles as the predicted object/token alignment.
Confidence scores come from two fully connected layers on the fused object
features; auxiliary heads predict per-object classes, the target class from
[CLS], and a per-token target-phrase mask.

The model runs in two equivalent modes: a per-sample forward with exact
shapes (M objects, L real tokens) and a padded batched forward used by the
training loop, where invalid objects/tokens are excluded through attention
masks. Padding sits at the tail, so per-sample and batched outputs agree up
to float reassociation.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import data as D
from . import scenegen as G
from .errors import ConfigurationError, ValidationError
from .nn import tensor as T
from .nn.layers import Embedding, LayerNorm, Linear, MultiHeadAttention, ParamStore, TransformerBlock
from .nn.rng import Rng, derive_seed
from .nn.tensor import Tensor


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    num_classes: int
    dim: int = 128
    heads: int = 4
    joint_layers: int = 3
    text_layers: int = 2
    point_mlp_widths: tuple[int, ...] = (32, 64, 128)
    l_max: int = D.L_MAX
    m_max: int = D.M_MAX
    n_points: int = 64
    seed: int = 0

    def __post_init__(self):
        if self.dim % self.heads != 0:
            raise ConfigurationError(f"dim {self.dim} not divisible by heads {self.heads}")

    def to_dict(self) -> dict:
        record = asdict(self)
        record["point_mlp_widths"] = list(self.point_mlp_widths)
        return record

    @classmethod
    def from_dict(cls, record: dict) -> "ModelConfig":
        record = dict(record)
        record["point_mlp_widths"] = tuple(record["point_mlp_widths"])
        return cls(**record)


@dataclass
class ModelOutput:
    scores: Tensor            # (M,)
    poa: Tensor               # (M, L+1), rows sum to 1
    obj_class_logits: Tensor  # (M, num_classes)
    cls_target_logits: Tensor  # (num_classes,)
    target_mask_logits: Tensor  # (L,)


@dataclass
class BatchOutput:
    scores: Tensor            # (B, M_pad)
    poa: Tensor               # (B, M_pad, l_max+1); no-object is the last column
    obj_class_logits: Tensor  # (B, M_pad, num_classes)
    cls_target_logits: Tensor  # (B, num_classes)
    target_mask_logits: Tensor  # (B, l_max)


# -- input preparation -----------------------------------------------------------


@dataclass
class PreparedSample:
    sample: D.GroundingSample
    token_ids: np.ndarray      # (l_max+1,) int
    length: int                # L, real token count
    points: np.ndarray         # (M, n, 6) float32
    boxes: np.ndarray          # (M, 6) float32
    obj_class_ids: np.ndarray  # (M,) int
    target_idx: int
    target_class_id: int
    gt_soft: np.ndarray        # (M, L+1) float32
    phrase_masks: np.ndarray   # (K, L) float32
    target_mask: np.ndarray    # (L,) float32


def prepare_sample(
    sample: D.GroundingSample,
    scene: D.Scene,
    vocab: D.Vocabulary,
    class_to_id: dict[str, int],
    cfg: ModelConfig,
) -> PreparedSample:
    if len(scene.objects) > cfg.m_max:
        raise ValidationError(f"scene has {len(scene.objects)} objects > m_max={cfg.m_max}")
    points = np.stack(
        [G.sample_points(o, cfg.n_points) for o in scene.objects]
    ).astype(np.float32)
    boxes = np.stack([G.object_box_features(o) for o in scene.objects]).astype(np.float32)
    gt = D.build_gt_alignment(sample, len(scene.objects))
    masks = D.build_phrase_masks(sample)
    target_row = next(i for i, p in enumerate(sample.phrases) if p.is_target)
    return PreparedSample(
        sample=sample,
        token_ids=D.encode_tokens(sample.tokens, vocab, cfg.l_max),
        length=len(sample.tokens),
        points=points,
        boxes=boxes,
        obj_class_ids=np.asarray([class_to_id[o.label] for o in scene.objects]),
        target_idx=sample.target_id,
        target_class_id=class_to_id[scene.by_id(sample.target_id).label],
        gt_soft=D.soft_targets(gt),
        phrase_masks=masks,
        target_mask=masks[target_row],
    )


def prepare_query(tokens: list[str], scene: D.Scene, vocab: D.Vocabulary,
                  cfg: ModelConfig) -> PreparedSample:
    """Inference-only preparation for a free-text query (no annotations)."""
    points = np.stack(
        [G.sample_points(o, cfg.n_points) for o in scene.objects]
    ).astype(np.float32)
    boxes = np.stack([G.object_box_features(o) for o in scene.objects]).astype(np.float32)
    L = len(tokens)
    sample = D.GroundingSample(
        sample_id="query", scene_id=scene.scene_id, tokens=list(tokens),
        target_id=0, phrases=[D.PhraseSpan(0, max(L, 1), 0, is_target=True)],
    )
    return PreparedSample(
        sample=sample,
        token_ids=D.encode_tokens(tokens, vocab, cfg.l_max),
        length=L,
        points=points,
        boxes=boxes,
        obj_class_ids=np.zeros(len(scene.objects), dtype=np.int64),
        target_idx=0,
        target_class_id=0,
        gt_soft=np.zeros((len(scene.objects), L + 1), dtype=np.float32),
        phrase_masks=np.zeros((1, L), dtype=np.float32),
        target_mask=np.zeros(L, dtype=np.float32),
    )


@dataclass
class PreparedBatch:
    preps: list[PreparedSample]
    token_ids: np.ndarray     # (B, l_max+1)
    token_valid: np.ndarray   # (B, l_max+1) incl [CLS]
    tok_real: np.ndarray      # (B, l_max) real sentence positions
    points: np.ndarray        # (B, M_pad, n, 6)
    boxes: np.ndarray         # (B, M_pad, 6)
    obj_valid: np.ndarray     # (B, M_pad)
    obj_class_ids: np.ndarray  # (B, M_pad)
    target_idx: np.ndarray    # (B,)
    target_class_id: np.ndarray  # (B,)
    gt_soft: np.ndarray       # (B, M_pad, l_max+1)
    target_mask: np.ndarray   # (B, l_max)
    mask_channel: np.ndarray  # (B, l_max); zeros unless pre-training fills it


def collate(preps: list[PreparedSample], cfg: ModelConfig) -> PreparedBatch:
    b = len(preps)
    m_pad = max(p.points.shape[0] for p in preps)
    n = cfg.n_points
    lm = cfg.l_max
    token_ids = np.stack([p.token_ids for p in preps])
    token_valid = token_ids != D.PAD_ID
    token_valid[:, 0] = True
    points = np.zeros((b, m_pad, n, 6), dtype=np.float32)
    boxes = np.zeros((b, m_pad, 6), dtype=np.float32)
    obj_valid = np.zeros((b, m_pad), dtype=bool)
    obj_class_ids = np.zeros((b, m_pad), dtype=np.int64)
    gt_soft = np.zeros((b, m_pad, lm + 1), dtype=np.float32)
    target_mask = np.zeros((b, lm), dtype=np.float32)
    for i, p in enumerate(preps):
        m, L = p.points.shape[0], p.length
        points[i, :m] = p.points
        boxes[i, :m] = p.boxes
        obj_valid[i, :m] = True
        obj_class_ids[i, :m] = p.obj_class_ids
        gt_soft[i, :m, :L] = p.gt_soft[:, :L]
        gt_soft[i, :m, lm] = p.gt_soft[:, L]
        target_mask[i, :L] = p.target_mask
    return PreparedBatch(
        preps=preps,
        token_ids=token_ids,
        token_valid=token_valid,
        tok_real=token_valid[:, 1:],
        points=points,
        boxes=boxes,
        obj_valid=obj_valid,
        obj_class_ids=obj_class_ids,
        target_idx=np.asarray([p.target_idx for p in preps]),
        target_class_id=np.asarray([p.target_class_id for p in preps]),
        gt_soft=gt_soft,
        target_mask=target_mask,
        mask_channel=np.zeros((b, lm), dtype=np.float32),
    )


def batch_mask_channel(preps: list[PreparedSample], rows: list[int], lm: int) -> np.ndarray:
    """Stack one phrase mask per sample into a padded (B, l_max) channel."""
    out = np.zeros((len(preps), lm), dtype=np.float32)
    for i, (p, row) in enumerate(zip(preps, rows)):
        out[i, : p.length] = p.phrase_masks[row]
    return out


# -- the model ---------------------------------------------------------------------


class GroundingModel:
    def __init__(self, cfg: ModelConfig, dtype=np.float32):
        self.cfg = cfg
        self.store = ParamStore(dtype=dtype)
        rng = Rng(derive_seed(cfg.seed, "model"))
        s, dim = self.store, cfg.dim

        widths = cfg.point_mlp_widths
        self.point_mlp = [
            Linear(s, f"obj.point{i}", w_in, w_out, rng.child("point", i))
            for i, (w_in, w_out) in enumerate(zip((6,) + widths[:-1], widths))
        ]
        self.obj_class_head = Linear(s, "obj.class_head", widths[-1], cfg.num_classes,
                                     rng.child("obj_class"))
        self.pos_proj = Linear(s, "obj.pos_proj", 6, dim, rng.child("pos"))
        self.obj_proj = Linear(s, "obj.proj", widths[-1] + dim, dim, rng.child("obj_proj"))

        self.tok_emb = Embedding(s, "text.tok", cfg.vocab_size, dim, rng.child("tok"))
        self.pos_emb = Embedding(s, "text.pos", cfg.l_max + 1, dim, rng.child("pos_emb"))
        self.mask_proj = Linear(s, "text.mask_proj", dim + 1, dim, rng.child("mask_proj"))
        self.text_blocks = [
            TransformerBlock(s, f"text.block{i}", dim, cfg.heads, rng.child("text", i))
            for i in range(cfg.text_layers)
        ]
        self.text_norm = LayerNorm(s, "text.norm", dim)
        self.cls_head = Linear(s, "text.cls_head", dim, cfg.num_classes, rng.child("cls"))

        self.joint_blocks = [
            TransformerBlock(s, f"joint.block{i}", dim, cfg.heads, rng.child("joint", i))
            for i in range(cfg.joint_layers)
        ]

        self.noobj = s.create("fusion.noobj", rng.child("noobj").normal(dim, sigma=0.02).reshape(1, dim))
        self.fusion = MultiHeadAttention(s, "fusion.attn", dim, cfg.heads, rng.child("fusion"))
        self.score_fc1 = Linear(s, "score.fc1", dim, dim, rng.child("score1"))
        self.score_fc2 = Linear(s, "score.fc2", dim, 1, rng.child("score2"))
        self.mask_head = Linear(s, "mask.head", dim, 1, rng.child("mask_head"))

    # -- encoders ------------------------------------------------------------

    def _cast(self, arr: np.ndarray) -> Tensor:
        return Tensor(np.asarray(arr).astype(self.store.dtype, copy=False))

    def encode_objects(self, points: np.ndarray, boxes: np.ndarray):
        """Point sets + box geometry -> object tokens and class logits.

        Point coordinates are centered on the box before the shared MLP, so
        absolute position enters only through the positional projection.
        """
        if points.shape[-2] < 8:
            raise ValidationError(f"need at least 8 points per object, got {points.shape[-2]}")
        if points.shape[-3] > self.cfg.m_max:
            raise ValidationError(f"too many objects: {points.shape[-3]} > {self.cfg.m_max}")
        feats = points.copy()
        feats[..., :3] -= boxes[..., None, :3]
        lead = feats.shape[:-2]  # (..., M)
        n = feats.shape[-2]
        x = self._cast(feats.reshape(-1, 6))
        # relu between layers but not before the pool: exact zero ties from a
        # trailing relu would make the per-channel max nondifferentiable.
        for i, layer in enumerate(self.point_mlp):
            x = layer(x)
            if i + 1 < len(self.point_mlp):
                x = T.relu(x)
        f_dim = self.cfg.point_mlp_widths[-1]
        x = T.reshape(x, (-1, n, f_dim))
        pooled = T.max_axis(x, 1)
        global_feat = T.reshape(pooled, lead + (f_dim,))
        class_logits = self.obj_class_head(global_feat)
        pos = self.pos_proj(self._cast(boxes))
        tokens = self.obj_proj(T.concat_axis([global_feat, pos], axis=-1))
        return tokens, class_logits

    def encode_text(self, token_ids: np.ndarray, mask_channel: np.ndarray | None = None):
        """Token ids (with [CLS] at 0, [PAD] tail) -> contextual text features.

        The phrase-mask bit is concatenated per token and projected back to
        the hidden width; [CLS] always carries bit 0, and an absent channel
        is identical to all-zeros. Padded positions are masked out of every
        attention so they cannot influence real tokens.
        """
        token_ids = np.asarray(token_ids)
        lm = self.cfg.l_max
        if token_ids.shape[-1] != lm + 1:
            raise ValidationError(f"expected {lm + 1} token slots, got {token_ids.shape[-1]}")
        if token_ids.min() < 0 or token_ids.max() >= self.cfg.vocab_size:
            raise ValidationError("token id outside vocabulary")
        valid = token_ids != D.PAD_ID
        valid = valid.copy()
        valid[..., 0] = True
        x = self.tok_emb(token_ids) + self.pos_emb(np.arange(lm + 1))
        if mask_channel is None:
            bits = np.zeros(token_ids.shape + (1,), dtype=np.float64)
        else:
            mask_channel = np.asarray(mask_channel)
            bits = np.concatenate(
                [np.zeros(mask_channel.shape[:-1] + (1,)), mask_channel], axis=-1
            )[..., None]
        x = self.mask_proj(T.concat_axis([x, self._cast(bits)], axis=-1))
        for block in self.text_blocks:
            x = block(x, key_mask=valid[..., None, :])
        x = self.text_norm(x)
        cls_feat = T.slice_axis(x, -2, 0, 1)
        cls_logits = T.reshape(self.cls_head(cls_feat), cls_feat.shape[:-2] + (self.cfg.num_classes,))
        return x, cls_logits, valid

    def joint_transform(self, obj_tokens, text_tokens, text_valid, obj_valid=None):
        """Self-attention over the concatenated object+text sequence."""
        m = obj_tokens.shape[-2]
        combined = T.concat_axis([obj_tokens, text_tokens], axis=-2)
        if obj_valid is None:
            obj_part = np.ones(text_valid.shape[:-1] + (m,), dtype=bool)
        else:
            obj_part = obj_valid
        mask = np.concatenate([obj_part, text_valid], axis=-1)[..., None, :]
        for block in self.joint_blocks:
            combined = block(combined, key_mask=mask)
        obj2 = T.slice_axis(combined, -2, 0, m)
        text2 = T.slice_axis(combined, -2, m, combined.shape[-2])
        return obj2, text2

    # -- fusion & heads --------------------------------------------------------

    def poa_cross_attention(self, obj2, text2, length: int):
        """Per-sample fusion: keys are the L real tokens plus [NoObj]."""
        keys = T.concat_axis([T.slice_axis(text2, -2, 1, length + 1), self.noobj], axis=-2)
        out, attn = self.fusion(obj2, keys, keys)
        poa = T.sum_axis(attn, 0) * (1.0 / self.cfg.heads)
        fused = out + obj2
        return fused, poa

    def poa_cross_attention_batch(self, obj2, text2, tok_real: np.ndarray):
        """Batched fusion over all l_max token slots plus [NoObj], masked."""
        bsz = text2.shape[0]
        token_keys = T.slice_axis(text2, -2, 1, self.cfg.l_max + 1)
        keys = T.concat_axis([token_keys, T.expand0(self.noobj, bsz)], axis=-2)
        key_mask = np.concatenate([tok_real, np.ones((bsz, 1), dtype=bool)], axis=-1)
        out, attn = self.fusion(obj2, keys, keys, key_mask=key_mask[:, None, :])
        poa = T.sum_axis(attn, 0) * (1.0 / self.cfg.heads)
        fused = out + obj2
        return fused, poa

    def score(self, fused) -> Tensor:
        s = self.score_fc2(T.relu(self.score_fc1(fused)))
        return T.reshape(s, s.shape[:-1])

    # -- forward passes ----------------------------------------------------------

    def forward(self, prep: PreparedSample, mask_channel: np.ndarray | None = None) -> ModelOutput:
        if mask_channel is not None:
            padded = np.zeros(self.cfg.l_max, dtype=np.float32)
            padded[: prep.length] = mask_channel
            mask_channel = padded
        text, cls_logits, text_valid = self.encode_text(prep.token_ids, mask_channel)
        obj, obj_class_logits = self.encode_objects(prep.points, prep.boxes)
        obj2, text2 = self.joint_transform(obj, text, text_valid)
        fused, poa = self.poa_cross_attention(obj2, text2, prep.length)
        scores = self.score(fused)
        mask_feat = T.slice_axis(text2, -2, 1, prep.length + 1)
        mask_logits = T.reshape(self.mask_head(mask_feat), (prep.length,))
        return ModelOutput(
            scores=scores,
            poa=poa,
            obj_class_logits=obj_class_logits,
            cls_target_logits=T.reshape(cls_logits, (self.cfg.num_classes,)),
            target_mask_logits=mask_logits,
        )

    def forward_batch(self, batch: PreparedBatch,
                      mask_channel: np.ndarray | None = None) -> BatchOutput:
        channel = batch.mask_channel if mask_channel is None else mask_channel
        text, cls_logits, _ = self.encode_text(batch.token_ids, channel)
        obj, obj_class_logits = self.encode_objects(batch.points, batch.boxes)
        obj2, text2 = self.joint_transform(
            obj, text, batch.token_valid, obj_valid=batch.obj_valid
        )
        fused, poa = self.poa_cross_attention_batch(obj2, text2, batch.tok_real)
        scores = self.score(fused)
        mask_feat = T.slice_axis(text2, -2, 1, self.cfg.l_max + 1)
        mask_logits = T.reshape(self.mask_head(mask_feat), mask_feat.shape[:-1])
        return BatchOutput(
            scores=scores,
            poa=poa,
            obj_class_logits=obj_class_logits,
            cls_target_logits=cls_logits,
            target_mask_logits=mask_logits,
        )


def narrow_batch_poa(poa_row: np.ndarray, length: int, l_max: int) -> np.ndarray:
    """Convert one batched POA map (M, l_max+1) to sample layout (M, L+1)."""
    return np.concatenate([poa_row[:, :length], poa_row[:, l_max:]], axis=1)


def build_class_index(class_names) -> dict[str, int]:
    return {name: i for i, name in enumerate(sorted(class_names))}
