"""DivNet architecture: self-attention encoder over the candidate list and a
sequential decoder that trades estimated utility against a determinant-based
dissimilarity bonus at every selection step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .tensor import (
    Tensor,
    concat_cols,
    concat_rows,
    cosine_rows,
    determinant,
    from_scalars,
    layer_norm,
    masked_softmax_rows,
    sigmoid,
    softmax_rows,
)


@dataclass
class RankingInstance:
    """One query/slate: user context, item features, grades and click labels.

    Items are stored in the logged display order (the upstream-ranked list);
    display_order is the identity permutation over them.
    """

    query_id: str
    item_features: np.ndarray          # N x M, float64
    user_features: np.ndarray          # K, float64 (may be empty)
    relevance_grades: np.ndarray       # N, ints 0..4
    click_labels: np.ndarray           # N, ints {0, 1}
    categorical_features: np.ndarray | None = None  # N, ints, optional

    def __post_init__(self):
        self.item_features = np.asarray(self.item_features, dtype=np.float64)
        if self.item_features.ndim != 2 or self.item_features.shape[0] < 1:
            raise ValueError(f"{self.query_id}: item_features must be N x M with N >= 1")
        self.user_features = np.asarray(self.user_features, dtype=np.float64).reshape(-1)
        self.relevance_grades = np.asarray(self.relevance_grades, dtype=np.int64)
        self.click_labels = np.asarray(self.click_labels, dtype=np.int64)
        n = self.item_features.shape[0]
        if len(self.relevance_grades) != n or len(self.click_labels) != n:
            raise ValueError(f"{self.query_id}: label lengths disagree with N={n}")
        if not np.all((self.click_labels == 0) | (self.click_labels == 1)):
            raise ValueError(f"{self.query_id}: click labels must be binary")
        if not np.all((self.relevance_grades >= 0) & (self.relevance_grades <= 4)):
            raise ValueError(f"{self.query_id}: grades must be in 0..4")

    @property
    def num_items(self):
        return self.item_features.shape[0]

    @property
    def display_order(self):
        return list(range(self.num_items))


@dataclass
class ModelConfig:
    item_dim: int                       # M (continuous item feature width)
    user_dim: int = 0                   # K
    d_k: int = 64
    d_v: int = 64
    num_blocks: int = 1
    alpha: float = 0.1                  # diversity weight, sweep-exposed
    use_categorical: bool = False
    cat_buckets: int = 2 ** 16
    cat_embed_dim: int = 8
    init_scale: float = 0.1             # uniform init in [-scale, scale]

    @property
    def effective_item_dim(self):
        return self.item_dim + (self.cat_embed_dim if self.use_categorical else 0)

    @property
    def input_dim(self):
        # O = M + K; also the positional-embedding width
        return self.effective_item_dim + self.user_dim

    def to_dict(self):
        return {
            "item_dim": self.item_dim, "user_dim": self.user_dim,
            "d_k": self.d_k, "d_v": self.d_v, "num_blocks": self.num_blocks,
            "alpha": self.alpha, "use_categorical": self.use_categorical,
            "cat_buckets": self.cat_buckets, "cat_embed_dim": self.cat_embed_dim,
            "init_scale": self.init_scale,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class EncoderBlock:
    w_q: Tensor
    w_k: Tensor
    w_v: Tensor
    w_o: Tensor
    ln_gain: Tensor
    ln_bias: Tensor


@dataclass
class DivNetParams:
    """All trainable weights of DivNet."""

    config: ModelConfig
    encoder: list[EncoderBlock] = field(default_factory=list)
    w_q_d: Tensor = None
    w_k_d: Tensor = None
    w_v_d: Tensor = None
    w_out: Tensor = None                # D_V x 1 output head
    b_out: Tensor = None                # scalar bias
    cat_table: Tensor | None = None

    @classmethod
    def init(cls, config: ModelConfig, seed: int = 0) -> "DivNetParams":
        rng = np.random.default_rng(seed)
        s = config.init_scale

        def u(*shape):
            return Tensor(rng.uniform(-s, s, size=shape), requires_grad=True)

        blocks = []
        in_dim = config.input_dim
        for _ in range(config.num_blocks):
            blocks.append(EncoderBlock(
                w_q=u(in_dim, config.d_k),
                w_k=u(in_dim, config.d_k),
                w_v=u(in_dim, config.d_v),
                w_o=u(config.d_v, config.d_k),
                ln_gain=u(config.d_k),
                ln_bias=u(config.d_k),
            ))
            in_dim = config.d_k  # later blocks consume H_e directly
        cat_table = None
        if config.use_categorical:
            cat_table = u(config.cat_buckets, config.cat_embed_dim)
        return cls(
            config=config,
            encoder=blocks,
            w_q_d=u(config.d_k, config.d_k),
            w_k_d=u(config.d_k, config.d_k),
            w_v_d=u(config.d_k, config.d_v),
            w_out=u(config.d_v, 1),
            b_out=u(),
            cat_table=cat_table,
        )

    def named_tensors(self):
        out = []
        for i, blk in enumerate(self.encoder):
            out += [(f"encoder.{i}.w_q", blk.w_q), (f"encoder.{i}.w_k", blk.w_k),
                    (f"encoder.{i}.w_v", blk.w_v), (f"encoder.{i}.w_o", blk.w_o),
                    (f"encoder.{i}.ln_gain", blk.ln_gain),
                    (f"encoder.{i}.ln_bias", blk.ln_bias)]
        out += [("w_q_d", self.w_q_d), ("w_k_d", self.w_k_d), ("w_v_d", self.w_v_d),
                ("w_out", self.w_out), ("b_out", self.b_out)]
        if self.cat_table is not None:
            out.append(("cat_table", self.cat_table))
        return out

    def tensors(self):
        return [t for _, t in self.named_tensors()]

    def zero_grads(self):
        for t in self.tensors():
            t.zero_grad()

    def set_requires_grad(self, flag: bool):
        for t in self.tensors():
            t.requires_grad = flag
            t.grad = np.zeros_like(t.data) if flag else None

    def copy(self) -> "DivNetParams":
        new = DivNetParams.init(self.config, seed=0)
        for (_, src), (_, dst) in zip(self.named_tensors(), new.named_tensors()):
            dst.data = src.data.copy()
            dst.requires_grad = src.requires_grad
            dst.grad = np.zeros_like(dst.data) if dst.requires_grad else None
        return new


def positional_encoding(num_positions: int, width: int) -> np.ndarray:
    """Sinusoidal position embeddings: sin for even dims, cos for odd dims,
    frequency 1/10000^(2*(j//2)/width), positions indexed from 0."""
    if width < 1:
        raise ValueError("positional encoding width must be >= 1")
    z = np.empty((num_positions, width))
    j = np.arange(width)
    denom = 10000.0 ** (2.0 * (j // 2) / width)
    for i in range(num_positions):
        angle = i / denom
        z[i] = np.where(j % 2 == 0, np.sin(angle), np.cos(angle))
    return z


def hash_bucket(code: int, buckets: int) -> int:
    return int(code) % buckets


def build_input(inst: RankingInstance, params: DivNetParams,
                z: np.ndarray | None = None) -> Tensor:
    """X = [item features (+ categorical embeddings), repeated user vector] + Z."""
    cfg = params.config
    n = inst.num_items
    if inst.item_features.shape[1] != cfg.item_dim:
        raise ValueError(
            f"item feature width {inst.item_features.shape[1]} != configured {cfg.item_dim}")
    if len(inst.user_features) != cfg.user_dim:
        raise ValueError(
            f"user feature width {len(inst.user_features)} != configured {cfg.user_dim}")
    if z is None:
        z = positional_encoding(n, cfg.input_dim)
    if z.shape != (n, cfg.input_dim):
        raise ValueError(f"position embedding shape {z.shape} != {(n, cfg.input_dim)}")

    parts = [Tensor(inst.item_features)]
    if cfg.use_categorical:
        if inst.categorical_features is None:
            raise ValueError(f"{inst.query_id}: categorical features required by config")
        emb_rows = [params.cat_table.row(hash_bucket(c, cfg.cat_buckets))
                    for c in inst.categorical_features]
        parts.append(concat_rows(emb_rows))
    if cfg.user_dim:
        parts.append(Tensor(np.tile(inst.user_features, (n, 1))))
    base = concat_cols(parts) if len(parts) > 1 else parts[0]
    return base + Tensor(z)


def encode(x: Tensor, params: DivNetParams) -> Tensor:
    """Self-attention encoder; returns H_e (N x D_K)."""
    cfg = params.config
    scale = 1.0 / math.sqrt(cfg.d_k)
    h = x
    for blk in params.encoder:
        q = h @ blk.w_q
        k = h @ blk.w_k
        v = h @ blk.w_v
        attn = softmax_rows((q @ k.T) * scale)
        e = attn @ v
        h = layer_norm(e @ blk.w_o + q, blk.ln_gain, blk.ln_bias)
    return h


class DecoderCache:
    """Per-slate decode state: key/value rows and selection-time embeddings of
    already-selected items, plus their pairwise cosine kernel entries.

    Causal masking makes prefix rows candidate-independent, so they are
    computed once at selection time and reused for every later candidate.
    """

    def __init__(self):
        self.keys = []          # 1 x D_K tensors
        self.values = []        # 1 x D_V tensors
        self.embeddings = []    # selected H-bar rows, frozen at selection
        self.kernel = []        # lower-triangular list-of-lists of cosine scalars

    def append(self, k_row, v_row, h_bar):
        self.keys.append(k_row)
        self.values.append(v_row)
        row = [cosine_rows(h_bar, prev) for prev in self.embeddings]
        row.append(Tensor(1.0))  # self-similarity of a unit direction
        self.kernel.append(row)
        self.embeddings.append(h_bar)


def decode_candidate(cache: DecoderCache, h_cand: Tensor, params: DivNetParams):
    """Masked decoder attention for one candidate appended after the prefix.

    Returns (h_bar, logit_y, k_row, v_row, attention_weights).
    """
    cfg = params.config
    scale = 1.0 / math.sqrt(cfg.d_k)
    q = h_cand @ params.w_q_d
    k = h_cand @ params.w_k_d
    v = h_cand @ params.w_v_d
    keys = concat_rows(cache.keys + [k]) if cache.keys else k
    values = concat_rows(cache.values + [v]) if cache.values else v
    logits = (q @ keys.T) * scale
    weights = softmax_rows(logits)
    h_bar = weights @ values
    y = sigmoid((h_bar @ params.w_out).sum() + params.b_out)
    return h_bar, y, k, v, weights.data.reshape(-1).copy()


def decode_step(prefix: "SlateDecode", candidate_index: int, h_e: Tensor,
                params: DivNetParams):
    """Score one candidate against an existing decode prefix.

    Contract surface over decode_candidate: rejects already-selected items.
    Returns (h_bar, logit_y).
    """
    if candidate_index in prefix.permutation:
        raise ValueError(f"candidate {candidate_index} already selected")
    h_bar, y, _, _, _ = decode_candidate(prefix.cache, h_e.row(candidate_index), params)
    return h_bar, y


def decode_candidate_naive(selected_rows, h_cand: Tensor, params: DivNetParams):
    """Cache-free reference: rebuilds the prefix key/value rows from scratch and
    applies full masked attention, returning the last row's outputs."""
    cfg = params.config
    scale = 1.0 / math.sqrt(cfg.d_k)
    rows = list(selected_rows) + [h_cand]
    t = len(rows)
    k_rows = [r @ params.w_k_d for r in rows]
    v_rows = [r @ params.w_v_d for r in rows]
    q_last = h_cand @ params.w_q_d
    keys = concat_rows(k_rows)
    values = concat_rows(v_rows)
    logits = (q_last @ keys.T) * scale
    mask = np.ones((1, t), dtype=bool)  # last row attends to all t positions
    weights = masked_softmax_rows(logits, mask)
    h_bar = weights @ values
    y = sigmoid((h_bar @ params.w_out).sum() + params.b_out)
    return h_bar, y


def diversity_det(prefix_kernel, prefix_embeddings, candidate_embedding: Tensor) -> Tensor:
    """Determinant of the cosine Gram matrix over selected embeddings plus the
    candidate, clamped to [0, 1]. Defined as 1 for the first selection."""
    t = len(prefix_embeddings) + 1
    if t == 1:
        return Tensor(1.0)
    cross = [cosine_rows(candidate_embedding, prev) for prev in prefix_embeddings]
    grid = []
    for i in range(t - 1):
        row = []
        for j in range(t - 1):
            row.append(prefix_kernel[max(i, j)][min(i, j)])
        row.append(cross[i])
        grid.append(row)
    grid.append(cross + [Tensor(1.0)])
    det = determinant(from_scalars(grid))
    return det.clamp(0.0, 1.0)


def selection_probabilities(logits, dets, alpha: float):
    """Eq-style normalized scores: P(c) = (y_c + alpha*det_c) / sum over R_t."""
    if not logits:
        raise ValueError("selection_probabilities: empty candidate set")
    if alpha < 0:
        raise ValueError("alpha must be >= 0")
    scores = [y + alpha * d for y, d in zip(logits, dets)]
    total = scores[0]
    for s in scores[1:]:
        total = total + s
    return [s / total for s in scores]


@dataclass
class SlateDecode:
    """One decoding trajectory with everything the losses and exports need."""

    permutation: list
    step_probabilities: list            # per step: {cand_index: scalar Tensor}
    step_logits: list                   # chosen item's y per step (Tensor)
    step_determinants: list             # chosen item's det per step (Tensor)
    selected_embeddings: list           # chosen H-bar rows (Tensors)
    kernel: np.ndarray                  # final cosine Gram over selected embeddings
    attention_weights: list             # per step: weights over prefix+self (np arrays)
    log_prob: Tensor                    # sum of log P(chosen)
    mode: str
    cache: DecoderCache | None = None


def decode_slate(inst: RankingInstance, params: DivNetParams, alpha: float | None = None,
                 mode: str = "greedy", rng=None, seed: int | None = None,
                 forced_order=None, num_steps: int | None = None,
                 z: np.ndarray | None = None) -> SlateDecode:
    """Run the full sequential decode.

    mode "greedy" takes the argmax at every step (ties to the lowest original
    index); "sample" draws from the step distribution using rng/seed;
    forced_order overrides selection entirely (used for teacher forcing and
    gradient checks along a frozen trajectory).
    """
    if alpha is None:
        alpha = params.config.alpha
    if mode not in ("greedy", "sample"):
        raise ValueError(f"unknown decode mode {mode!r}")
    if mode == "sample" and forced_order is None and rng is None:
        rng = np.random.default_rng(seed)

    n = inst.num_items
    h_e = encode(build_input(inst, params, z=z), params)
    cache = DecoderCache()
    remaining = list(range(n))
    steps = n if num_steps is None else min(num_steps, n)

    permutation = []
    step_probs = []
    step_logits = []
    step_dets = []
    attn_rows = []
    log_prob = Tensor(0.0)

    cand_rows = [h_e.row(i) for i in range(n)]

    for t in range(steps):
        scored = []
        for c in remaining:
            h_bar, y, k_row, v_row, attn = decode_candidate(cache, cand_rows[c], params)
            det = diversity_det(cache.kernel, cache.embeddings, h_bar)
            scored.append((c, h_bar, y, det, k_row, v_row, attn))
        probs = selection_probabilities([s[2] for s in scored], [s[3] for s in scored],
                                        alpha)
        if forced_order is not None:
            chosen_pos = next(i for i, s in enumerate(scored)
                              if s[0] == forced_order[t])
        elif mode == "greedy":
            p_vals = np.array([float(p.data) for p in probs])
            chosen_pos = int(np.argmax(p_vals))  # argmax takes the first maximum
        else:
            p_vals = np.array([float(p.data) for p in probs])
            p_vals = p_vals / p_vals.sum()
            chosen_pos = int(rng.choice(len(p_vals), p=p_vals))

        c, h_bar, y, det, k_row, v_row, attn = scored[chosen_pos]
        permutation.append(c)
        remaining.remove(c)
        step_probs.append({s[0]: p for s, p in zip(scored, probs)})
        step_logits.append(y)
        step_dets.append(det)
        attn_rows.append(attn)
        log_prob = log_prob + probs[chosen_pos].log()
        cache.append(k_row, v_row, h_bar)

    t_sel = len(cache.embeddings)
    kernel = np.zeros((t_sel, t_sel))
    for i in range(t_sel):
        for j in range(i + 1):
            kernel[i, j] = kernel[j, i] = float(cache.kernel[i][j].data)

    return SlateDecode(
        permutation=permutation,
        step_probabilities=step_probs,
        step_logits=step_logits,
        step_determinants=step_dets,
        selected_embeddings=list(cache.embeddings),
        kernel=kernel,
        attention_weights=attn_rows,
        log_prob=log_prob,
        mode=mode,
        cache=cache,
    )


def export_attention(decode: SlateDecode) -> np.ndarray:
    """N x N lower-triangular matrix: row t = decoder attention of the item
    selected at step t over the items selected at steps 1..t."""
    n = len(decode.permutation)
    out = np.zeros((n, n))
    for t, w in enumerate(decode.attention_weights):
        out[t, :t + 1] = w
    return out
