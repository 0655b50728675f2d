"""Comparator rerankers: a pointwise neural scorer, MMR-style submodular
greedy, DPP greedy MAP, and the attention-encoder utility reranker (PRM)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import save_tensor_doc, load_tensor_doc, CheckpointError
from .model import (
    DivNetParams,
    ModelConfig,
    RankingInstance,
    build_input,
    encode,
)
from .tensor import Adam, Tensor, sigmoid

DPP_LOG_GAIN_FLOOR = -30.0


def _cosine_matrix(features: np.ndarray) -> np.ndarray:
    """Pairwise cosine over rows; zero-norm rows get similarity 0 everywhere."""
    norms = np.linalg.norm(features, axis=1)
    safe = np.where(norms > 0, norms, 1.0)
    unit = features / safe[:, None]
    s = unit @ unit.T
    s[norms == 0, :] = 0.0
    s[:, norms == 0] = 0.0
    return s


def _stable_desc_order(scores: np.ndarray):
    # ties break toward the lowest original index
    return list(np.argsort(-scores, kind="stable"))


@dataclass
class PointwiseScorer:
    """One-hidden-layer rectifier scorer over [item features, user features]."""

    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor
    feature_dim: int
    user_dim: int
    hidden_dim: int

    @classmethod
    def init(cls, feature_dim: int, user_dim: int = 0, hidden_dim: int = 64,
             seed: int = 0, init_scale: float = 0.1):
        rng = np.random.default_rng(seed)
        f = feature_dim + user_dim

        def u(*shape):
            return Tensor(rng.uniform(-init_scale, init_scale, size=shape),
                          requires_grad=True)

        return cls(w1=u(f, hidden_dim), b1=u(1, hidden_dim),
                   w2=u(hidden_dim, 1), b2=u(),
                   feature_dim=feature_dim, user_dim=user_dim, hidden_dim=hidden_dim)

    def named_tensors(self):
        return [("w1", self.w1), ("b1", self.b1), ("w2", self.w2), ("b2", self.b2)]

    def tensors(self):
        return [t for _, t in self.named_tensors()]

    def _inputs(self, inst: RankingInstance) -> np.ndarray:
        x = inst.item_features
        if self.user_dim:
            x = np.hstack([x, np.tile(inst.user_features, (inst.num_items, 1))])
        return x

    def score_tensor(self, inst: RankingInstance) -> Tensor:
        """N x 1 utility scores with gradient support."""
        x = Tensor(self._inputs(inst))
        h = (x @ self.w1 + self.b1).relu()
        return h @ self.w2 + self.b2

    def scores(self, inst: RankingInstance) -> np.ndarray:
        return self.score_tensor(inst).data.reshape(-1)

    def save(self) -> str:
        cfg = {"feature_dim": self.feature_dim, "user_dim": self.user_dim,
               "hidden_dim": self.hidden_dim}
        return save_tensor_doc(self.named_tensors(), cfg, kind="pointwise")

    @classmethod
    def load(cls, text: str) -> "PointwiseScorer":
        doc = load_tensor_doc(text)
        if doc["kind"] != "pointwise":
            raise CheckpointError(
                f"checkpoint kind {doc['kind']!r} is not a pointwise scorer")
        cfg = doc["config"]
        scorer = cls.init(cfg["feature_dim"], cfg["user_dim"], cfg["hidden_dim"])
        for name, t in scorer.named_tensors():
            t.data = doc["arrays"][name]
            t.zero_grad()
        return scorer


def train_pointwise(dataset, feature_dim: int, user_dim: int = 0,
                    hidden_dim: int = 64, epochs: int = 10, lr: float = 0.01,
                    seed: int = 0) -> PointwiseScorer:
    """Per-item binary cross-entropy on click labels."""
    scorer = PointwiseScorer.init(feature_dim, user_dim, hidden_dim, seed=seed)
    opt = Adam(scorer.tensors(), lr=lr)
    rng = np.random.default_rng(seed)
    dataset = list(dataset)
    for _ in range(epochs):
        order = rng.permutation(len(dataset))
        for i in order:
            inst = dataset[i]
            p = sigmoid(scorer.score_tensor(inst))
            labels = Tensor(inst.click_labels.astype(np.float64).reshape(-1, 1))
            eps = 1e-12
            loss = -(labels * (p + eps).log()
                     + (1.0 - labels) * (1.0 - p + eps).log()).mean()
            loss.backward()
            opt.step()
    return scorer


def pointwise_rank(inst: RankingInstance, scorer: PointwiseScorer):
    return _stable_desc_order(scorer.scores(inst))


def submodular_greedy(inst: RankingInstance, utilities, gamma: float):
    """Maximal-marginal-relevance greedy: gain(c|S) = u_c - gamma * max cosine
    to the selected set, over raw feature vectors. gamma=0 reduces to a plain
    descending-utility sort."""
    if gamma < 0:
        raise ValueError("gamma must be >= 0")
    u = np.asarray(utilities, dtype=np.float64)
    n = inst.num_items
    sim = _cosine_matrix(inst.item_features)
    selected = []
    remaining = list(range(n))
    while remaining:
        best_c = None
        best_gain = -np.inf
        for c in remaining:
            penalty = max(sim[c, j] for j in selected) if selected else 0.0
            gain = u[c] - gamma * penalty
            if gain > best_gain:
                best_gain = gain
                best_c = c
        selected.append(best_c)
        remaining.remove(best_c)
    return selected


def dpp_greedy(inst: RankingInstance, utilities):
    """Greedy MAP over L = diag(u) S diag(u) with S the cosine Gram of raw
    feature directions; naive determinant ratios; once the best log-det gain
    drops to the numerical floor the remaining items follow utility order."""
    u = np.asarray(utilities, dtype=np.float64)
    if np.any(u <= 0):
        u = 1.0 / (1.0 + np.exp(-u))
    n = inst.num_items
    s = _cosine_matrix(inst.item_features)
    np.fill_diagonal(s, [1.0 if np.linalg.norm(f) > 0 else 0.0
                         for f in inst.item_features])
    kernel = np.outer(u, u) * s

    selected = []
    remaining = list(range(n))
    log_det_s = 0.0  # log det of the empty selection
    while remaining:
        best_c = None
        best_gain = -np.inf
        for c in remaining:
            idx = selected + [c]
            sign, logdet = np.linalg.slogdet(kernel[np.ix_(idx, idx)])
            gain = (logdet - log_det_s) if sign > 0 else -np.inf
            if gain > best_gain:
                best_gain = gain
                best_c = c
        if best_gain <= DPP_LOG_GAIN_FLOOR:
            # numerically exhausted; fall back to utility order for the tail
            tail = sorted(remaining, key=lambda c: (-u[c], c))
            return selected + tail
        selected.append(best_c)
        remaining.remove(best_c)
        log_det_s += best_gain
    return selected


def prm_scores(inst: RankingInstance, params: DivNetParams) -> np.ndarray:
    """One-pass utilities: the decoder output head applied to each encoded item
    alone (no sequential decode, no diversity term)."""
    h_e = encode(build_input(inst, params), params)
    v = h_e @ params.w_v_d
    logits = v @ params.w_out
    y = sigmoid(logits + params.b_out)
    return y.data.reshape(-1)


def prm_rank(inst: RankingInstance, params: DivNetParams):
    return _stable_desc_order(prm_scores(inst, params))


def train_prm(dataset, model_cfg: ModelConfig, epochs: int = 10, lr: float = 0.01,
              seed: int = 0) -> DivNetParams:
    """Train the encoder plus output head with per-item BCE only."""
    params = DivNetParams.init(model_cfg, seed=seed)
    opt = Adam(params.tensors(), lr=lr)
    rng = np.random.default_rng(seed)
    dataset = list(dataset)
    for _ in range(epochs):
        order = rng.permutation(len(dataset))
        for i in order:
            inst = dataset[i]
            h_e = encode(build_input(inst, params), params)
            p = sigmoid((h_e @ params.w_v_d) @ params.w_out + params.b_out)
            labels = Tensor(inst.click_labels.astype(np.float64).reshape(-1, 1))
            eps = 1e-12
            loss = -(labels * (p + eps).log()
                     + (1.0 - labels) * (1.0 - p + eps).log()).mean()
            loss.backward()
            opt.step()
    return params
