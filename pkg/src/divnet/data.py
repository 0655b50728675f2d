"""Dataset ingestion (LETOR/SVM-light text), label binarization and splits,
the synthetic self-correcting click simulator with its exhaustive oracle, and
JSON checkpoint persistence."""

from __future__ import annotations

import hashlib
import itertools
import json
import math
from dataclasses import dataclass

import numpy as np

from .model import DivNetParams, ModelConfig, RankingInstance

CHECKPOINT_VERSION = 1


class LetorParseError(ValueError):
    pass


class CheckpointError(ValueError):
    pass


def binarize_grade(grade: int) -> int:
    """Grades 0-2 map to negative, 3-4 to positive."""
    return 1 if grade >= 3 else 0


def parse_letor(lines, feature_width: int, user_width: int = 0):
    """Parse '<grade> qid:<id> <fid>:<val> ... # comment' lines into
    RankingInstances grouped by qid in file order.

    LETOR supplies no user vector; user features default to zeros of
    user_width. Missing feature ids densify to 0.
    """
    groups = {}   # qid -> (features, grades), insertion-ordered
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        fields = line.split()
        if len(fields) < 2 or not fields[1].startswith("qid:"):
            raise LetorParseError(f"line {lineno}: expected '<grade> qid:<id> ...'")
        try:
            grade = int(fields[0])
        except ValueError:
            raise LetorParseError(f"line {lineno}: non-integer grade {fields[0]!r}")
        if not 0 <= grade <= 4:
            raise LetorParseError(f"line {lineno}: grade {grade} out of range 0..4")
        qid = fields[1][len("qid:"):]
        feats = np.zeros(feature_width)
        for tok in fields[2:]:
            try:
                fid_s, val_s = tok.split(":", 1)
                fid = int(fid_s)
                val = float(val_s)
            except ValueError:
                raise LetorParseError(f"line {lineno}: malformed feature {tok!r}")
            if fid < 1:
                raise LetorParseError(f"line {lineno}: feature id {fid} must be positive")
            if fid <= feature_width:
                feats[fid - 1] = val
        groups.setdefault(qid, []).append((feats, grade))

    instances = []
    for qid, items in groups.items():
        features = np.vstack([f for f, _ in items])
        grades = np.array([g for _, g in items])
        instances.append(RankingInstance(
            query_id=qid,
            item_features=features,
            user_features=np.zeros(user_width),
            relevance_grades=grades,
            click_labels=np.array([binarize_grade(g) for g in grades]),
        ))
    return instances


def serialize_letor(instances) -> str:
    lines = []
    for inst in instances:
        for i in range(inst.num_items):
            feats = " ".join(f"{j + 1}:{v:.17g}"
                             for j, v in enumerate(inst.item_features[i]))
            lines.append(f"{int(inst.relevance_grades[i])} qid:{inst.query_id} {feats}")
    return "\n".join(lines) + "\n"


def split(instances, ratios=(0.8, 0.1, 0.1), seed: int = 0):
    """Query-level shuffled split into (train, validation, test)."""
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"split ratios must sum to 1, got {ratios}")
    instances = list(instances)
    if len(instances) < 3:
        raise ValueError("need at least 3 queries to split")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(instances))
    n_val = max(1, int(len(instances) * ratios[1]))
    n_test = max(1, int(len(instances) * ratios[2]))
    n_train = len(instances) - n_val - n_test
    train = [instances[i] for i in order[:n_train]]
    val = [instances[i] for i in order[n_train:n_train + n_val]]
    test = [instances[i] for i in order[n_train + n_val:]]
    return train, val, test


@dataclass
class SyntheticConfig:
    """Planted-diversity click simulator: attractiveness times position discount,
    suppressed by beta per earlier same-category item."""

    num_items: int = 10
    num_categories: int = 5
    attract_low: float = 0.1
    attract_high: float = 0.9
    beta: float = 0.5             # suppression factor per same-category predecessor
    noise_scale: float = 0.05
    logged_order: str = "by-attractiveness"  # or "uniform"
    seed: int = 0

    def __post_init__(self):
        if not (0.0 < self.beta <= 1.0):
            raise ValueError("beta must be in (0, 1]")
        if self.num_items < 1 or self.num_categories < 1:
            raise ValueError("num_items and num_categories must be >= 1")
        if self.logged_order not in ("by-attractiveness", "uniform"):
            raise ValueError(f"unknown logged_order {self.logged_order!r}")

    @property
    def feature_width(self):
        return self.num_categories + 1

    def to_dict(self):
        return {"num_items": self.num_items, "num_categories": self.num_categories,
                "attract_low": self.attract_low, "attract_high": self.attract_high,
                "beta": self.beta, "noise_scale": self.noise_scale,
                "logged_order": self.logged_order, "seed": self.seed}

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def position_discount(t: int) -> float:
    """1-indexed NDCG-style position discount 1/log2(t+1)."""
    return 1.0 / math.log2(t + 1)


def click_probabilities(attractiveness, categories, beta, permutation=None):
    """Per-position click probability a * d_t * beta^m_t along a display order."""
    n = len(attractiveness)
    order = list(permutation) if permutation is not None else list(range(n))
    probs = np.zeros(n)
    seen = []
    for t, idx in enumerate(order, start=1):
        m = sum(1 for c in seen if c == categories[idx])
        probs[t - 1] = attractiveness[idx] * position_discount(t) * beta ** m
        seen.append(categories[idx])
    return probs


def expected_clicks(permutation, attractiveness, categories, beta) -> float:
    return float(click_probabilities(attractiveness, categories, beta,
                                     permutation).sum())


def generate_synthetic(cfg: SyntheticConfig, num_queries: int):
    """Returns (instances, metadata). Items are stored in the logged display
    order -- by default the descending-attractiveness order a base ranker
    would have logged, optionally a uniform shuffle -- and clicks are
    Bernoulli with the self-correcting probability a * d_t * beta^m_t.
    Metadata maps qid -> per-item (category, attractiveness) in stored order,
    plus beta."""
    rng = np.random.default_rng(cfg.seed)
    instances = []
    metadata = {}
    for q in range(num_queries):
        n = cfg.num_items
        categories = rng.integers(0, cfg.num_categories, size=n)
        attract = rng.uniform(cfg.attract_low, cfg.attract_high, size=n)
        # one-hot category signal plus an attractiveness channel, with noise
        feats = np.zeros((n, cfg.feature_width))
        feats[np.arange(n), categories] = 1.0
        feats[:, -1] = attract
        feats += rng.normal(0.0, cfg.noise_scale, size=feats.shape)

        if cfg.logged_order == "by-attractiveness":
            display = np.argsort(-attract, kind="stable")
        else:
            display = rng.permutation(n)
        probs = click_probabilities(attract[display], categories[display], cfg.beta)
        clicks = (rng.random(n) < probs).astype(int)

        qid = f"synth{q}"
        instances.append(RankingInstance(
            query_id=qid,
            item_features=feats[display],
            user_features=np.zeros(0),
            relevance_grades=clicks * 4,
            click_labels=clicks,
        ))
        metadata[qid] = {
            "categories": [int(c) for c in categories[display]],
            "attractiveness": [float(a) for a in attract[display]],
            "beta": cfg.beta,
        }
    return instances, metadata


def oracle_optimal_slate(attractiveness, categories, beta, max_n: int = 10):
    """Exhaustive argmax of expected clicks over all permutations (N <= max_n)."""
    n = len(attractiveness)
    if n > max_n:
        raise ValueError(
            f"N={n} exceeds the factorial guard ({max_n}); reduce the slate size")
    best_perm = None
    best_val = -1.0
    for perm in itertools.permutations(range(n)):
        val = expected_clicks(perm, attractiveness, categories, beta)
        if val > best_val:
            best_val = val
            best_perm = list(perm)
    return best_perm, best_val


# -- checkpoints -------------------------------------------------------------


def save_tensor_doc(named_tensors, config: dict, kind: str,
                    optimizer_state=None, rng_state=None) -> str:
    """Self-describing JSON document; floats serialize via repr, which
    round-trips f64 exactly, so save -> load -> save is byte-identical."""
    doc = {
        "version": CHECKPOINT_VERSION,
        "kind": kind,
        "config": config,
        "tensors": [
            {"name": name, "shape": list(t.data.shape),
             "data": t.data.reshape(-1).tolist()}
            for name, t in named_tensors
        ],
        "optimizer": optimizer_state,
        "rng": rng_state,
    }
    return json.dumps(doc, indent=1, sort_keys=True)


def load_tensor_doc(text: str) -> dict:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise CheckpointError(f"corrupt checkpoint: {e}") from e
    if not isinstance(doc, dict) or "version" not in doc:
        raise CheckpointError("corrupt checkpoint: missing version")
    if doc["version"] != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"unsupported checkpoint version {doc['version']} "
            f"(expected {CHECKPOINT_VERSION})")
    try:
        arrays = {}
        for entry in doc["tensors"]:
            arrays[entry["name"]] = np.asarray(
                entry["data"], dtype=np.float64).reshape(entry["shape"])
    except (KeyError, TypeError, ValueError) as e:
        raise CheckpointError(f"corrupt checkpoint: {e}") from e
    return {
        "arrays": arrays,
        "config": doc.get("config", {}),
        "optimizer": doc.get("optimizer"),
        "rng": doc.get("rng"),
        "kind": doc.get("kind", "divnet"),
        "sha256": checkpoint_hash(text),
    }


def checkpoint_hash(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def save_checkpoint(params: DivNetParams, optimizer_state=None, rng_state=None,
                    extra_config=None, kind: str = "divnet") -> str:
    config = dict(extra_config or {}, model=params.config.to_dict())
    return save_tensor_doc(params.named_tensors(), config, kind,
                           optimizer_state, rng_state)


def load_checkpoint(text: str):
    """Returns a dict with keys params, optimizer, rng, config, kind, sha256."""
    doc = load_tensor_doc(text)
    if doc["kind"] not in ("divnet", "prm"):
        raise CheckpointError(
            f"checkpoint kind {doc['kind']!r} does not hold DivNet parameters")
    try:
        cfg = ModelConfig.from_dict(doc["config"]["model"])
    except (KeyError, TypeError) as e:
        raise CheckpointError(f"corrupt checkpoint: {e}") from e
    params = DivNetParams.init(cfg, seed=0)
    for name, tensor in params.named_tensors():
        if name not in doc["arrays"]:
            raise CheckpointError(f"corrupt checkpoint: missing tensor {name}")
        arr = doc["arrays"][name]
        if arr.shape != tensor.data.shape:
            raise CheckpointError(
                f"tensor {name}: stored shape {arr.shape} != {tensor.data.shape}")
        tensor.data = arr
        tensor.zero_grad()
    doc["params"] = params
    return doc
