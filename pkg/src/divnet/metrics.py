"""Ranking-quality metrics (NDCG, Pre@K, MAP@K with the /K denominator),
an intra-list distance diversity diagnostic, and batch evaluation."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np

from .model import RankingInstance


def dcg(labels, k):
    labels = np.asarray(labels, dtype=np.float64)
    k = min(k, len(labels))
    ranks = np.arange(1, k + 1)
    return float(np.sum((2.0 ** labels[:k] - 1.0) / np.log2(ranks + 1)))


def ndcg_at_k(ranked_labels, k):
    """NDCG@k; 0 by convention when the ideal DCG is 0."""
    if k < 1:
        raise ValueError("k must be >= 1")
    ideal = sorted(ranked_labels, reverse=True)
    idcg = dcg(ideal, k)
    if idcg == 0.0:
        return 0.0
    return dcg(ranked_labels, k) / idcg


def precision_at_k(ranked_labels, k):
    if k < 1:
        raise ValueError("k must be >= 1")
    labels = np.asarray(ranked_labels, dtype=np.float64)
    return float(labels[:k].sum()) / k


def map_at_k(ranked_labels, k):
    """MAP@k with denominator k (not the clicked count):
    (sum_{i<=k} Pre@i * label_i) / k."""
    if k < 1:
        raise ValueError("k must be >= 1")
    labels = np.asarray(ranked_labels, dtype=np.float64)
    total = 0.0
    for i in range(1, min(k, len(labels)) + 1):
        if labels[i - 1] > 0:
            total += precision_at_k(labels, i)
    return total / k


def intra_list_distance(inst: RankingInstance, pi, k):
    """Mean pairwise (1 - cosine) over raw features of the top-k items."""
    if k < 2:
        raise ValueError("k must be >= 2")
    top = list(pi)[:k]
    feats = inst.item_features[top]
    norms = np.linalg.norm(feats, axis=1)
    total = 0.0
    pairs = 0
    for i in range(len(top)):
        for j in range(i + 1, len(top)):
            if norms[i] == 0.0 or norms[j] == 0.0:
                cos = 0.0
            else:
                cos = float(feats[i] @ feats[j]) / (norms[i] * norms[j])
            total += 1.0 - cos
            pairs += 1
    return total / pairs if pairs else 0.0


@dataclass
class EvalReport:
    """Metric-name -> mean aggregation over a query set."""

    rows: list = field(default_factory=list)      # (metric, cutoff, mean, n_queries)
    per_query: list = field(default_factory=list)  # dicts, includes zero-positive flag
    provenance: dict = field(default_factory=dict)

    def get(self, metric, cutoff):
        for m, c, mean, _ in self.rows:
            if m == metric and c == cutoff:
                return mean
        raise KeyError(f"{metric}@{cutoff}")

    def to_csv(self) -> str:
        buf = io.StringIO()
        for key, val in sorted(self.provenance.items()):
            buf.write(f"# {key}: {val}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["metric", "cutoff", "mean", "n_queries"])
        for metric, cutoff, mean, n in self.rows:
            w.writerow([metric, cutoff, f"{mean:.17g}", n])
        return buf.getvalue()

    def to_json(self) -> str:
        return json.dumps({
            "provenance": self.provenance,
            "metrics": [{"metric": m, "cutoff": c, "mean": mean, "n_queries": n}
                        for m, c, mean, n in self.rows],
        }, indent=2, sort_keys=True)

    def to_table(self) -> str:
        lines = [f"{'metric':<12} {'cutoff':>6} {'mean':>10} {'queries':>8}"]
        for metric, cutoff, mean, n in self.rows:
            lines.append(f"{metric:<12} {cutoff:>6} {mean:>10.4f} {n:>8}")
        return "\n".join(lines)


def evaluate(rank_fn, instances, cutoffs=(5, 10), graded_ndcg=False,
             include_ild=True) -> EvalReport:
    """Greedy-decode every instance through rank_fn (instance -> permutation)
    and aggregate metric means. Zero-positive queries score 0 and are flagged."""
    instances = list(instances)
    if not instances:
        raise ValueError("evaluate: empty instance list")
    cutoffs = sorted(set(int(k) for k in cutoffs))
    acc = {}
    per_query = []
    for inst in instances:
        pi = list(rank_fn(inst))
        labels = inst.click_labels[pi]
        ndcg_labels = inst.relevance_grades[pi] if graded_ndcg else labels
        record = {"query_id": inst.query_id, "permutation": pi,
                  "zero_positives": bool(labels.sum() == 0)}
        for k in cutoffs:
            vals = {
                ("ndcg", k): ndcg_at_k(ndcg_labels, k),
                ("precision", k): precision_at_k(labels, k),
                ("map", k): map_at_k(labels, k),
            }
            if include_ild and k >= 2 and len(pi) >= 2:
                vals[("ild", k)] = intra_list_distance(inst, pi, min(k, len(pi)))
            for key, v in vals.items():
                acc.setdefault(key, []).append(v)
                record[f"{key[0]}@{key[1]}"] = v
        per_query.append(record)
    rows = []
    for metric in ("ndcg", "precision", "map", "ild"):
        for k in cutoffs:
            if (metric, k) in acc:
                vals = acc[(metric, k)]
                rows.append((metric, k, float(np.mean(vals)), len(vals)))
    return EvalReport(rows=rows, per_query=per_query)
