"""Command-line surface: train, eval, rerank, synth, attention.

Config resolution order: documented defaults < JSON config file < flags.
A flag that overrides a file value is reported on stderr, never silently
merged. Exit codes: 0 success, 1 runtime failure, 2 usage/path error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import baselines, data, metrics
from .model import DivNetParams, ModelConfig, decode_slate, export_attention
from .training import TrainConfig, train

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2


class UsageError(Exception):
    pass


def detect_feature_width(path: Path) -> int:
    width = 0
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            for tok in line.split()[2:]:
                fid = tok.split(":", 1)[0]
                if fid.isdigit():
                    width = max(width, int(fid))
    if width == 0:
        raise UsageError(f"could not detect any features in {path}")
    return width


def load_instances(path_str: str, feature_width=None, user_width=0):
    path = Path(path_str)
    if not path.exists():
        raise UsageError(f"data file not found: {path}")
    if feature_width is None:
        feature_width = detect_feature_width(path)
    with open(path, encoding="utf-8") as f:
        return data.parse_letor(f, feature_width, user_width), feature_width


def resolve_config(args, file_keys) -> dict:
    """Merge defaults, config file, then explicit flags (reported overrides)."""
    resolved = dict(file_keys)
    if getattr(args, "config", None):
        cfg_path = Path(args.config)
        if not cfg_path.exists():
            raise UsageError(f"config file not found: {cfg_path}")
        try:
            file_cfg = json.loads(cfg_path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise UsageError(f"bad config file {cfg_path}: {e}")
        for k, v in file_cfg.items():
            if k in resolved:
                resolved[k] = v
    for k in resolved:
        flag_val = getattr(args, k, None)
        if flag_val is not None:
            if getattr(args, "config", None) and resolved[k] != flag_val:
                print(f"note: flag --{k.replace('_', '-')}={flag_val} overrides "
                      f"config value {resolved[k]}", file=sys.stderr)
            resolved[k] = flag_val
    return resolved


def provenance(resolved: dict, ckpt_hash: str | None = None) -> dict:
    p = {"config": json.dumps(resolved, sort_keys=True)}
    if ckpt_hash:
        p["checkpoint_sha256"] = ckpt_hash
    return p


def write_text(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


# -- train --------------------------------------------------------------------


TRAIN_DEFAULTS = {
    "model": "divnet", "feature_width": None, "user_width": 0,
    "d_k": 64, "d_v": 64, "num_blocks": 1, "hidden_dim": 64,
    "alpha": 0.1, "lam": 0.5, "learning_rate": 0.01, "batch_size": 256,
    "samples_per_instance": 4, "step_weight_mode": "log-discount",
    "baseline_mode": "batch-mean", "supervision_trajectory": "sampled",
    "sample_trajectories": True, "epochs": 10, "patience": 5, "seed": 0,
}


def cmd_train(args) -> int:
    cfg = resolve_config(args, TRAIN_DEFAULTS)
    out_dir = Path(args.out)
    instances, feature_width = load_instances(
        args.data, cfg["feature_width"], cfg["user_width"])
    cfg["feature_width"] = feature_width
    train_set, val_set, _ = data.split(instances, seed=cfg["seed"])

    if cfg["model"] == "pointwise":
        scorer = baselines.train_pointwise(
            train_set, feature_width, cfg["user_width"], cfg["hidden_dim"],
            epochs=cfg["epochs"], lr=cfg["learning_rate"], seed=cfg["seed"])
        write_text(out_dir / "checkpoint.json", scorer.save())
        report = metrics.evaluate(
            lambda inst: baselines.pointwise_rank(inst, scorer), val_set)
        report.provenance = provenance(cfg)
        write_text(out_dir / "val_report.csv", report.to_csv())
        return EXIT_OK

    model_cfg = ModelConfig(
        item_dim=feature_width, user_dim=cfg["user_width"], d_k=cfg["d_k"],
        d_v=cfg["d_v"], num_blocks=cfg["num_blocks"], alpha=cfg["alpha"])

    if cfg["model"] == "prm":
        params = baselines.train_prm(
            train_set, model_cfg, epochs=cfg["epochs"],
            lr=cfg["learning_rate"], seed=cfg["seed"])
        write_text(out_dir / "checkpoint.json",
                   data.save_checkpoint(params, extra_config={"train": cfg},
                                        kind="prm"))
        report = metrics.evaluate(
            lambda inst: baselines.prm_rank(inst, params), val_set)
        report.provenance = provenance(cfg)
        write_text(out_dir / "val_report.csv", report.to_csv())
        return EXIT_OK

    if cfg["model"] != "divnet":
        raise UsageError(f"unknown model {cfg['model']!r}")

    train_cfg = TrainConfig(
        alpha=cfg["alpha"], lam=cfg["lam"], learning_rate=cfg["learning_rate"],
        batch_size=cfg["batch_size"],
        samples_per_instance=cfg["samples_per_instance"],
        step_weight_mode=cfg["step_weight_mode"],
        baseline_mode=cfg["baseline_mode"],
        supervision_trajectory=cfg["supervision_trajectory"],
        sample_trajectories=cfg["sample_trajectories"],
        seed=cfg["seed"], max_epochs=cfg["epochs"], patience=cfg["patience"])

    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "train_log.jsonl", "w", encoding="utf-8") as log:
        state = train(train_set, train_cfg, model_cfg=model_cfg,
                      val_instances=val_set, log_stream=log)
    best = state.best_params
    ckpt = data.save_checkpoint(
        best, optimizer_state=state.optimizer.state_dict(),
        rng_state=json.loads(json.dumps(state.rng.bit_generator.state)),
        extra_config={"train": train_cfg.to_dict()})
    write_text(out_dir / "checkpoint.json", ckpt)
    report = metrics.evaluate(
        lambda inst: decode_slate(inst, best, alpha=train_cfg.alpha,
                                  mode="greedy").permutation, val_set)
    report.provenance = provenance(cfg, data.checkpoint_hash(ckpt))
    write_text(out_dir / "val_report.csv", report.to_csv())
    return EXIT_OK


# -- eval ----------------------------------------------------------------------


EVAL_DEFAULTS = {
    "method": "divnet", "cutoffs": "5,10", "alpha": None, "alpha_sweep": None,
    "gamma": 0.5, "feature_width": None, "user_width": 0, "seed": 0,
    "graded_ndcg": False,
}


def make_ranker(method, ckpt_doc, scorer, alpha, gamma):
    if method == "divnet":
        params = ckpt_doc["params"]
        a = alpha if alpha is not None else params.config.alpha
        return lambda inst: decode_slate(inst, params, alpha=a,
                                         mode="greedy").permutation
    if method == "prm":
        params = ckpt_doc["params"]
        return lambda inst: baselines.prm_rank(inst, params)
    if method == "pointwise":
        return lambda inst: baselines.pointwise_rank(inst, scorer)
    if method == "submodular":
        return lambda inst: baselines.submodular_greedy(
            inst, scorer.scores(inst), gamma)
    if method == "dpp":
        return lambda inst: baselines.dpp_greedy(inst, scorer.scores(inst))
    raise UsageError(f"unknown method {method!r}")


def cmd_eval(args) -> int:
    cfg = resolve_config(args, EVAL_DEFAULTS)
    ckpt_path = Path(args.checkpoint)
    if not ckpt_path.exists():
        raise UsageError(f"checkpoint not found: {ckpt_path}")
    text = ckpt_path.read_text(encoding="utf-8")
    method = cfg["method"]

    ckpt_doc = None
    scorer = None
    if method in ("divnet", "prm"):
        ckpt_doc = data.load_checkpoint(text)
        expected = ckpt_doc["params"].config.item_dim
        if cfg["feature_width"] is None:
            cfg["feature_width"] = expected
        if cfg["feature_width"] != expected:
            raise UsageError(
                f"checkpoint expects feature width {expected}, "
                f"got {cfg['feature_width']}")
    else:
        scorer = baselines.PointwiseScorer.load(text)
        if cfg["feature_width"] is None:
            cfg["feature_width"] = scorer.feature_dim
        if cfg["feature_width"] != scorer.feature_dim:
            raise UsageError(
                f"checkpoint expects feature width {scorer.feature_dim}, "
                f"got {cfg['feature_width']}")

    instances, _ = load_instances(args.data, cfg["feature_width"],
                                  cfg["user_width"])
    cutoffs = [int(c) for c in str(cfg["cutoffs"]).split(",")]
    ckpt_hash = data.checkpoint_hash(text)

    alphas = [cfg["alpha"]]
    if cfg["alpha_sweep"]:
        if method != "divnet":
            raise UsageError("--alpha-sweep only applies to --method divnet")
        alphas = [float(a) for a in str(cfg["alpha_sweep"]).split(",")]

    out = Path(args.out)
    for a in alphas:
        ranker = make_ranker(method, ckpt_doc, scorer, a, cfg["gamma"])
        report = metrics.evaluate(ranker, instances, cutoffs,
                                  graded_ndcg=cfg["graded_ndcg"])
        resolved = dict(cfg, alpha=a)
        report.provenance = provenance(resolved, ckpt_hash)
        if len(alphas) > 1:
            path = out.with_name(f"{out.stem}_alpha{a}{out.suffix}")
        else:
            path = out
        write_text(path, report.to_csv())
        print(f"method={method}" + (f" alpha={a}" if a is not None else ""))
        print(report.to_table())
    return EXIT_OK


# -- rerank ----------------------------------------------------------------------


def cmd_rerank(args) -> int:
    cfg = resolve_config(args, {"mode": "greedy", "alpha": None, "seed": 0,
                                "feature_width": None, "user_width": 0})
    ckpt_path = Path(args.checkpoint)
    if not ckpt_path.exists():
        raise UsageError(f"checkpoint not found: {ckpt_path}")
    text = ckpt_path.read_text(encoding="utf-8")
    doc = data.load_checkpoint(text)
    params = doc["params"]
    if cfg["feature_width"] is None:
        cfg["feature_width"] = params.config.item_dim
    instances, _ = load_instances(args.input, cfg["feature_width"],
                                  cfg["user_width"])
    alpha = cfg["alpha"] if cfg["alpha"] is not None else params.config.alpha

    lines = []
    for key, val in sorted(provenance(cfg, doc["sha256"]).items()):
        lines.append(f"# {key}: {val}")
    lines.append("query_id,step,item_index,probability,determinant,logit")
    for inst in instances:
        d = decode_slate(inst, params, alpha=alpha, mode=cfg["mode"],
                         seed=cfg["seed"])
        for t, item in enumerate(d.permutation):
            p = float(d.step_probabilities[t][item].data)
            det = float(d.step_determinants[t].data)
            y = float(d.step_logits[t].data)
            lines.append(f"{inst.query_id},{t + 1},{item},{p:.17g},{det:.17g},{y:.17g}")
    write_text(Path(args.out), "\n".join(lines) + "\n")
    return EXIT_OK


# -- synth ----------------------------------------------------------------------


SYNTH_DEFAULTS = {
    "num_queries": 200, "num_items": 10, "num_categories": 5, "beta": 0.5,
    "attract_low": 0.1, "attract_high": 0.9, "noise_scale": 0.05,
    "logged_order": "by-attractiveness", "seed": 0,
}


def cmd_synth(args) -> int:
    cfg = resolve_config(args, SYNTH_DEFAULTS)
    syn_cfg = data.SyntheticConfig(
        num_items=cfg["num_items"], num_categories=cfg["num_categories"],
        attract_low=cfg["attract_low"], attract_high=cfg["attract_high"],
        beta=cfg["beta"], noise_scale=cfg["noise_scale"],
        logged_order=cfg["logged_order"], seed=cfg["seed"])
    instances, meta = data.generate_synthetic(syn_cfg, cfg["num_queries"])
    out_dir = Path(args.out)
    write_text(out_dir / "data.letor", data.serialize_letor(instances))
    sidecar = {"config": syn_cfg.to_dict(), "queries": meta}
    write_text(out_dir / "meta.json", json.dumps(sidecar, indent=1, sort_keys=True))

    if cfg["num_items"] <= 8:
        lines = [f"# config: {json.dumps(cfg, sort_keys=True)}",
                 "query_id,oracle_permutation,expected_clicks"]
        for inst in instances:
            m = meta[inst.query_id]
            perm, val = data.oracle_optimal_slate(
                m["attractiveness"], m["categories"], m["beta"])
            lines.append(f"{inst.query_id},{' '.join(map(str, perm))},{val:.17g}")
        write_text(out_dir / "oracle.csv", "\n".join(lines) + "\n")
    return EXIT_OK


# -- attention ----------------------------------------------------------------------


def cmd_attention(args) -> int:
    cfg = resolve_config(args, {"alpha": None, "feature_width": None,
                                "user_width": 0})
    ckpt_path = Path(args.checkpoint)
    if not ckpt_path.exists():
        raise UsageError(f"checkpoint not found: {ckpt_path}")
    doc = data.load_checkpoint(ckpt_path.read_text(encoding="utf-8"))
    params = doc["params"]
    if cfg["feature_width"] is None:
        cfg["feature_width"] = params.config.item_dim
    instances, _ = load_instances(args.data, cfg["feature_width"],
                                  cfg["user_width"])
    alpha = cfg["alpha"] if cfg["alpha"] is not None else params.config.alpha
    out_dir = Path(args.out)
    for inst in instances:
        d = decode_slate(inst, params, alpha=alpha, mode="greedy")
        matrix = export_attention(d)
        lines = []
        for key, val in sorted(provenance(cfg, doc["sha256"]).items()):
            lines.append(f"# {key}: {val}")
        lines.append("# permutation: " + " ".join(map(str, d.permutation)))
        for row in matrix:
            lines.append(",".join(f"{v:.17g}" for v in row))
        write_text(out_dir / f"attention_{inst.query_id}.csv",
                   "\n".join(lines) + "\n")
    return EXIT_OK


# -- entry point ----------------------------------------------------------------------


def build_parser():
    p = argparse.ArgumentParser(prog="divnet",
                                description="Diversity-aware slate reranker")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="JSON config file; flags override it")
        sp.add_argument("--threads", type=int, default=1,
                        help="max parallel workers (evaluation)")

    t = sub.add_parser("train", help="train a reranker")
    common(t)
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--model", choices=["divnet", "pointwise", "prm"])
    t.add_argument("--feature-width", dest="feature_width", type=int)
    t.add_argument("--user-width", dest="user_width", type=int)
    t.add_argument("--d-k", dest="d_k", type=int)
    t.add_argument("--d-v", dest="d_v", type=int)
    t.add_argument("--num-blocks", dest="num_blocks", type=int)
    t.add_argument("--hidden-dim", dest="hidden_dim", type=int)
    t.add_argument("--alpha", type=float)
    t.add_argument("--lambda", dest="lam", type=float)
    t.add_argument("--lr", dest="learning_rate", type=float)
    t.add_argument("--batch-size", dest="batch_size", type=int)
    t.add_argument("--samples", dest="samples_per_instance", type=int)
    t.add_argument("--step-weights", dest="step_weight_mode",
                   choices=["uniform", "log-discount"])
    t.add_argument("--baseline", dest="baseline_mode",
                   choices=["none", "batch-mean"])
    t.add_argument("--supervision", dest="supervision_trajectory",
                   choices=["sampled", "logged-order"])
    t.add_argument("--no-sampling", dest="sample_trajectories",
                   action="store_const", const=False,
                   help="remove-sampling ablation: greedy training decode")
    t.add_argument("--epochs", type=int)
    t.add_argument("--patience", type=int)
    t.add_argument("--seed", type=int)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a method, write a report CSV")
    common(e)
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--method",
                   choices=["divnet", "pointwise", "submodular", "dpp", "prm"])
    e.add_argument("--cutoffs")
    e.add_argument("--alpha", type=float)
    e.add_argument("--alpha-sweep", dest="alpha_sweep")
    e.add_argument("--gamma", type=float)
    e.add_argument("--feature-width", dest="feature_width", type=int)
    e.add_argument("--user-width", dest="user_width", type=int)
    e.add_argument("--graded-ndcg", dest="graded_ndcg", action="store_const",
                   const=True)
    e.add_argument("--seed", type=int)
    e.set_defaults(func=cmd_eval)

    r = sub.add_parser("rerank", help="rerank slates, write per-step CSV rows")
    common(r)
    r.add_argument("--checkpoint", required=True)
    r.add_argument("--input", required=True)
    r.add_argument("--out", required=True)
    r.add_argument("--mode", choices=["greedy", "sample"])
    r.add_argument("--alpha", type=float)
    r.add_argument("--seed", type=int,
                   help="sampling seed (ignored in greedy mode)")
    r.add_argument("--feature-width", dest="feature_width", type=int)
    r.add_argument("--user-width", dest="user_width", type=int)
    r.set_defaults(func=cmd_rerank)

    s = sub.add_parser("synth", help="generate a synthetic dataset + oracle")
    common(s)
    s.add_argument("--out", required=True)
    s.add_argument("--num-queries", dest="num_queries", type=int)
    s.add_argument("--num-items", dest="num_items", type=int)
    s.add_argument("--num-categories", dest="num_categories", type=int)
    s.add_argument("--beta", type=float)
    s.add_argument("--attract-low", dest="attract_low", type=float)
    s.add_argument("--attract-high", dest="attract_high", type=float)
    s.add_argument("--noise-scale", dest="noise_scale", type=float)
    s.add_argument("--logged-order", dest="logged_order",
                   choices=["by-attractiveness", "uniform"])
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_synth)

    a = sub.add_parser("attention", help="export decoder attention matrices")
    common(a)
    a.add_argument("--checkpoint", required=True)
    a.add_argument("--data", required=True)
    a.add_argument("--out", required=True)
    a.add_argument("--alpha", type=float)
    a.add_argument("--feature-width", dest="feature_width", type=int)
    a.add_argument("--user-width", dest="user_width", type=int)
    a.set_defaults(func=cmd_attention)

    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code not in (0, None) else EXIT_OK
    try:
        return args.func(args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (data.LetorParseError, data.CheckpointError, ValueError,
            FloatingPointError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
