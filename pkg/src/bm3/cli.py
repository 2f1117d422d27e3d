"""``bm3`` command line: prepare, train, evaluate, ablate, grid."""

from __future__ import annotations

import argparse
import json
import os
import shutil
import sys
from dataclasses import fields
from pathlib import Path

from .data import (
    DataError,
    SplitDataset,
    build_dataset,
    kcore_filter,
    load_feature_matrix,
    load_interactions,
    read_edges,
    read_index_map,
    sparsity,
    split_per_user,
    write_edges,
    write_index_map,
)
from .evaluator import EvalConfig, evaluate
from .graph import build_adjacency
from .model import load_checkpoint
from .trainer import DivergenceError, TrainConfig, grid_table, report_table, run_ablation, run_grid, train

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_DIVERGED = 0, 2, 3, 4

PATH_KEYS = {"data_dir", "visual_features", "textual_features", "out_dir"}
GRID_KEYS = {"grid_layers", "grid_dropout", "grid_lambda"}


class ConfigError(ValueError):
    pass


def _train_fields():
    return {f.name: f for f in fields(TrainConfig)}


def parse_run_config(obj: dict):
    """Validate a flat JSON config. Returns ``(paths, TrainConfig, grid)``."""
    if not isinstance(obj, dict):
        raise ConfigError("config must be a JSON object")
    tf = _train_fields()
    problems = []
    for key in obj:
        if key not in tf and key not in PATH_KEYS and key not in GRID_KEYS:
            problems.append(f"{key}: unknown field")
    for key in ("data_dir", "out_dir"):
        if key not in obj:
            problems.append(f"{key}: required")
    for key in PATH_KEYS:
        val = obj.get(key)
        if val is not None and not isinstance(val, str):
            problems.append(f"{key}: expected a path string")
    for key in ("data_dir", "visual_features", "textual_features"):
        val = obj.get(key)
        if isinstance(val, str) and not Path(val).exists():
            problems.append(f"{key}: path does not exist: {val}")
    kwargs = {}
    for key, val in obj.items():
        if key not in tf:
            continue
        default = tf[key].default
        if isinstance(default, bool):
            ok = isinstance(val, bool)
        elif isinstance(default, int):
            ok = isinstance(val, int) and not isinstance(val, bool)
        elif isinstance(default, float):
            ok = isinstance(val, (int, float)) and not isinstance(val, bool)
        elif isinstance(default, tuple):
            ok = isinstance(val, list) and all(isinstance(v, int) for v in val)
            val = tuple(val) if ok else val
        else:
            ok = isinstance(val, str)
        if not ok:
            problems.append(f"{key}: wrong type {type(val).__name__}")
        else:
            kwargs[key] = val
    for key in GRID_KEYS:
        if key in obj and (not isinstance(obj[key], list) or not obj[key]):
            problems.append(f"{key}: expected a nonempty list")
    if problems:
        raise ConfigError("\n".join(problems))
    try:
        cfg = TrainConfig(**kwargs)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    paths = {k: obj.get(k) for k in PATH_KEYS}
    grid = {
        "layers": tuple(obj.get("grid_layers", [1, 2])),
        "dropouts": tuple(obj.get("grid_dropout", [0.3, 0.5])),
        "lambdas": tuple(obj.get("grid_lambda", [0.1, 0.01])),
    }
    return paths, cfg, grid


def load_prepared(data_dir) -> SplitDataset:
    data_dir = Path(data_dir)
    users = read_index_map(data_dir / "user_index.tsv")
    items = read_index_map(data_dir / "item_index.tsv")
    return SplitDataset.from_edges(
        len(users), len(items),
        read_edges(data_dir / "train.tsv"), read_edges(data_dir / "valid.tsv"), read_edges(data_dir / "test.tsv"),
    )


def load_features(paths, num_items):
    feats = {}
    for m in ("visual", "textual"):
        p = paths.get(f"{m}_features")
        if p:
            feats[m] = load_feature_matrix(p, num_items, m)
    return feats


def _read_config(path):
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    paths, cfg, grid = parse_run_config(raw)
    out = Path(paths["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    shutil.copyfile(path, out / "config.json")
    return paths, cfg, grid


def cmd_prepare(args):
    records = load_interactions(args.input)
    filtered = kcore_filter(records, args.k)
    if not filtered:
        raise DataError(f"{args.k}-core filtering left no interactions")
    ds = build_dataset(filtered)
    split = split_per_user(ds, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_index_map(out / "user_index.tsv", ds.user_keys)
    write_index_map(out / "item_index.tsv", ds.item_keys)
    write_edges(out / "interactions.tsv", ds.edges)
    write_edges(out / "train.tsv", split.train_edges)
    write_edges(out / "valid.tsv", split.valid_edges)
    write_edges(out / "test.tsv", split.test_edges)
    stats = {
        "users": ds.num_users,
        "items": ds.num_items,
        "interactions": ds.num_edges,
        "sparsity": sparsity(ds),
        "k": args.k,
        "seed": args.seed,
    }
    (out / "stats.json").write_text(json.dumps(stats, indent=2) + "\n")
    print(f"users\t{ds.num_users}\nitems\t{ds.num_items}\ninteractions\t{ds.num_edges}\n"
          f"sparsity\t{100 * stats['sparsity']:.2f}%")
    return EXIT_OK


def _print_summary(report):
    s = report.summary()
    print(f"best epoch {s['best_epoch']}  valid R@20 {s['best_valid_r20']:.4f}  epochs {s['epochs']}  "
          f"{s['mean_epoch_seconds']:.3f} s/epoch")
    print("phase\t" + "\t".join(f"R@{k}" for k in s["test"]["recall"]) + "\t" +
          "\t".join(f"N@{k}" for k in s["test"]["ndcg"]))
    for phase in ("valid", "test"):
        m = s[phase]
        print(phase + "\t" + "\t".join(f"{v:.4f}" for v in m["recall"].values()) + "\t" +
              "\t".join(f"{v:.4f}" for v in m["ndcg"].values()))


def cmd_train(args):
    paths, cfg, _ = _read_config(args.config)
    split = load_prepared(paths["data_dir"])
    feats = load_features(paths, split.num_items)
    out = Path(paths["out_dir"])
    report = train(split, feats, cfg, out_dir=out)
    (out / "report.json").write_text(json.dumps(report.summary(), indent=2) + "\n")
    manifest_path = out / "checkpoint" / "manifest.json"
    manifest = json.loads(manifest_path.read_text())
    manifest["data_dir"] = str(Path(paths["data_dir"]).resolve())
    manifest["features"] = {m: str(Path(paths[f"{m}_features"]).resolve()) for m in feats}
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    _print_summary(report)
    return EXIT_OK


def cmd_evaluate(args):
    ckpt = Path(args.checkpoint)
    if not (ckpt / "manifest.json").exists():
        raise DataError(f"no checkpoint manifest in {ckpt}")
    params, manifest = load_checkpoint(ckpt)
    split = load_prepared(manifest["data_dir"])
    if split.fingerprint() != manifest["dataset"]:
        raise DataError("prepared data does not match the checkpoint's dataset fingerprint")
    feats = {m: load_feature_matrix(p, split.num_items, m).data for m, p in manifest.get("features", {}).items()
             if m in params.proj}
    cfg = manifest["config"]
    dtype = params.user_emb.value.dtype
    adj = build_adjacency(split.train_edges, split.num_users, split.num_items, dtype=dtype)
    feats = {m: f.astype(dtype) for m, f in feats.items()}
    report = evaluate(params, adj, split, feats, manifest["L"], EvalConfig(tuple(cfg["cutoffs"]), args.phase))
    text = report.to_json(epoch=manifest["epoch"], phase=args.phase) + "\n"
    out = Path(args.out) if args.out else ckpt / f"eval_{args.phase}.json"
    out.write_text(text)
    print(text, end="")
    return EXIT_OK


def cmd_ablate(args):
    paths, cfg, _ = _read_config(args.config)
    split = load_prepared(paths["data_dir"])
    feats = load_features(paths, split.num_items)
    out = Path(paths["out_dir"])
    reports = run_ablation(split, feats, cfg, out_dir=out)
    table = report_table(list(reports.items()), cfg.cutoffs)
    (out / "ablation.tsv").write_text(table)
    print(table, end="")
    return EXIT_OK


def cmd_grid(args):
    paths, cfg, grid = _read_config(args.config)
    split = load_prepared(paths["data_dir"])
    feats = load_features(paths, split.num_items)
    out = Path(paths["out_dir"])
    best, results = run_grid(split, feats, cfg, grid["layers"], grid["dropouts"], grid["lambdas"], out_dir=out)
    table = grid_table(results, cfg.cutoffs)
    (out / "grid.tsv").write_text(table)
    (out / "best.json").write_text(json.dumps(best, indent=2) + "\n")
    print(table, end="")
    print("best\t" + json.dumps(best))
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="bm3", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("prepare", help="k-core filter, index and split raw interactions")
    p.add_argument("--input", required=True)
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--seed", type=int, default=2023)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_prepare)
    for name, func, hlp in (("train", cmd_train, "train one model"),
                            ("ablate", cmd_ablate, "run the seven ablation variants"),
                            ("grid", cmd_grid, "grid search over layers, dropout and regularisation")):
        p = sub.add_parser(name, help=hlp)
        p.add_argument("--config", required=True)
        p.set_defaults(func=func)
    p = sub.add_parser("evaluate", help="evaluate a saved checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--phase", choices=("valid", "test"), default="test")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_evaluate)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    threads = os.environ.get("BM3_THREADS")
    limiter = None
    if threads:
        from threadpoolctl import threadpool_limits

        limiter = threadpool_limits(int(threads))
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error:\n{exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (DivergenceError, FloatingPointError) as exc:
        print(f"numeric divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    finally:
        if limiter is not None:
            limiter.restore_original_limits()


if __name__ == "__main__":
    sys.exit(main())
