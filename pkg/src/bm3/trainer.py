"""Training loop, early stopping, ablation table and hyper-parameter grid."""

from __future__ import annotations

import itertools
import json
import logging
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .data import FeatureMatrix
from .evaluator import EvalConfig, MetricsReport, evaluate
from .graph import build_adjacency
from .loss import LossBreakdown, LossConfig, total_loss
from .model import ModelParams, backward, forward, save_checkpoint
from .nn import AdamState, adam_step

log = logging.getLogger(__name__)

DTYPES = {"float32": np.float32, "float64": np.float64}


class DivergenceError(FloatingPointError):
    """Training produced a non-finite loss."""


@dataclass
class TrainConfig:
    d: int = 64
    n_layers: int = 1
    dropout: float = 0.5
    lambda_reg: float = 0.1
    lr: float = 0.001
    batch_size: int = 2048
    max_epochs: int = 1000
    patience: int = 20
    seed: int = 2023
    use_visual: bool = True
    use_textual: bool = True
    enable_align: bool = True
    enable_mask: bool = True
    row_dropout: bool = False
    reg_on: str = "readout"
    cutoffs: tuple[int, ...] = (10, 20)
    dtype: str = "float32"

    def __post_init__(self):
        self.cutoffs = tuple(self.cutoffs)
        problems = []
        if self.d < 1:
            problems.append("d must be >= 1")
        if self.n_layers < 1:
            problems.append("n_layers must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            problems.append("dropout must be in [0, 1)")
        if self.lambda_reg < 0:
            problems.append("lambda_reg must be >= 0")
        if self.lr < 0:
            problems.append("lr must be >= 0")
        if self.batch_size < 1:
            problems.append("batch_size must be >= 1")
        if self.max_epochs < 1:
            problems.append("max_epochs must be >= 1")
        if not 1 <= self.patience <= self.max_epochs:
            problems.append("patience must be in [1, max_epochs]")
        if self.reg_on not in ("readout", "ego"):
            problems.append("reg_on must be 'readout' or 'ego'")
        if self.dtype not in DTYPES:
            problems.append(f"dtype must be one of {sorted(DTYPES)}")
        if 20 not in self.cutoffs:
            problems.append("cutoffs must include 20 (the early-stopping metric)")
        if problems:
            raise ValueError("; ".join(problems))

    def active_modalities(self, features):
        wanted = {"visual": self.use_visual, "textual": self.use_textual}
        mods = [m for m in sorted(features) if wanted.get(m, True)]
        # with both multi-modal losses off the projections would never train
        if not (self.enable_align or self.enable_mask):
            return []
        return mods


@dataclass
class TrainReport:
    best_epoch: int
    best_valid_r20: float
    valid_trace: list[float]
    test_metrics: MetricsReport
    best_valid_metrics: MetricsReport
    loss_trace: list[LossBreakdown] = field(default_factory=list)
    epoch_seconds: list[float] = field(default_factory=list)
    params: ModelParams | None = field(default=None, repr=False)

    def summary(self):
        return {
            "best_epoch": self.best_epoch,
            "best_valid_r20": self.best_valid_r20,
            "valid": self.best_valid_metrics.as_dict(),
            "test": self.test_metrics.as_dict(),
            "epochs": len(self.epoch_seconds),
            "mean_epoch_seconds": float(np.mean(self.epoch_seconds)) if self.epoch_seconds else 0.0,
        }


def _epoch_batches(train_edges, batch_size, seed, epoch):
    rng = np.random.default_rng(seed + epoch)
    order = rng.permutation(len(train_edges))
    shuffled = train_edges[order]
    return [shuffled[s:s + batch_size] for s in range(0, len(shuffled), batch_size)]


def train(split, features, config: TrainConfig, out_dir=None, on_epoch=None) -> TrainReport:
    """Fit BM3 on ``split.train_edges`` with validation-based early stopping.

    ``features`` maps modality name to an ``(num_items, d_m)`` array or
    ``FeatureMatrix``. When ``out_dir`` is given, the best checkpoint and an
    NDJSON metrics log are written there.
    """
    if len(split.train_edges) == 0:
        raise ValueError("empty training set")
    dtype = DTYPES[config.dtype]
    mods = config.active_modalities(features)
    feats = {}
    for m in mods:
        f = features[m]
        feats[m] = np.asarray(f.data if isinstance(f, FeatureMatrix) else f, dtype=dtype)
    for m, f in feats.items():
        if f.shape[0] != split.num_items:
            raise ValueError(f"{m} features have {f.shape[0]} rows, expected {split.num_items}")

    adj = build_adjacency(split.train_edges, split.num_users, split.num_items, dtype=dtype)
    params = ModelParams.init(split.num_users, split.num_items, config.d,
                              {m: f.shape[1] for m, f in feats.items()}, seed=config.seed, dtype=dtype)
    opt = AdamState(lr=config.lr)
    loss_cfg = LossConfig(lambda_reg=config.lambda_reg, enable_align=config.enable_align,
                          enable_mask=config.enable_mask, reg_on=config.reg_on)
    id_rng = np.random.default_rng([config.seed, 1])
    mm_rng = np.random.default_rng([config.seed, 2])
    valid_cfg = EvalConfig(config.cutoffs, "valid")

    log_fh = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        log_fh = open(out_dir / "metrics.ndjson", "w")

    best = -np.inf
    best_epoch = -1
    best_values = params.copy_values()
    best_valid = None
    stale = 0
    report_losses, seconds, valid_trace = [], [], []
    try:
        for epoch in range(config.max_epochs):
            t0 = time.perf_counter()
            sums = np.zeros(4)
            batches = _epoch_batches(split.train_edges, config.batch_size, config.seed, epoch)
            for b, batch in enumerate(batches):
                state = forward(params, adj, feats, config.n_layers, config.dropout, id_rng,
                                modality_rng=mm_rng, row_dropout=config.row_dropout)
                ego = (params.user_emb.value, params.item_emb.value)
                breakdown, grads = total_loss(state, batch, loss_cfg, ego=ego)
                if not np.isfinite(breakdown.total):
                    raise DivergenceError(f"non-finite loss at epoch {epoch}, batch {b}")
                backward(params, state, adj, feats, grads.online, grads.readout, grads.ego)
                adam_step(params.params(), opt)
                sums += len(batch) * np.array([breakdown.rec, breakdown.align, breakdown.mask, breakdown.reg])
            seconds.append(time.perf_counter() - t0)
            mean = LossBreakdown(*(sums / len(split.train_edges)))
            report_losses.append(mean)

            metrics = evaluate(params, adj, split, feats, config.n_layers, valid_cfg)
            r20 = metrics.recall[20]
            valid_trace.append(r20)
            if r20 > best:
                best, best_epoch, best_valid, stale = r20, epoch, metrics, 0
                best_values = params.copy_values()
            else:
                stale += 1
            record = {"epoch": epoch, "loss": mean.as_dict(), "valid": metrics.as_dict(), "seconds": seconds[-1]}
            if log_fh:
                log_fh.write(json.dumps(record) + "\n")
                log_fh.flush()
            if on_epoch:
                on_epoch(record)
            log.debug("epoch %d loss %.5f valid R@20 %.4f", epoch, mean.total, r20)
            if stale >= config.patience:
                break
    finally:
        if log_fh:
            log_fh.close()

    params.load_values(best_values)
    test = evaluate(params, adj, split, feats, config.n_layers, EvalConfig(config.cutoffs, "test"))
    if out_dir is not None:
        save_checkpoint(out_dir / "checkpoint", params, {
            "d": config.d, "L": config.n_layers, "p": config.dropout, "lambda": config.lambda_reg,
            "epoch": best_epoch, "dataset": split.fingerprint(), "config": asdict(config),
        })
    return TrainReport(best_epoch, float(best), valid_trace, test, best_valid, report_losses, seconds, params)


ABLATION_VARIANTS = {
    "BM3 w/o v&t": {"use_visual": False, "use_textual": False},
    "BM3 w/o t": {"use_textual": False},
    "BM3 w/o v": {"use_visual": False},
    "BM3 w/o mm": {"enable_align": False, "enable_mask": False},
    "BM3 w/o inter": {"enable_align": False},
    "BM3 w/o intra": {"enable_mask": False},
    "BM3": {},
}


def run_ablation(split, features, base_config: TrainConfig, out_dir=None):
    """Train every ablation variant with the same seed. Returns ``{label: TrainReport}``."""
    reports = {}
    for label, overrides in ABLATION_VARIANTS.items():
        cfg = replace(base_config, **overrides)
        sub = None
        if out_dir is not None:
            sub = Path(out_dir) / label.replace(" ", "_").replace("/", "").replace("&", "")
        reports[label] = train(split, features, cfg, out_dir=sub)
    return reports


def grid_cells(layers, dropouts, lambdas):
    return [dict(n_layers=L, dropout=p, lambda_reg=lam) for L, p, lam in itertools.product(layers, dropouts, lambdas)]


def run_grid(split, features, base_config: TrainConfig, layers=(1, 2), dropouts=(0.3, 0.5), lambdas=(0.1, 0.01),
             out_dir=None):
    """Cartesian grid; the best cell has the strictly highest validation R@20 (first wins ties)."""
    cells = grid_cells(layers, dropouts, lambdas)
    if not cells:
        raise ValueError("empty grid")
    results = []
    best_idx = 0
    for idx, cell in enumerate(cells):
        cfg = replace(base_config, **cell)
        sub = None
        if out_dir is not None:
            sub = Path(out_dir) / f"L{cfg.n_layers}_p{cfg.dropout}_reg{cfg.lambda_reg}"
        report = train(split, features, cfg, out_dir=sub)
        results.append((cell, report))
        if report.best_valid_r20 > results[best_idx][1].best_valid_r20:
            best_idx = idx
    return results[best_idx][0], results


def report_table(rows, cutoffs=(10, 20)):
    """TSV text: one line per labelled report with test metrics."""
    head = ["variant"] + [f"R@{k}" for k in cutoffs] + [f"N@{k}" for k in cutoffs] + ["best_epoch", "valid_R@20"]
    lines = ["\t".join(head)]
    for label, rep in rows:
        vals = [rep.test_metrics.recall[k] for k in cutoffs] + [rep.test_metrics.ndcg[k] for k in cutoffs]
        lines.append("\t".join([label] + [f"{v:.4f}" for v in vals] + [str(rep.best_epoch), f"{rep.best_valid_r20:.4f}"]))
    return "\n".join(lines) + "\n"


def grid_table(results, cutoffs=(10, 20)):
    head = ["n_layers", "dropout", "lambda_reg", "valid_R@20"] + [f"test_R@{k}" for k in cutoffs] + \
        [f"test_N@{k}" for k in cutoffs]
    lines = ["\t".join(head)]
    for cell, rep in results:
        vals = [rep.best_valid_r20] + [rep.test_metrics.recall[k] for k in cutoffs] + \
            [rep.test_metrics.ndcg[k] for k in cutoffs]
        lines.append("\t".join([str(cell["n_layers"]), str(cell["dropout"]), str(cell["lambda_reg"])] +
                               [f"{v:.4f}" for v in vals]))
    return "\n".join(lines) + "\n"
