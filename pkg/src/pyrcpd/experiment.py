"""Desk-scale comparison of PRN against the CNN, RCN and DWN baselines.

One run per (seed, split, kind): generate the split, train, tune the NMS
window on the validation series, and report test AUC at a single tolerance.
A random-score detector on the same test series gives the chance level.
"""
import dataclasses
import logging
import time
from dataclasses import dataclass

import numpy as np

from .data import DatasetSpec, gen_dataset
from .evaluate import auc, random_scores, tune_nms_window
from .models import ModelConfig, build_model
from .train import TrainConfig, split_validation, train

log = logging.getLogger(__name__)


@dataclass
class DeskConfig:
    n_series: int = 400
    T: int = 1024
    c: int = 4
    n_events: int = 2
    d_max: int = 256
    width: int = 32  # filters per CNN layer
    n_h: int = 64
    depth: int = 4
    max_epochs: int = 120
    patience: int = 20
    lr: float = 0.001
    batch_size: int = 4
    target_radius: int = 1
    augment: bool = True
    window_candidates: tuple = (4, 8, 16, 32)

    @property
    def eta(self):
        return self.T // 16

    @property
    def arch(self):
        w = self.width
        return f"[9:{w}:4],[5:{w}:2],[5:{w}:2]"


@dataclass
class RunResult:
    seed: int
    split: str
    kind: str
    auc: float
    nms_window: int
    epochs: int
    seconds: float


def dataset(cfg, split, seed):
    spec = DatasetSpec(n_series=cfg.n_series, T=cfg.T, c=cfg.c, n_events=cfg.n_events,
                       d_max=cfg.d_max, split=split, seed=seed)
    return gen_dataset(spec)


def run_one(cfg, kind, train_set, test_set, seed, split="mixed"):
    t0 = time.perf_counter()
    model = build_model(ModelConfig(kind=kind, channels=cfg.c, wavelet_depth=cfg.depth,
                                    cnn_arch=cfg.arch, n_h=cfg.n_h, seed=seed))
    tcfg = TrainConfig(lr=cfg.lr, batch_size=cfg.batch_size, max_epochs=cfg.max_epochs,
                       patience=cfg.patience, target_radius=cfg.target_radius,
                       augment=cfg.augment, seed=seed)
    model, history = train(model, train_set, tcfg)
    # same validation split that train() held out internally
    rng = np.random.default_rng(tcfg.seed)
    _, va_idx = split_validation(len(train_set), tcfg.val_fraction, int(rng.integers(2**32)))
    val = [train_set[i] for i in va_idx]
    P = model.granularity
    w = tune_nms_window([model.scores(s.X) for s in val], [s.truths for s in val],
                        cfg.eta, P, cfg.window_candidates)
    scores = [model.scores(s.X) for s in test_set]
    a = auc(scores, [s.truths for s in test_set], cfg.eta, w, P).auc
    res = RunResult(seed, split, kind, a, w, len(history.epochs), time.perf_counter() - t0)
    log.info("%s", res)
    return res


def random_baseline(cfg, test_set, seed, P=16):
    """Best AUC of uniform random scores over the candidate windows (an
    upper bound on what window tuning could give chance)."""
    scores = random_scores([-(-s.X.shape[0] // P) for s in test_set], seed)
    truths = [s.truths for s in test_set]
    return max(auc(scores, truths, cfg.eta, w, P).auc for w in cfg.window_candidates)


def run_seed(cfg, seed, kinds=("CNN", "RCN", "DWN", "PRN"),
             splits=("mixed", "abrupt_train_gradual_test")):
    results = []
    rand = {}
    for split in splits:
        train_set, test_set = dataset(cfg, split, seed)
        rand[split] = random_baseline(cfg, test_set, seed)
        for kind in kinds:
            results.append(run_one(cfg, kind, train_set, test_set, seed, split))
    return results, rand


def results_csv(results):
    fields = [f.name for f in dataclasses.fields(RunResult)]
    lines = [",".join(fields)]
    for r in results:
        lines.append(",".join(str(getattr(r, f)) for f in fields))
    return "\n".join(lines) + "\n"


@dataclass
class Summary:
    """Per-seed AUCs at the single tolerance ``eta`` plus the two verdicts:
    PRN beats chance by ``margin`` (median over seeds), and the
    mixed-minus-split drop of both wavelet models is below that of both
    plain models in at least ``min_wins`` seeds."""
    table: dict  # (seed, split, kind) -> auc
    random: dict  # (seed, split) -> auc
    prn_margin: list
    drop_wins: list
    learnable: bool
    scale_direction: bool


def summarize(results, rand, margin=0.3, min_wins=2, split="abrupt_train_gradual_test"):
    table = {(r.seed, r.split, r.kind): r.auc for r in results}
    seeds = sorted({r.seed for r in results})
    prn_margin = [table[(s, "mixed", "PRN")] - rand[(s, "mixed")] for s in seeds]
    wins = []
    for s in seeds:
        drop = {k: table[(s, "mixed", k)] - table[(s, split, k)] for k in ("CNN", "RCN", "DWN", "PRN")}
        wins.append(max(drop["DWN"], drop["PRN"]) < min(drop["CNN"], drop["RCN"]))
    return Summary(table, rand, prn_margin, wins,
                   bool(np.median(prn_margin) >= margin), sum(wins) >= min_wins)


def run_all(cfg, seeds=(0, 1, 2)):
    results, rand = [], {}
    for seed in seeds:
        res, r = run_seed(cfg, seed)
        results.extend(res)
        rand.update({(seed, split): v for split, v in r.items()})
    return results, rand
