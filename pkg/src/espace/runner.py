"""Experiment pipeline: per seed, split the data, train one shared click
network plus every requested conversion method, and score both tasks.

The shared click network is trained exactly once per (seed, fraction) and
reused three ways: as the frozen pctr factor of the ctcvr task, as the
propensity source for inverse-weighting, and as the denominator network
of the division estimator.

Seeds are independent replicates; with a synthetic source each seed draws
a fresh log from the same calibrated world. Dataset fractions subsample
the training half only (nested per seed), keeping the test half fixed so
sweeps measure training-volume effects.
"""

from __future__ import annotations

import hashlib
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import numpy as np

from .baselines import SamplingConfig, aman_augment, oversample_positives, unbias_weights
from .logio import parse_log, read_truth
from .metrics import EvalReport, auc, eval_cvr_task, eval_ctcvr_task, repeat_and_aggregate
from .models import (
    TrainConfig,
    division_cvr,
    train_base_cvr,
    train_cvr_on,
    train_esmm,
    train_independent,
)
from .samples import Dataset, clicked_subset, time_split
from .seeding import substream
from .synth import WorldConfig, bias_report, gen_dataset, make_world

METHODS = ("BASE", "AMAN", "OVERSAMPLE", "UNBIAS", "DIVISION", "ESMM-NS", "ESMM")

AUC_TASKS = ("cvr", "ctcvr")
DIAG_METRICS = ("rank_corr", "mae_clicked", "mae_unclicked", "pcvr_min", "pcvr_max", "exceeded_one")


@dataclass
class ExperimentPlan:
    methods: tuple[str, ...]
    seeds: tuple[int, ...]
    world: Optional[WorldConfig] = None
    n: int = 200_000
    data_seed: Optional[int] = None  # synth draw seed; defaults to the world seed
    data_path: Optional[str] = None
    train: TrainConfig = field(default_factory=TrainConfig)
    sampling: SamplingConfig = field(default_factory=SamplingConfig)
    fractions: tuple[float, ...] = (1.0,)
    jobs: int = 1

    def __post_init__(self):
        unknown = [m for m in self.methods if m not in METHODS]
        if unknown:
            raise ValueError(f"unknown methods: {unknown}; choose from {METHODS}")
        if len(self.seeds) == 0:
            raise ValueError("need at least one seed")
        if len(self.fractions) == 0:
            raise ValueError("need at least one fraction")
        if any(not 0.0 < f <= 1.0 for f in self.fractions):
            raise ValueError("fractions must be in (0, 1]")
        if self.world is None and self.data_path is None:
            raise ValueError("plan needs a synthetic world or a data path")

    def config_hash(self) -> str:
        payload = {
            "methods": list(self.methods),
            "seeds": list(self.seeds),
            "world": asdict(self.world) if self.world else None,
            "n": self.n,
            "data_seed": self.data_seed,
            "data_path": self.data_path,
            "train": asdict(self.train),
            "sampling": asdict(self.sampling),
            "fractions": list(self.fractions),
        }
        blob = json.dumps(payload, sort_keys=True, default=str)
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]

    def dataset_id(self) -> str:
        if self.data_path is not None:
            return os.path.basename(str(self.data_path))
        w = self.world
        return (f"synth(n={self.n},fields={w.field_count},vocab={w.vocab_size},"
                f"ctr={w.target_ctr},cvr={w.target_cvr},rho={w.rho},world_seed={w.world_seed})")


class _Source:
    """One fixed dataset per plan, mirroring repeat-training-on-one-log evaluation.

    Run seeds vary training randomness only. A synthetic source draws the
    log once from the calibrated world (data_seed); fresh-data replication
    is a different plan with a different data_seed.
    """

    def __init__(self, plan: ExperimentPlan):
        self.plan = plan
        if plan.world is not None:
            gt = make_world(plan.world)
            seed = plan.world.world_seed if plan.data_seed is None else plan.data_seed
            self.fixed = gen_dataset(gt, plan.n, seed)
        else:
            ds = parse_log(plan.data_path)
            truth_path = str(plan.data_path) + ".truth"
            tp = tq = None
            if os.path.exists(truth_path):
                tp, tq = read_truth(truth_path)
                if tp.shape[0] != len(ds):
                    raise ValueError("truth sidecar length does not match dataset")
            self.fixed = (ds, tp, tq)

    def draw(self, seed: int):
        return self.fixed


def _pick_best(candidates, test: Dataset):
    """Best candidate by cvr-task AUC, mirroring report-the-best-rate tuning."""
    best_fn, best_auc = None, -np.inf
    for fn in candidates:
        score = eval_cvr_task(fn, test)
        if score > best_auc:
            best_fn, best_auc = fn, score
    return best_fn


def run_seed(plan: ExperimentPlan, source: _Source, seed: int, fraction: float
             ) -> dict[tuple[str, str], float]:
    cfg = plan.train
    samp = plan.sampling
    ds, _, true_pcvr = source.draw(seed)
    train, test = time_split(ds)
    n_train = len(train)
    if fraction < 1.0:
        k = max(1, int(np.floor(fraction * n_train)))
        perm = substream(seed, "fraction").permutation(n_train)
        train = train.take(np.sort(perm[:k]))
    test_truth = None if true_pcvr is None else true_pcvr[n_train:]

    shared_ctr = train_independent(train, "ctr", cfg, substream(seed, "ctr-shared", fraction))
    pctr_test = shared_ctr.predict(test)

    out: dict[tuple[str, str], float] = {}
    t_test = (test.y.astype(bool) & test.z.astype(bool)).astype(np.int8)
    out[("_SHARED_CTR", "ctcvr_alone")] = auc(pctr_test, t_test)
    for method in plan.methods:
        pcvr_fn = _train_method(method, train, test, shared_ctr, cfg, samp, seed, fraction)
        pcvr_test = np.asarray(pcvr_fn(test), dtype=np.float64)
        out[(method, "cvr")] = eval_cvr_task(pcvr_fn, test)
        out[(method, "ctcvr")] = eval_ctcvr_task(
            pcvr_fn, shared_ctr, test, pctr_scores=pctr_test, pcvr_scores=pcvr_test)
        out[(method, "factor_alone")] = auc(pcvr_test, t_test)
        out[(method, "pcvr_min")] = float(pcvr_test.min())
        out[(method, "pcvr_max")] = float(pcvr_test.max())
        if method == "DIVISION":
            out[(method, "exceeded_one")] = float(np.count_nonzero(pcvr_test > 1.0))
        if test_truth is not None:
            rep = bias_report(pcvr_test, test_truth, test)
            out[(method, "rank_corr")] = rep.rank_corr_all
            out[(method, "mae_clicked")] = rep.mae_clicked
            out[(method, "mae_unclicked")] = rep.mae_unclicked
    return out


def _train_method(method: str, train: Dataset, test: Dataset, shared_ctr, cfg: TrainConfig,
                  samp: SamplingConfig, seed: int, fraction: float) -> Callable:
    rng_tag = ("method", method, fraction)
    if method == "BASE":
        model = train_base_cvr(train, cfg, substream(seed, *rng_tag))
        return model.predict
    if method == "AMAN":
        candidates = []
        for rate in samp.aman_rates:
            aug = aman_augment(train, rate, seed)
            m = train_cvr_on(aug, cfg, substream(seed, *rng_tag, rate), method="AMAN")
            candidates.append(m.predict)
        return _pick_best(candidates, test)
    if method == "OVERSAMPLE":
        clicked = clicked_subset(train)
        candidates = []
        for k in samp.oversample_rates:
            over = oversample_positives(clicked, k, seed)
            m = train_cvr_on(over, cfg, substream(seed, *rng_tag, k), method="OVERSAMPLE")
            candidates.append(m.predict)
        return _pick_best(candidates, test)
    if method == "UNBIAS":
        clicked = clicked_subset(train)
        weights = unbias_weights(clicked, shared_ctr, samp.unbias_cap)
        model = train_cvr_on(clicked, cfg, substream(seed, *rng_tag), weights=weights,
                             method="UNBIAS")
        return model.predict
    if method == "DIVISION":
        ctcvr_model = train_independent(train, "ctcvr", cfg, substream(seed, *rng_tag))

        def division_fn(ds: Dataset) -> np.ndarray:
            ratio, _ = division_cvr(ctcvr_model.predict(ds), shared_ctr.predict(ds),
                                    samp.division_floor)
            return ratio

        return division_fn
    if method in ("ESMM", "ESMM-NS"):
        model = train_esmm(train, cfg, substream(seed, *rng_tag), shared=(method == "ESMM"))
        return model.predict_pcvr
    raise ValueError(f"unknown method {method!r}")


@dataclass
class RunResult:
    plan: ExperimentPlan
    config_hash: str
    reports: dict[float, EvalReport]
    per_seed: dict[float, dict[int, dict[tuple[str, str], float]]]

    def metric(self, fraction: float, seed: int, method: str, name: str) -> float:
        return self.per_seed[fraction][seed][(method, name)]


def run_plan(plan: ExperimentPlan, verbose: bool = False) -> RunResult:
    source = _Source(plan)
    chash = plan.config_hash()
    reports: dict[float, EvalReport] = {}
    per_seed: dict[float, dict[int, dict[tuple[str, str], float]]] = {}
    for fraction in plan.fractions:
        if verbose:
            print(f"[espace] fraction {fraction}: seeds {list(plan.seeds)}", file=sys.stderr)

        def cell(seed: int, _fraction=fraction):
            res = run_seed(plan, source, seed, _fraction)
            if verbose:
                print(f"[espace] fraction {_fraction} seed {seed} done", file=sys.stderr)
            return res

        report, raw = repeat_and_aggregate(
            cell, plan.seeds, dataset_id=plan.dataset_id(), config_hash=chash,
            jobs=plan.jobs)
        report.rows = [r for r in report.rows if r.task in AUC_TASKS]
        reports[fraction] = report
        per_seed[fraction] = raw
    return RunResult(plan, chash, reports, per_seed)


# -- report files -------------------------------------------------------


def _header_lines(result: RunResult) -> list[str]:
    return [
        f"# dataset={result.plan.dataset_id()}",
        f"# config={result.config_hash}",
        "# seeds=" + ",".join(str(s) for s in result.plan.seeds),
    ]


def write_outputs(result: RunResult, out_dir: str) -> list[str]:
    """Write report/sweep, per-seed raw, and bias tables; returns the paths."""
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    fractions = list(result.plan.fractions)
    if len(fractions) == 1:
        path = os.path.join(out_dir, "report.tsv")
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(result.reports[fractions[0]].to_tsv())
        paths.append(path)
    else:
        path = os.path.join(out_dir, "sweep.tsv")
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for line in _header_lines(result):
                fh.write(line + "\n")
            fh.write("fraction\tmethod\ttask\tauc_mean\tauc_std\tn_seeds\n")
            for fraction in fractions:
                for r in result.reports[fraction].rows:
                    fh.write(f"{fraction}\t{r.method}\t{r.task}\t{r.mean:.6f}\t"
                             f"{r.std:.6f}\t{r.n_seeds}\n")
        paths.append(path)

    path = os.path.join(out_dir, "per_seed.tsv")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for line in _header_lines(result):
            fh.write(line + "\n")
        fh.write("fraction\tseed\tmethod\tmetric\tvalue\n")
        for fraction in fractions:
            for seed in result.plan.seeds:
                if seed not in result.per_seed[fraction]:
                    continue
                vals = result.per_seed[fraction][seed]
                for method in result.plan.methods:
                    for metric in AUC_TASKS + DIAG_METRICS:
                        if (method, metric) in vals:
                            fh.write(f"{fraction}\t{seed}\t{method}\t{metric}\t"
                                     f"{vals[(method, metric)]:.6f}\n")
    paths.append(path)

    has_bias = any(
        (m, "rank_corr") in vals
        for fraction in fractions
        for vals in result.per_seed[fraction].values()
        for m in result.plan.methods
    )
    if has_bias:
        path = os.path.join(out_dir, "bias.tsv")
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for line in _header_lines(result):
                fh.write(line + "\n")
            fh.write("fraction\tmethod\tmetric\tmean\tstd\tn_seeds\n")
            for fraction in fractions:
                raw = result.per_seed[fraction]
                for method in result.plan.methods:
                    for metric in ("rank_corr", "mae_clicked", "mae_unclicked"):
                        vals = np.array([v[(method, metric)] for v in raw.values()
                                         if (method, metric) in v])
                        if vals.size:
                            fh.write(f"{fraction}\t{method}\t{metric}\t{vals.mean():.6f}\t"
                                     f"{vals.std():.6f}\t{vals.size}\n")
        paths.append(path)
    return paths
