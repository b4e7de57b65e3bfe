"""Ranking metrics and the two-task evaluation protocol.

AUC is the probability that a uniformly random positive outranks a
uniformly random negative, ties counted one half. The fast path uses the
rank-sum formulation with average ranks; `auc_bruteforce` is the exact
pairwise oracle kept for verification.

The protocol compares conversion estimators on two tasks: ranking
conversions among clicked test impressions (cvr task), and ranking
click-and-convert events among all test impressions with the score
pctr * pcvr, where pctr comes from one frozen, independently trained
click network reused for every method (ctcvr task).
"""

from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Mapping, Sequence

import numpy as np

from .models import BaseModel
from .samples import Dataset, clicked_subset


def average_ranks(scores: np.ndarray) -> np.ndarray:
    """1-based ranks with ties assigned the mean rank of their group."""
    s = np.asarray(scores, dtype=np.float64)
    order = np.argsort(s, kind="mergesort")
    ss = s[order]
    new_group = np.empty(s.shape[0], dtype=bool)
    new_group[0] = True
    new_group[1:] = ss[1:] != ss[:-1]
    group = np.cumsum(new_group) - 1
    counts = np.bincount(group)
    last_rank = np.cumsum(counts)
    group_rank = last_rank - (counts - 1) / 2.0
    ranks = np.empty(s.shape[0])
    ranks[order] = group_rank[group]
    return ranks


def auc(scores, labels) -> float:
    """Rank-sum AUC with half credit for ties; O(n log n)."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape[0] != labels.shape[0] or scores.shape[0] == 0:
        raise ValueError("scores and labels must be equal-length and nonempty")
    n_pos = int(np.count_nonzero(labels == 1))
    n_neg = labels.shape[0] - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("degenerate label set")
    ranks = average_ranks(scores)
    pos_rank_sum = float(ranks[np.asarray(labels) == 1].sum())
    return (pos_rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def auc_bruteforce(scores, labels) -> float:
    """Exact pairwise AUC: counts wins and half-ties in rational arithmetic."""
    scores = list(map(float, scores))
    labels = list(labels)
    pos = [s for s, l in zip(scores, labels) if l == 1]
    neg = [s for s, l in zip(scores, labels) if l != 1]
    if not pos or not neg:
        raise ValueError("degenerate label set")
    halves = 0
    for p in pos:
        for q in neg:
            if p > q:
                halves += 2
            elif p == q:
                halves += 1
    return float(Fraction(halves, 2 * len(pos) * len(neg)))


def eval_cvr_task(pcvr_scores_fn: Callable[[Dataset], np.ndarray], test: Dataset) -> float:
    """AUC of the conversion scores over clicked test impressions vs the z label."""
    clicked = clicked_subset(test)
    if len(clicked) == 0:
        raise ValueError("degenerate label set")
    return auc(pcvr_scores_fn(clicked), clicked.z)


def eval_ctcvr_task(pcvr_scores_fn: Callable[[Dataset], np.ndarray],
                    shared_ctr_model: BaseModel, test: Dataset,
                    pctr_scores: np.ndarray | None = None,
                    pcvr_scores: np.ndarray | None = None) -> float:
    """AUC of pctr_shared * pcvr over all test impressions vs the y&z label.

    Every method is scored with the same frozen click network, so
    differences isolate the conversion estimates. Precomputed score arrays
    may be passed to avoid repeating the forward passes.
    """
    pctr = shared_ctr_model.predict(test) if pctr_scores is None else pctr_scores
    pcvr = pcvr_scores_fn(test) if pcvr_scores is None else pcvr_scores
    scores = np.asarray(pctr, dtype=np.float64) * np.asarray(pcvr, dtype=np.float64)
    labels = (test.y.astype(bool) & test.z.astype(bool)).astype(np.int8)
    return auc(scores, labels)


@dataclass(frozen=True)
class ReportRow:
    method: str
    task: str
    mean: float
    std: float
    n_seeds: int


@dataclass
class EvalReport:
    """Per method x task aggregates over seeds, with run provenance."""

    rows: list[ReportRow]
    dataset_id: str
    config_hash: str
    seeds: list[int]
    failed_seeds: list[int]

    def to_tsv(self) -> str:
        lines = [
            f"# dataset={self.dataset_id}",
            f"# config={self.config_hash}",
            "# seeds=" + ",".join(str(s) for s in self.seeds),
            "method\ttask\tauc_mean\tauc_std\tn_seeds",
        ]
        if self.failed_seeds:
            lines.insert(3, "# failed_seeds=" + ",".join(str(s) for s in self.failed_seeds))
        for r in self.rows:
            lines.append(f"{r.method}\t{r.task}\t{r.mean:.6f}\t{r.std:.6f}\t{r.n_seeds}")
        return "\n".join(lines) + "\n"


def repeat_and_aggregate(
    experiment: Callable[[int], Mapping[tuple[str, str], float]],
    seeds: Sequence[int],
    dataset_id: str = "",
    config_hash: str = "",
    jobs: int = 1,
) -> tuple[EvalReport, dict[int, dict[tuple[str, str], float]]]:
    """Run the experiment per seed and report mean and population std.

    A seed that raises is excluded from aggregation with a warning; the
    report records it. Also returns the raw per-seed values. Seeds run on
    `jobs` worker threads; results are aggregated in seed-list order, so
    the report does not depend on scheduling.
    """
    if len(seeds) == 0:
        raise ValueError("need at least one seed")
    per_seed: dict[int, dict[tuple[str, str], float]] = {}
    failed: list[int] = []
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            futures = {s: pool.submit(experiment, s) for s in seeds}
        outcomes = [(s, futures[s]) for s in seeds]
    else:
        outcomes = None
    for k, s in enumerate(seeds):
        try:
            if outcomes is not None:
                per_seed[s] = dict(outcomes[k][1].result())
            else:
                per_seed[s] = dict(experiment(s))
        except Exception as exc:  # noqa: BLE001 - seed isolation is the contract
            warnings.warn(f"seed {s} failed and is excluded: {exc}", stacklevel=2)
            failed.append(s)
    keys: list[tuple[str, str]] = []
    for vals in per_seed.values():
        for k in vals:
            if k not in keys:
                keys.append(k)
    rows = []
    for method, task in keys:
        vals = np.array([v[(method, task)] for v in per_seed.values() if (method, task) in v])
        rows.append(ReportRow(method, task, float(vals.mean()), float(vals.std()), vals.size))
    return EvalReport(rows, dataset_id, config_hash, list(seeds), failed), per_seed


def spearman(a, b) -> float:
    """Rank correlation; 0.0 when either side has no rank variation."""
    ra = average_ranks(np.asarray(a, dtype=np.float64))
    rb = average_ranks(np.asarray(b, dtype=np.float64))
    sa = ra.std()
    sb = rb.std()
    if sa == 0.0 or sb == 0.0:
        return 0.0
    return float(((ra - ra.mean()) * (rb - rb.mean())).mean() / (sa * sb))
