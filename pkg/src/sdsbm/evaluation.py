"""Held-out evaluation: splits, ranking metrics, recovery error, cross-validation.

Test observations are scored with the full label distribution the fitted model
assigns them; ranking metrics pool the (observation, candidate label) pairs.
Membership recovery is measured after globally aligning cluster identities,
since cluster order is arbitrary.
"""
from __future__ import annotations

import csv
import itertools
import json
import logging
from dataclasses import dataclass, replace

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.stats import rankdata

from .em import fit
from .errors import ContractError
from .model import MembershipTensor
from .prior import TemporalCoupling

_log = logging.getLogger(__name__)

DEFAULT_BETA_GRID = (0.0, 1.0, 3.0, 10.0, 30.0, 100.0, 300.0, 1000.0)
FAMILIES = ("sdsbm", "nc", "static")
#: exhaustive permutation alignment is used up to this many clusters
MAX_FACTORIAL_CLUSTERS = 8


@dataclass(frozen=True)
class SplitPlan:
    """Per-observation random split into train/validation/test, one per fold."""

    n_folds: int = 5
    train_fraction: float = 0.8
    validation_fraction: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.n_folds < 1:
            raise ContractError("n_folds must be >= 1")
        if not (0 < self.train_fraction < 1) or not (0 < self.validation_fraction < 1):
            raise ContractError("fractions must lie strictly between 0 and 1")
        if self.train_fraction + self.validation_fraction >= 1:
            raise ContractError("train and validation fractions must leave room for test")

    def split(self, data, fold):
        """(train, validation, test) datasets for the given fold; extents are kept."""
        if not 0 <= fold < self.n_folds:
            raise ContractError(f"fold {fold} out of range [0, {self.n_folds})")
        rng = np.random.default_rng(np.random.SeedSequence(self.seed, spawn_key=(fold,)))
        perm = rng.permutation(len(data))
        n_train = int(len(data) * self.train_fraction)
        n_val = int(len(data) * self.validation_fraction)
        if n_train < 1 or n_val < 1 or n_train + n_val >= len(data):
            raise ContractError(
                f"dataset with {len(data)} observations cannot fill all three splits"
            )
        return (
            data.subset(perm[:n_train]),
            data.subset(perm[n_train:n_train + n_val]),
            data.subset(perm[n_train + n_val:]),
        )


@dataclass
class ScoreTable:
    """Scored held-out observations: one full label distribution per row."""

    scores: np.ndarray
    true_labels: np.ndarray
    skipped: int = 0


@dataclass
class FittedModel:
    """Fitted tensors plus what scoring needs: training coverage and epoch mapping."""

    theta: MembershipTensor
    p: BlockTensor
    prior: object
    train_epoch_counts: np.ndarray
    collapse: bool = False
    report: object = None

    def evaluation_tensors(self):
        """Tensors used to score held-out data.

        Epochs with no training observations take their neighbour average
        (uniform when nothing carries weight), so prediction at a never-seen
        slice borrows from the slices around it.
        """
        th = self.theta.values
        pv = self.p.values
        if self.collapse or th.shape[0] == 1:
            return th, pv
        unseen = np.asarray(self.train_epoch_counts) == 0
        if unseen.any():
            coupling = TemporalCoupling(self.train_epoch_counts, self.prior)
            avg, _ = coupling.average(th)
            th = np.array(th)
            th[unseen] = avg[unseen]
            if pv.shape[0] == th.shape[0]:
                avg_p, _ = coupling.average(pv)
                pv = np.array(pv)
                pv[unseen] = avg_p[unseen]
        return th, pv


def score_test_set(model, test):
    """Score every test observation the model can address.

    Observations whose node, label, or epoch lies outside the model's extents
    are skipped and counted (a model cannot rank what it never indexed).
    """
    th, pv = model.evaluation_tensors()
    n_epochs, n_items, _ = th.shape
    n_labels = pv.shape[2]
    epochs = np.zeros(len(test), dtype=np.int64) if model.collapse else test.epochs
    keep = (test.nodes < n_items) & (test.labels < n_labels) & (epochs < n_epochs)
    skipped = int((~keep).sum())
    if skipped:
        _log.warning("skipping %d observations outside the model extents", skipped)
    nodes = test.nodes[keep]
    labels = test.labels[keep]
    epochs = epochs[keep]
    scores = np.empty((nodes.size, n_labels))
    for t in np.unique(epochs):
        idx = epochs == t
        scores[idx] = th[t, nodes[idx], :] @ pv[0 if pv.shape[0] == 1 else t]
    return ScoreTable(scores, labels, skipped)


def _check_table(table):
    if table.scores.ndim != 2 or table.scores.shape[0] < 1:
        raise ContractError("score table is empty")
    if table.scores.shape[1] < 2:
        raise ContractError("metrics need at least two candidate labels")
    if table.true_labels.shape != (table.scores.shape[0],):
        raise ContractError("true labels do not match the score rows")


def _flat_pairs(table):
    n, n_labels = table.scores.shape
    positives = np.zeros(n * n_labels, dtype=bool)
    positives[np.arange(n) * n_labels + table.true_labels] = True
    return table.scores.ravel(), positives


def roc_auc(table):
    """One-vs-rest ROC-AUC over pooled (observation, candidate label) pairs.

    Probability that a true label outscores a non-label, ties counted half;
    computed from average ranks, which is exactly the pair-counting value.
    """
    _check_table(table)
    scores, positives = _flat_pairs(table)
    n_pos = int(positives.sum())
    n_neg = scores.size - n_pos
    ranks = rankdata(scores)
    return float((ranks[positives].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def average_precision(table):
    """Area under the precision-recall curve over pooled pairs.

    Thresholds sweep the distinct scores from above; tied scores enter
    together, so shuffling rows cannot change the value.
    """
    _check_table(table)
    scores, positives = _flat_pairs(table)
    order = np.argsort(-scores, kind="stable")
    sorted_scores = scores[order]
    true_pos = np.cumsum(positives[order])
    boundary = np.ones(scores.size, dtype=bool)
    boundary[:-1] = sorted_scores[:-1] != sorted_scores[1:]
    group_tp = true_pos[boundary].astype(float)
    group_size = np.flatnonzero(boundary) + 1.0
    precision = group_tp / group_size
    delta_tp = np.diff(np.concatenate(([0.0], group_tp)))
    return float((precision * delta_tp).sum() / group_tp[-1])


def coverage_error_normalized(table):
    """Mean normalized rank of the true label within its own observation.

    Rank 1 (true label on top everywhere) gives 0, rank O gives 1; tied scores
    take the midrank, so a uniform scorer sits at 0.5.
    """
    _check_table(table)
    n, n_labels = table.scores.shape
    true_scores = table.scores[np.arange(n), table.true_labels]
    higher = (table.scores > true_scores[:, None]).sum(axis=1)
    ties = (table.scores == true_scores[:, None]).sum(axis=1) - 1
    mean_rank = (1.0 + higher + 0.5 * ties).mean()
    return float((mean_rank - 1.0) / (n_labels - 1))


def rmse_aligned(estimate, truth):
    """Root-mean-square membership error under the best global cluster relabeling.

    One permutation is applied to the estimate's cluster axis for all epochs
    and items at once; the search is exhaustive up to 8 clusters and solved as
    an assignment problem (same objective) above that.  A single-slice
    estimate is compared against every epoch of the truth.
    """
    est = estimate.values if isinstance(estimate, MembershipTensor) else np.asarray(estimate, float)
    tru = truth.values if isinstance(truth, MembershipTensor) else np.asarray(truth, float)
    if est.ndim == 2:
        est = est[None]
    if tru.ndim == 2:
        tru = tru[None]
    if est.shape[0] == 1 and tru.shape[0] > 1:
        est = np.broadcast_to(est, tru.shape)
    if est.shape != tru.shape:
        raise ContractError(f"shape mismatch: estimate {est.shape} vs truth {tru.shape}")
    n_clusters = tru.shape[2]
    flat_est = est.reshape(-1, n_clusters)
    flat_tru = tru.reshape(-1, n_clusters)
    cost = np.empty((n_clusters, n_clusters))
    for a in range(n_clusters):
        diff = flat_est[:, a, None] - flat_tru
        cost[a] = np.einsum("nk,nk->k", diff, diff)
    if n_clusters <= MAX_FACTORIAL_CLUSTERS:
        columns = np.arange(n_clusters)
        best = min(
            cost[list(perm), columns].sum()
            for perm in itertools.permutations(range(n_clusters))
        )
    else:
        rows, cols = linear_sum_assignment(cost)
        best = cost[rows, cols].sum()
    return float(np.sqrt(best / flat_tru.size))


def flow_matrix(source, target):
    """Elementwise min-flow decomposition between two simplex rows.

    Mass that stays in a cluster is ``min(source, target)``; the rest moves
    from shrinking clusters to growing ones in proportion to their gains.
    Rows sum to ``source`` and columns to ``target``.
    """
    src = np.asarray(source, dtype=float)
    tgt = np.asarray(target, dtype=float)
    if src.shape != tgt.shape or src.ndim != 1:
        raise ContractError("source and target must be equal-length vectors")
    stay = np.minimum(src, tgt)
    flows = np.diag(stay)
    moved = (src - stay).sum()
    if moved > 0:
        flows += np.outer(src - stay, (tgt - stay) / moved)
    return flows


def membership_flows(theta):
    """Per-node cluster mass transfers between consecutive epochs.

    Yields ``(epoch_from, epoch_to, node, cluster_from, cluster_to, mass)``
    for every positive entry of the per-node flow matrices.
    """
    th = theta.values if isinstance(theta, MembershipTensor) else np.asarray(theta, float)
    n_epochs, n_items, _ = th.shape
    for t in range(n_epochs - 1):
        for i in range(n_items):
            flows = flow_matrix(th[t, i], th[t + 1, i])
            for k_from, k_to in zip(*np.nonzero(flows > 0)):
                yield (t, t + 1, i, int(k_from), int(k_to), float(flows[k_from, k_to]))


@dataclass
class FoldOutcome:
    fold: int
    beta: float
    metrics: dict


@dataclass
class EvalResult:
    """Per-fold metrics of one model family plus aggregates."""

    family: str
    folds: list

    def metric(self, name):
        return np.array([f.metrics[name] for f in self.folds])

    def mean(self, name):
        return float(self.metric(name).mean())

    def std_error(self, name):
        values = self.metric(name)
        if values.size < 2:
            return 0.0
        return float(values.std(ddof=1) / np.sqrt(values.size))

    def summary(self):
        names = sorted(self.folds[0].metrics)
        return {
            name: {"mean": self.mean(name), "std_error": self.std_error(name)}
            for name in names
        }


def _family_config(template, family, beta):
    if family == "sdsbm":
        beta_p = beta if template.p_mode == "dynamic" else 0.0
        prior = replace(template.prior, beta_theta=beta, beta_p=beta_p)
    else:
        prior = replace(template.prior, beta_theta=0.0, beta_p=0.0)
    return replace(template, prior=prior)


def _fit_family(train, family, beta, template):
    fit_data = train.collapse_epochs() if family == "static" else train
    config = _family_config(template, family, beta)
    report = fit(fit_data, config)
    return FittedModel(
        theta=report.theta,
        p=report.p,
        prior=config.prior,
        train_epoch_counts=fit_data.epoch_counts,
        collapse=family == "static",
        report=report,
    )


def cross_validate(data, family, beta_grid=DEFAULT_BETA_GRID, plan=None, *,
                   template, truth=None):
    """Cross-validated evaluation of one model family.

    Per fold: split the observations, fit one model per candidate coupling on
    the training split (the grid collapses to {0} for the decoupled and static
    families), pick the candidate with the best validation ROC-AUC (first one
    wins ties), and report test metrics for the pick.  With planted truth
    available, membership recovery error is reported as well.

    ``template`` supplies everything but the coupling strengths: cluster
    count, block mode, kernel shape, iteration budget, restarts, seed.
    """
    if family not in FAMILIES:
        raise ContractError(f"family must be one of {FAMILIES}, got {family!r}")
    plan = plan if plan is not None else SplitPlan()
    candidates = tuple(float(b) for b in beta_grid) if family == "sdsbm" else (0.0,)
    if not candidates:
        raise ContractError("beta grid is empty")
    outcomes = []
    for fold in range(plan.n_folds):
        train, val, test = plan.split(data, fold)
        best = None
        for beta in candidates:
            model = _fit_family(train, family, beta, template)
            val_auc = roc_auc(score_test_set(model, val))
            if best is None or val_auc > best[0]:
                best = (val_auc, beta, model)
        _, beta, model = best
        table = score_test_set(model, test)
        metrics = {
            "roc": roc_auc(table),
            "ap": average_precision(table),
            "nce": coverage_error_normalized(table),
        }
        if truth is not None:
            estimate, _ = model.evaluation_tensors()
            metrics["rmse"] = rmse_aligned(estimate, truth.theta)
        outcomes.append(FoldOutcome(fold=fold, beta=beta, metrics=metrics))
        _log.info(
            "fold %d %s: beta=%g %s", fold, family,
            beta, {k: round(v, 4) for k, v in metrics.items()},
        )
    return EvalResult(family, outcomes)


RESULT_COLUMNS = ("model", "dataset", "fold", "beta", "roc", "ap", "nce", "rmse")


def write_results(results, dataset_name, csv_path, json_path=None):
    """Write per-fold metric rows as CSV, optionally mirrored as JSON."""
    with open(csv_path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(RESULT_COLUMNS)
        for result in results:
            for outcome in result.folds:
                writer.writerow([
                    result.family, dataset_name, outcome.fold, outcome.beta,
                    outcome.metrics.get("roc", ""), outcome.metrics.get("ap", ""),
                    outcome.metrics.get("nce", ""), outcome.metrics.get("rmse", ""),
                ])
    if json_path is not None:
        payload = {
            "dataset": dataset_name,
            "models": {
                result.family: {
                    "folds": [
                        {"fold": o.fold, "beta": o.beta, **o.metrics}
                        for o in result.folds
                    ],
                    "aggregates": result.summary(),
                }
                for result in results
            },
        }
        with open(json_path, "w") as handle:
            json.dump(payload, handle, indent=2)
