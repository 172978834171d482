"""EM inference for dynamic mixed-membership parameters.

Each iteration computes neighbour averages from the current parameters, makes
one pass over the observations to accumulate responsibility sums, applies the
closed-form coordinate updates, and evaluates the objective.  With zero
coupling the updates are the plain per-epoch maximum-likelihood ones and every
epoch decouples; with positive coupling the numerator gains ``beta * <x>`` and
the denominator ``beta``, pulling each row toward its neighbour average.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .errors import ContractError, DegenerateParameterError
from .model import (
    BlockTensor,
    MembershipTensor,
    _arrays,
    _check_triplet,
    log_posterior,
)
from .prior import PriorConfig, TemporalCoupling

_log = logging.getLogger(__name__)

#: updated probabilities are floored here, then rows renormalized
PROB_FLOOR = 1e-12
#: observations stream through the E-step in blocks of this many unique triplets
CHUNK = 1 << 16

P_MODES = ("dynamic", "static", "fixed")


@dataclass(frozen=True)
class FitConfig:
    """Settings for one model fit.

    n_clusters : int
        Number of latent clusters K.
    prior : PriorConfig
        Temporal coupling; the default has both betas at zero.
    p_mode : {"dynamic", "static", "fixed"}
        Per-epoch block slices, a single inferred slice shared by all epochs,
        or a caller-supplied tensor that is never updated.
    fixed_p : BlockTensor or array, only with ``p_mode="fixed"``
    max_iterations, tol : stop after this many iterations or once the
        relative objective change drops below ``tol``, whichever is first.
    restarts : independent EM chains; the best final objective wins.
    seed : every chain and epoch slice draws its start from a stream derived
        from (seed, restart, epoch), so fits are reproducible bit for bit.
    """

    n_clusters: int
    prior: PriorConfig = field(default_factory=PriorConfig)
    p_mode: str = "dynamic"
    fixed_p: Any = None
    max_iterations: int = 200
    tol: float = 1e-6
    restarts: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.n_clusters < 1:
            raise ContractError(f"n_clusters must be >= 1, got {self.n_clusters}")
        if self.max_iterations < 1:
            raise ContractError("max_iterations must be >= 1")
        if not self.tol > 0:
            raise ContractError("tol must be > 0")
        if self.restarts < 1:
            raise ContractError("restarts must be >= 1")
        if self.p_mode not in P_MODES:
            raise ContractError(f"p_mode must be one of {P_MODES}, got {self.p_mode!r}")
        if (self.fixed_p is None) != (self.p_mode != "fixed"):
            raise ContractError("fixed_p is required exactly when p_mode='fixed'")


@dataclass
class FitReport:
    """Outcome of a fit: tensors of the winning restart plus its history."""

    theta: MembershipTensor
    p: BlockTensor
    trace: np.ndarray
    n_iterations: int
    converged: bool
    best_restart: int
    diagnostics: dict
    config: FitConfig

    @property
    def objective(self):
        return float(self.trace[-1])


def responsibilities(theta, p, node, label, epoch):
    """Posterior cluster weights of one observation, a length-K simplex vector.

    Entry k is ``theta[t, i, k] * p_k(o)`` renormalized over clusters.  A zero
    normalizer means the observation is impossible under the parameters and
    raises DegenerateParameterError carrying the triplet.
    """
    th, pv = _arrays(theta, p)
    t_p = _check_triplet(th, pv, node, label, epoch)
    weights = th[epoch, node] * pv[t_p, :, label]
    total = weights.sum()
    if total <= 0:
        raise DegenerateParameterError(node, label, epoch)
    return weights / total


def _floor_rows(x):
    np.maximum(x, PROB_FLOOR, out=x)
    x /= x.sum(axis=-1, keepdims=True)
    return x


def _update_theta(omega_sums, item_epoch_counts, avg, fallback, beta, previous=None):
    """Membership update: (omega sums + beta*<theta>) / (N_{i,t} + beta).

    ``beta`` is dropped at fallback epochs (their prior is uniform).  Rows with
    a zero denominator — no observations and no prior pull — keep their
    previous value (uniform without one).
    """
    T, I, K = omega_sums.shape
    if beta > 0:
        if avg is None:
            raise ContractError("neighbour averages are required when beta > 0")
        beta_t = np.where(fallback, 0.0, beta)
        numer = omega_sums + beta_t[:, None, None] * avg
        denom = item_epoch_counts + beta_t[:, None]
    else:
        numer = omega_sums.copy()
        denom = np.asarray(item_epoch_counts, dtype=float)
    dead = denom == 0
    out = numer / np.where(dead, 1.0, denom)[:, :, None]
    if dead.any():
        out[dead] = (1.0 / K) if previous is None else previous[dead]
    return _floor_rows(out)


def _update_p_dynamic(omega_sums, avg, fallback, beta):
    """Per-epoch block update; denominators restricted to the slice's own epoch."""
    T, K, O = omega_sums.shape
    if beta > 0:
        if avg is None:
            raise ContractError("neighbour averages are required when beta > 0")
        beta_t = np.where(fallback, 0.0, beta)
        numer = omega_sums + beta_t[:, None, None] * avg
        denom = omega_sums.sum(axis=2) + beta_t[:, None]
    else:
        numer = omega_sums.copy()
        denom = omega_sums.sum(axis=2)
    dead = denom == 0
    out = numer / np.where(dead, 1.0, denom)[:, :, None]
    if dead.any():
        out[dead] = 1.0 / O
    return _floor_rows(out), int(dead.sum())


def _update_p_static(omega_sums):
    """Single shared block slice: responsibility sums pooled over all epochs."""
    pooled = omega_sums.sum(axis=0, keepdims=True)
    O = pooled.shape[2]
    denom = pooled.sum(axis=2)
    dead = denom == 0
    out = pooled / np.where(dead, 1.0, denom)[:, :, None]
    if dead.any():
        out[dead] = 1.0 / O
    return _floor_rows(out), int(dead.sum())


def m_step_theta(data, omega_sums, averages, prior, previous=None):
    """Coordinate update of the membership tensor.

    Parameters
    ----------
    data : Dataset
    omega_sums : (T, I, K) array
        Responsibility sums per (epoch, item, cluster).
    averages : (values, fallback) pair from ``TemporalCoupling.average``, or
        None when the membership coupling is zero.
    prior : PriorConfig
    previous : optional (T, I, K) array used for rows with no data and no pull.
    """
    omega_sums = np.asarray(omega_sums, dtype=float)
    T, I, K = omega_sums.shape
    if T != data.n_epochs or I != data.n_items:
        raise ContractError("omega sums do not match the data extents")
    avg, fallback = averages if averages is not None else (None, None)
    out = _update_theta(
        omega_sums, data.item_epoch_counts.astype(float), avg, fallback,
        prior.beta_theta, previous,
    )
    return MembershipTensor(out)


def m_step_p(data, omega_sums, averages, prior, mode="dynamic", current=None):
    """Coordinate update of the block tensor for the requested mode.

    ``dynamic`` updates one slice per epoch, ``static`` pools every epoch into
    a single slice (no temporal prior applies to it), ``fixed`` returns
    ``current`` untouched.  Clusters whose responsibility mass and prior pull
    are both zero are reset to uniform rows and counted in the log.
    """
    if mode not in P_MODES:
        raise ContractError(f"mode must be one of {P_MODES}, got {mode!r}")
    if mode == "fixed":
        if current is None:
            raise ContractError("fixed mode requires the current block tensor")
        return current if isinstance(current, BlockTensor) else BlockTensor(current)
    omega_sums = np.asarray(omega_sums, dtype=float)
    if omega_sums.ndim != 3 or omega_sums.shape[2] != data.n_labels:
        raise ContractError("omega sums must be (T, K, O) matching the data labels")
    if mode == "static":
        out, dead = _update_p_static(omega_sums)
    else:
        avg, fallback = averages if averages is not None else (None, None)
        out, dead = _update_p_dynamic(omega_sums, avg, fallback, prior.beta_p)
    if dead:
        _log.warning("dead cluster: %d block rows reset to uniform", dead)
    return BlockTensor(out)


class _Problem:
    """Immutable per-fit views: compressed triplets, counts, coupling."""

    def __init__(self, data, config):
        self.data = data
        self.epochs_u, self.nodes_u, self.labels_u, w = data.compressed()
        self.weights = w.astype(float)
        self.item_epoch_counts = data.item_epoch_counts.astype(float)
        self.coupling = TemporalCoupling(data.epoch_counts, config.prior)
        self.n_epochs = data.n_epochs
        self.n_items = data.n_items
        self.n_labels = data.n_labels


def _accumulate(theta, p, problem):
    """One pass over the observations: responsibility sums for both families.

    Streams fixed-size blocks so memory stays flat in the number of
    observations; partial sums merge by addition, so sharding the pass over
    triplet ranges changes nothing beyond float associativity.
    """
    T, I, K = theta.shape
    O = problem.n_labels
    static_p = p.shape[0] == 1
    s_theta = np.zeros((T * I, K))
    n_rows = O if static_p else T * O
    s_p = np.zeros((n_rows, K))
    p0t = p[0].T if static_p else None
    for start in range(0, problem.weights.size, CHUNK):
        sl = slice(start, start + CHUNK)
        t = problem.epochs_u[sl]
        i = problem.nodes_u[sl]
        o = problem.labels_u[sl]
        omega = theta[t, i, :] * (p0t[o] if static_p else p[t, :, o])
        denom = omega.sum(axis=1)
        if np.any(denom <= 0.0):
            u = int(np.argmax(denom <= 0.0))
            raise DegenerateParameterError(int(i[u]), int(o[u]), int(t[u]))
        omega *= (problem.weights[sl] / denom)[:, None]
        flat_ti = t * I + i
        flat_to = o if static_p else t * O + o
        for k in range(K):
            s_theta[:, k] += np.bincount(flat_ti, weights=omega[:, k], minlength=T * I)
            s_p[:, k] += np.bincount(flat_to, weights=omega[:, k], minlength=n_rows)
    s_p = s_p.reshape(1 if static_p else T, O, K).transpose(0, 2, 1)
    return s_theta.reshape(T, I, K), s_p


def _initial(problem, config, restart):
    """Dirichlet(1) start for every epoch slice, streams keyed by (seed, restart, epoch)."""
    T, I, O = problem.n_epochs, problem.n_items, problem.n_labels
    K = config.n_clusters
    theta = np.empty((T, I, K))
    p = np.empty((T, K, O)) if config.p_mode == "dynamic" else None
    for t in range(T):
        rng = np.random.default_rng(
            np.random.SeedSequence(config.seed, spawn_key=(restart, t))
        )
        theta[t] = rng.dirichlet(np.ones(K), size=I)
        if p is not None:
            p[t] = rng.dirichlet(np.ones(O), size=K)
    if config.p_mode == "static":
        rng = np.random.default_rng(
            np.random.SeedSequence(config.seed, spawn_key=(restart, T))
        )
        p = rng.dirichlet(np.ones(O), size=K)[None]
    elif config.p_mode == "fixed":
        fixed = config.fixed_p
        p = fixed.values if isinstance(fixed, BlockTensor) else BlockTensor(fixed).values
    return theta, p


def _run_chain(problem, config, restart):
    theta, p = _initial(problem, config, restart)
    prior = config.prior
    coupling = problem.coupling
    T = problem.n_epochs
    update_p = config.p_mode != "fixed"
    trace = []
    dead_total = 0
    converged = False
    started = time.perf_counter()
    for _ in range(config.max_iterations):
        avg_theta = coupling.average(theta) if prior.beta_theta > 0 else None
        avg_p = None
        if update_p and config.p_mode == "dynamic" and prior.beta_p > 0:
            avg_p = coupling.average(p)
        s_theta, s_p = _accumulate(theta, p, problem)
        theta = _update_theta(
            s_theta, problem.item_epoch_counts,
            avg_theta[0] if avg_theta else None, coupling.fallback,
            prior.beta_theta, theta,
        )
        if config.p_mode == "dynamic":
            p, dead = _update_p_dynamic(
                s_p, avg_p[0] if avg_p else None, coupling.fallback, prior.beta_p
            )
            dead_total += dead
        elif config.p_mode == "static":
            p, dead = _update_p_static(s_p)
            dead_total += dead
        objective = log_posterior(theta, p, problem.data, prior, coupling=coupling)
        trace.append(objective)
        if len(trace) > 1:
            rel = abs(trace[-1] - trace[-2]) / max(abs(trace[-2]), 1e-12)
            if rel < config.tol:
                converged = True
                break
    elapsed = time.perf_counter() - started
    return {
        "theta": theta,
        "p": p,
        "trace": np.asarray(trace),
        "objective": trace[-1],
        "converged": converged,
        "dead_clusters": dead_total,
        "seconds": elapsed,
    }


def fit(data, config):
    """Run ``config.restarts`` EM chains on ``data`` and keep the best.

    Restarts that hit degenerate parameters are aborted, logged and counted;
    the fit fails only if every chain aborts.  Returns a FitReport whose trace
    belongs to the winning restart.
    """
    if config.p_mode == "fixed":
        fixed = config.fixed_p
        pv = fixed.values if isinstance(fixed, BlockTensor) else BlockTensor(fixed).values
        if pv.shape[1] != config.n_clusters or pv.shape[2] != data.n_labels:
            raise ContractError(
                f"fixed block tensor is {pv.shape[1]}x{pv.shape[2]}, "
                f"need K={config.n_clusters}, O={data.n_labels}"
            )
        if pv.shape[0] not in (1, data.n_epochs):
            raise ContractError(
                f"fixed block tensor must have 1 or {data.n_epochs} epochs"
            )
    problem = _Problem(data, config)
    best = None
    best_restart = -1
    aborted = 0
    last_error = None
    for restart in range(config.restarts):
        try:
            result = _run_chain(problem, config, restart)
        except DegenerateParameterError as err:
            aborted += 1
            last_error = err
            _log.warning("restart %d aborted on degenerate parameters: %s", restart, err)
            continue
        if best is None or result["objective"] > best["objective"]:
            best = result
            best_restart = restart
    if best is None:
        raise last_error
    diagnostics = {
        "aborted_restarts": aborted,
        "dead_cluster_resets": best["dead_clusters"],
        "fallback_epochs": int(problem.coupling.fallback.sum()),
        "seconds_per_iteration": best["seconds"] / max(len(best["trace"]), 1),
    }
    if best["dead_clusters"]:
        _log.warning(
            "winning restart reset %d dead cluster rows", best["dead_clusters"]
        )
    return FitReport(
        theta=MembershipTensor(best["theta"]),
        p=BlockTensor(best["p"]),
        trace=best["trace"],
        n_iterations=len(best["trace"]),
        converged=best["converged"],
        best_restart=best_restart,
        diagnostics=diagnostics,
        config=config,
    )
