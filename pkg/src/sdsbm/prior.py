"""Temporal Dirichlet prior: epoch coupling kernel and neighbour averages.

Each epoch's parameter rows get a Dirichlet prior whose concentration is
``1 + beta * <x>``, where ``<x>`` is a kernel-weighted average of the same
rows at the other epochs.  The kernel weighs epoch t' seen from epoch t as
``N_{t'} / |t - t'|**a``: heavily observed nearby epochs dominate.  With
``beta = 0`` the prior is uniform and every epoch decouples.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError

#: epochs whose neighbour weights all vanish fall back to a uniform row and
#: contribute no prior pull (the uniform prior is exactly the beta=0 prior)
FALLBACK_NOTE = "no-neighbour fallback"


@dataclass(frozen=True)
class PriorConfig:
    """Temporal prior settings.

    beta_theta, beta_p : float
        Coupling strengths for the membership and block-interaction families.
        Zero switches the corresponding prior off.
    kernel_exponent : int
        Power ``a`` in ``N_{t'} / |t - t'|**a``; must be >= 1.
    window : int or None
        When set, epochs farther than ``window`` slices contribute nothing.
    """

    beta_theta: float = 0.0
    beta_p: float = 0.0
    kernel_exponent: int = 1
    window: int | None = None

    def __post_init__(self):
        for name in ("beta_theta", "beta_p"):
            b = getattr(self, name)
            if not np.isfinite(b) or b < 0:
                raise ContractError(f"{name} must be finite and >= 0, got {b}")
        a = self.kernel_exponent
        if not float(a).is_integer() or a < 1:
            raise ContractError(f"kernel_exponent must be an integer >= 1, got {a}")
        if self.window is not None and self.window < 1:
            raise ContractError(f"window must be >= 1 when given, got {self.window}")

    def beta_for(self, family):
        if family == "theta":
            return self.beta_theta
        if family == "p":
            return self.beta_p
        raise ContractError(f"unknown parameter family {family!r}")


@dataclass(frozen=True)
class NeighbourAverage:
    """Kernel-weighted average of one epoch's parameter slice over the others.

    ``values`` matches the slice shape; ``fallback`` is True when no neighbour
    carried any weight and a uniform slice was substituted.
    """

    values: np.ndarray
    fallback: bool


@dataclass(frozen=True)
class DirichletMode:
    """Mode of a Dirichlet density; ``uniform`` flags the flat (all-ones) case."""

    values: np.ndarray
    uniform: bool


def kernel_weight(t, t_prime, counts, exponent=1):
    """Weight of epoch ``t_prime`` seen from epoch ``t``: N_{t'} / |t - t'|**a.

    Zero when epoch ``t_prime`` is empty.  ``t == t_prime`` is a contract
    violation: an epoch is never its own neighbour.  Window truncation is not
    the kernel's business; it is applied where neighbours are averaged.
    """
    if t == t_prime:
        raise ContractError("kernel_weight requires t != t_prime")
    counts = np.asarray(counts)
    if not 0 <= t_prime < counts.size:
        raise ContractError(f"epoch {t_prime} out of range [0, {counts.size})")
    a = int(exponent)
    if a != exponent or a < 1:
        raise ContractError(f"kernel exponent must be an integer >= 1, got {exponent}")
    gap = abs(int(t) - int(t_prime))
    return float(counts[t_prime]) / gap ** a


class TemporalCoupling:
    """Row-normalized neighbour weights for all epochs at once.

    Precomputes the (T, T) matrix A with ``A[t, t'] ∝ kernel_weight(t, t')``
    and rows normalized to 1, so that ``A @ x`` gives every epoch's neighbour
    average in one product.  Rows whose weights all vanish are flagged and
    produce uniform slices.
    """

    def __init__(self, counts, config):
        counts = np.asarray(counts, dtype=float).ravel()
        if counts.size < 1:
            raise ContractError("need at least one epoch")
        if np.any(counts < 0):
            raise ContractError("epoch counts must be >= 0")
        t_idx = np.arange(counts.size)
        gap = np.abs(t_idx[:, None] - t_idx[None, :])
        # the diagonal divides by gap 0 and is discarded right after
        with np.errstate(divide="ignore", invalid="ignore"):
            w = counts[None, :] / gap.astype(float) ** config.kernel_exponent
        np.fill_diagonal(w, 0.0)
        if config.window is not None:
            w[gap > config.window] = 0.0
        row_sums = w.sum(axis=1)
        self.fallback = row_sums == 0
        safe = np.where(self.fallback, 1.0, row_sums)
        self.matrix = w / safe[:, None]
        self.matrix[self.fallback] = 0.0
        self.n_epochs = counts.size

    def average(self, param):
        """Neighbour average of a (T, ...) parameter tensor.

        Returns ``(values, fallback)`` where values has param's shape with
        uniform slices at flagged epochs, and fallback is the (T,) bool mask.
        """
        param = np.asarray(param, dtype=float)
        if param.shape[0] != self.n_epochs:
            raise ContractError(
                f"parameter has {param.shape[0]} epochs, coupling has {self.n_epochs}"
            )
        out = (self.matrix @ param.reshape(self.n_epochs, -1)).reshape(param.shape)
        if self.fallback.any():
            out[self.fallback] = 1.0 / param.shape[-1]
        return out, self.fallback.copy()


def neighbour_average(param, counts, config, t):
    """Kernel-weighted average of epoch t's parameter slice over all others.

    Parameters
    ----------
    param : (T, ...) array
        Full per-epoch parameter tensor (e.g. memberships (T, I, K)).
    counts : (T,) array of int
        Global observation count of every epoch (kernel numerators).
    config : PriorConfig
    t : int
        Target epoch.

    Returns
    -------
    NeighbourAverage
        Slice-shaped values; uniform slice with ``fallback=True`` when no
        neighbour carries weight (single epoch, empty neighbours, or window
        excludes everything).
    """
    param = np.asarray(param, dtype=float)
    counts = np.asarray(counts)
    if param.shape[0] != counts.size:
        raise ContractError("param and counts disagree on the number of epochs")
    if not 0 <= t < counts.size:
        raise ContractError(f"epoch {t} out of range [0, {counts.size})")
    weights = np.zeros(counts.size)
    for tp in range(counts.size):
        if tp == t:
            continue
        if config.window is not None and abs(tp - t) > config.window:
            continue
        weights[tp] = kernel_weight(t, tp, counts, config.kernel_exponent)
    total = weights.sum()
    if total == 0:
        return NeighbourAverage(np.full(param.shape[1:], 1.0 / param.shape[-1]), True)
    values = np.tensordot(weights / total, param, axes=(0, 0))
    return NeighbourAverage(values, False)


def concentration(param, counts, config, t, family="theta"):
    """Dirichlet concentration for epoch t: ``1 + beta * neighbour average``.

    ``family`` picks which beta applies ("theta" or "p").  With beta = 0 this
    is exactly the flat all-ones concentration.
    """
    beta = config.beta_for(family)
    avg = neighbour_average(param, counts, config, t)
    return 1.0 + beta * avg.values


def dirichlet_mode(alpha):
    """Mode of a Dirichlet density: ``(alpha - 1) / sum(alpha - 1)``.

    Accepts concentrations with every entry >= 1 (entries equal to 1 put the
    mode on the corresponding boundary face), or a symmetric vector.  The flat
    vector (all ones) has no unique mode; a uniform vector is returned with
    ``uniform=True``, likewise for symmetric concentrations below 1.
    """
    alpha = np.asarray(alpha, dtype=float).ravel()
    if alpha.size < 1 or not np.all(np.isfinite(alpha)):
        raise ContractError("concentration must be a non-empty finite vector")
    excess = alpha - 1.0
    total = excess.sum()
    uniform = np.full(alpha.size, 1.0 / alpha.size)
    if abs(total) <= 1e-12 * alpha.size:
        if not np.allclose(alpha, 1.0, atol=1e-9):
            raise ContractError("concentration with zero excess must be all ones")
        return DirichletMode(uniform, True)
    if np.all(excess >= 0):
        return DirichletMode(excess / total, False)
    if np.all(alpha == alpha[0]):
        return DirichletMode(uniform, True)
    raise ContractError(
        "concentration must have all entries >= 1 or be symmetric; "
        f"got {alpha.tolist()}"
    )
