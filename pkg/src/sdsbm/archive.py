"""Fitted-model archives: one ``.npz`` file, exact round-trip.

Tensors are stored as raw float64 arrays and metadata as a JSON string, so
``load(save(m))`` reproduces every number bit for bit (Python floats survive
JSON round-trips exactly).
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError
from .model import BlockTensor, MembershipTensor
from .prior import PriorConfig

FORMAT_VERSION = 1
#: only this many trailing objective values are kept
TRACE_TAIL = 50


@dataclass
class ModelArchive:
    """Everything needed to score new events with a fitted model."""

    theta: MembershipTensor
    p: BlockTensor
    prior: PriorConfig
    p_mode: str
    seed: int
    node_keys: list = field(default_factory=list)
    label_keys: list = field(default_factory=list)
    t_min: float = 0.0
    slice_width: float = 1.0
    trace_tail: np.ndarray = field(default_factory=lambda: np.zeros(0))
    converged: bool = True

    @classmethod
    def from_fit(cls, report, node_keys=None, label_keys=None, t_min=0.0,
                 slice_width=1.0):
        """Package a fit report; default vocabularies are stringified dense ids."""
        theta = report.theta
        if node_keys is None:
            node_keys = [str(i) for i in range(theta.n_items)]
        if label_keys is None:
            label_keys = [str(o) for o in range(report.p.n_labels)]
        return cls(
            theta=theta,
            p=report.p,
            prior=report.config.prior,
            p_mode=report.config.p_mode,
            seed=report.config.seed,
            node_keys=list(node_keys),
            label_keys=list(label_keys),
            t_min=float(t_min),
            slice_width=float(slice_width),
            trace_tail=np.asarray(report.trace[-TRACE_TAIL:], dtype=float),
            converged=report.converged,
        )

    def save(self, path):
        meta = {
            "format_version": FORMAT_VERSION,
            "p_mode": self.p_mode,
            "seed": int(self.seed),
            "prior": {
                "beta_theta": self.prior.beta_theta,
                "beta_p": self.prior.beta_p,
                "kernel_exponent": self.prior.kernel_exponent,
                "window": self.prior.window,
            },
            "node_keys": [str(k) for k in self.node_keys],
            "label_keys": [str(k) for k in self.label_keys],
            "t_min": self.t_min,
            "slice_width": self.slice_width,
            "converged": bool(self.converged),
        }
        np.savez(
            path,
            theta=self.theta.values,
            p=self.p.values,
            trace_tail=np.asarray(self.trace_tail, dtype=float),
            meta=np.array(json.dumps(meta)),
        )

    @staticmethod
    def load(path):
        with np.load(path, allow_pickle=False) as payload:
            try:
                meta = json.loads(str(payload["meta"]))
                theta = payload["theta"]
                p = payload["p"]
                trace_tail = payload["trace_tail"]
            except KeyError as err:
                raise ContractError(f"not a model archive: missing {err}") from None
        if meta.get("format_version") != FORMAT_VERSION:
            raise ContractError(
                f"unsupported archive format {meta.get('format_version')!r}"
            )
        return ModelArchive(
            theta=MembershipTensor(theta),
            p=BlockTensor(p),
            prior=PriorConfig(**meta["prior"]),
            p_mode=meta["p_mode"],
            seed=meta["seed"],
            node_keys=meta["node_keys"],
            label_keys=meta["label_keys"],
            t_min=meta["t_min"],
            slice_width=meta["slice_width"],
            trace_tail=trace_tail,
            converged=meta["converged"],
        )

    def node_id(self, key):
        try:
            return self.node_keys.index(str(key))
        except ValueError:
            raise ContractError(f"unknown node key {key!r}") from None
