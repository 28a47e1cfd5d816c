"""Partition-of-unity gates over torus coordinates.

Gates depend on position only. `GatingNetwork` maps the sin/cos embedding of
the torus angles through a tanh MLP to softmax weights; `FixedGates` replays
weights given once; `DomainGates` builds per-sample [inside, outside] gates
from each sample's domain mask.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from . import diffcore as dc
from .errors import ShapeError, ValidationError
from .experts import apply_mlp, init_mlp
from .spectral import GridSpec

PARTITION_TOL = 1e-9


def embed_coords(theta) -> np.ndarray:
    """[sin theta_1..sin theta_d, cos theta_1..cos theta_d] along the last axis."""
    theta = np.asarray(theta, dtype=np.float64)
    if theta.ndim == 0:
        theta = theta[None]
    return np.concatenate([np.sin(theta), np.cos(theta)], axis=-1)


def grid_angles(grid: GridSpec) -> np.ndarray:
    """Torus angles 2pi (x - origin) / L at every grid point, shape (n..., d)."""
    return np.stack(np.meshgrid(*grid.angles(), indexing="ij"), axis=-1)


@dataclass
class GatingNetwork:
    grid: GridSpec
    n_experts: int
    hidden: tuple = (64, 64)
    prefix: str = "gate."

    def __post_init__(self):
        if self.n_experts < 1:
            raise ValidationError(f"gating: need at least one expert, got {self.n_experts}")
        self.hidden = tuple(self.hidden)
        self.features = embed_coords(grid_angles(self.grid))

    def _sizes(self):
        return (2 * self.grid.d, *self.hidden, self.n_experts)

    def init(self, rng: np.random.Generator) -> dict:
        # zero logits head: uniform gates at start
        return init_mlp(rng, self.prefix, self._sizes(), zero_last=True)

    def forward(self, tape: dc.Tape, params: Mapping[str, dc.Var], masks=None) -> dc.Var:
        logits = apply_mlp(params, self.prefix, tape.constant(self.features), len(self._sizes()) - 1)
        return dc.softmax(logits, axis=-1)


@dataclass
class FixedGates:
    """Gates given as weights of shape (I, n...) that sum to one pointwise."""

    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if np.any(w < 0.0):
            raise ValidationError("fixed gates: weights must be nonnegative")
        dev = float(np.max(np.abs(w.sum(axis=0) - 1.0)))
        if dev > PARTITION_TOL:
            raise ValidationError(f"fixed gates: pointwise sum deviates from 1 by {dev:.3g}")
        self.weights = np.moveaxis(w, 0, -1)

    @property
    def n_experts(self) -> int:
        return self.weights.shape[-1]

    def init(self, rng: np.random.Generator) -> dict:
        return {}

    def forward(self, tape: dc.Tape, params, masks=None) -> dc.Var:
        return tape.constant(self.weights)


def fixed_gates(masks: Sequence[np.ndarray]) -> FixedGates:
    return FixedGates(np.stack([np.asarray(m, dtype=np.float64) for m in masks]))


@dataclass
class DomainGates:
    """Per-sample gates [mask, 1 - mask]: expert 0 inside X, expert 1 outside."""

    n_experts: int = 2

    def __post_init__(self):
        if self.n_experts != 2:
            raise ValidationError(f"domain gates: exactly two experts, got {self.n_experts}")

    def init(self, rng: np.random.Generator) -> dict:
        return {}

    def forward(self, tape: dc.Tape, params, masks=None) -> dc.Var:
        if masks is None:
            raise ValidationError("domain gates: per-sample masks are required")
        m = np.asarray(masks, dtype=np.float64)[..., None]
        return tape.constant(np.concatenate([m, 1.0 - m], axis=-1))


def gate_weights(gating, params: Mapping[str, np.ndarray] | None = None, masks=None) -> np.ndarray:
    """Evaluate gates to an array of shape (n..., I) (or (B, n..., I) for domain gates)."""
    tape = dc.Tape()
    leaves = {k: tape.constant(v) for k, v in (params or {}).items()}
    return gating.forward(tape, leaves, masks).value


def check_partition(weights: np.ndarray, tol: float = 1e-12) -> None:
    if weights.ndim < 2:
        raise ShapeError(f"gates: expected an expert axis, got shape {weights.shape}")
    dev = float(np.max(np.abs(weights.sum(axis=-1) - 1.0)))
    if dev > tol or float(weights.min()) < 0.0:
        raise ValidationError(f"gates: not a partition of unity (sum deviation {dev:.3g}, min {weights.min():.3g})")
