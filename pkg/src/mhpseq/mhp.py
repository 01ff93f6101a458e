"""Multiple-hypothesis meta-loss.

Each sample is assigned to the hypothesis with the lowest base loss (its
Voronoi cell). The winner is weighted ``1 - epsilon`` and every other
hypothesis ``epsilon / (M - 1)``, so losing hypotheses still drift toward
the data instead of dying at a bad initialisation.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .errors import ContractViolation


@dataclass(frozen=True)
class MhpConfig:
    num_hypotheses: int = 1
    epsilon: float = 0.15

    def __post_init__(self):
        if self.num_hypotheses < 1:
            raise ContractViolation("num_hypotheses must be >= 1")
        if not 0.0 <= self.epsilon < 1.0:
            raise ContractViolation("epsilon must lie in [0, 1)")


def assign_hypothesis(losses):
    """Index of the smallest loss; ties go to the lowest index."""
    values = np.asarray([float(nx.value(v)) for v in losses])
    if values.size == 0:
        raise ContractViolation("no hypothesis losses given")
    if not np.all(np.isfinite(values)):
        raise ContractViolation("hypothesis losses must be finite")
    return int(np.argmin(values))


def delta_weights(config, winner):
    M = config.num_hypotheses
    if not 0 <= winner < M:
        raise ContractViolation(f"winner {winner} out of range for M={M}")
    if M == 1:
        return np.ones(1)
    w = np.full(M, config.epsilon / (M - 1))
    w[winner] = 1.0 - config.epsilon
    return w


def weight_matrix(config, losses):
    """Per-row relaxed one-hot weights for a ``(..., M)`` array of losses."""
    losses = np.asarray(losses, dtype=float)
    M = config.num_hypotheses
    if losses.shape[-1] != M:
        raise ContractViolation(f"expected {M} hypothesis losses, got {losses.shape[-1]}")
    if M == 1:
        return np.ones_like(losses)
    winners = np.argmin(losses, axis=-1)
    w = np.full(losses.shape, config.epsilon / (M - 1))
    np.put_along_axis(w, winners[..., None], 1.0 - config.epsilon, axis=-1)
    return w


def meta_loss(config, per_hypothesis_losses):
    """Weighted sum of the M base losses.

    Each entry may be a scalar or a batch of per-sample losses (same shape
    for all hypotheses); the winner is chosen per sample from the detached
    values. Returns a Tensor when any input is one, otherwise an array.
    """
    losses = list(per_hypothesis_losses)
    if len(losses) != config.num_hypotheses:
        raise ContractViolation(
            f"expected {config.num_hypotheses} hypothesis losses, got {len(losses)}")
    stacked = nx.stack(losses, axis=-1)
    if not np.all(np.isfinite(stacked.data)):
        raise ContractViolation("hypothesis losses must be finite")
    weights = weight_matrix(config, stacked.data)
    out = (stacked * weights).sum(axis=-1)
    if any(isinstance(v, nx.Tensor) for v in losses):
        return out
    return out.data
