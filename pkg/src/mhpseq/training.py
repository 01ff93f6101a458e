"""Single optimisation steps for MHP models and the MCL ensemble."""
from __future__ import annotations

import numpy as np

from . import numerics as nx
from .errors import ContractViolation
from .mhp import MhpConfig, meta_loss

CLIP_NORM = 5.0


def train_step(model, x, y, config, opt_state, clip_norm=CLIP_NORM):
    """Meta-loss step on one mini-batch.

    Returns ``(model, opt_state, batch_mean_meta_loss)``.
    """
    if len(x) == 0:
        raise ContractViolation("empty batch")
    if config.num_hypotheses != model.num_hypotheses:
        raise ContractViolation("config and model disagree on the number of hypotheses")
    graph = nx.Graph()
    view = model.bind(graph)
    losses = model.hypothesis_losses(view, x, y)
    total = meta_loss(config, losses).mean()
    grads = nx.clip_by_global_norm(nx.backward(graph, total), clip_norm)
    params, opt_state = nx.adam_step(model.params, grads, opt_state)
    return model.with_params(params), opt_state, float(total.data)


def hypothesis_loss_matrix(model, x, y):
    """Per-sample base losses without recording a graph: ``(B, M)``."""
    return np.stack([nx.value(v) for v in model.hypothesis_losses(model.params, x, y)], axis=-1)


def ensemble_loss_matrix(ensemble, x, y):
    return np.concatenate([hypothesis_loss_matrix(m, x, y) for m in ensemble.members], axis=-1)


def mcl_train_step(ensemble, x, y, opt_states, clip_norm=CLIP_NORM):
    """Winner-only step: each sample's gradient goes to its best member.

    The batch loss is ``mean_i min_k L_k(i)``; member k is re-run on the
    samples it won and receives the gradient of its share of that mean.
    Members that won nothing are left untouched this step.
    """
    if len(x) == 0:
        raise ContractViolation("empty batch")
    x, y = np.asarray(x), (None if y is None else np.asarray(y))
    B = len(x)
    losses = ensemble_loss_matrix(ensemble, x, y)
    winners = np.argmin(losses, axis=-1)
    members, states = list(ensemble.members), list(opt_states)
    for k, member in enumerate(members):
        idx = np.flatnonzero(winners == k)
        if idx.size == 0:
            continue
        graph = nx.Graph()
        view = member.bind(graph)
        (loss_k,) = member.hypothesis_losses(view, x[idx], None if y is None else y[idx])
        total = loss_k.sum() * (1.0 / B)
        grads = nx.clip_by_global_norm(nx.backward(graph, total), clip_norm)
        params, states[k] = nx.adam_step(member.params, grads, states[k])
        members[k] = member.with_params(params)
    return type(ensemble)(members), states, float(losses.min(axis=-1).mean())


def mean_meta_loss(model, x, y, config, batch_size=256):
    """Dataset-mean meta-loss and oracle (best-hypothesis) loss, no gradients."""
    meta, oracle, n = 0.0, 0.0, len(x)
    for start in range(0, n, batch_size):
        xb = x[start:start + batch_size]
        yb = None if y is None else y[start:start + batch_size]
        if hasattr(model, "members"):
            L = ensemble_loss_matrix(model, xb, yb)
            m = L.min(axis=-1)
        else:
            L = hypothesis_loss_matrix(model, xb, yb)
            m = meta_loss(config, list(L.T))
        meta += float(np.sum(m))
        oracle += float(L.min(axis=-1).sum())
    return meta / n, oracle / n
