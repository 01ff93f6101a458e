"""Oracle, displacement and multi-modal (M2) metrics.

The M2 metric re-labels each sample with every label whose percentile box
(:class:`Polytope`) in input space contains it, then scores the prediction
set against that label set. Continuous labels are first discretised with
flat-kernel mean-shift; a label set then holds cluster centres.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import pdist

from .errors import ContractViolation
from .numerics import make_rng


def flatten(points):
    """``(..., k, 2)`` point sequences -> ``(..., 2k)`` as (x1, y1, ..., xk, yk)."""
    a = np.asarray(points, dtype=float)
    return a.reshape(a.shape[:-2] + (-1,))


def unflatten(vectors, dim=2):
    a = np.asarray(vectors, dtype=float)
    return a.reshape(a.shape[:-1] + (-1, dim))


# -- oracle and displacement -------------------------------------------------

def oracle_metric(metric, predictions, label):
    predictions = list(predictions)
    if not predictions:
        raise ContractViolation("oracle metric needs at least one prediction")
    return min(metric(x, label) for x in predictions)


def fde_ade(predicted, truth):
    p, t = np.asarray(predicted, dtype=float), np.asarray(truth, dtype=float)
    if p.shape != t.shape or p.ndim < 2 or p.shape[-2] < 1:
        raise ContractViolation(f"sequence shapes differ or are empty: {p.shape} vs {t.shape}")
    d = np.linalg.norm(p - t, axis=-1)
    return d[..., -1], d.mean(axis=-1)


def fde(predicted, truth):
    return fde_ade(predicted, truth)[0]


def ade(predicted, truth):
    return fde_ade(predicted, truth)[1]


# -- discrete re-labelling ---------------------------------------------------

@dataclass
class Polytope:
    class_id: object
    lower: np.ndarray
    upper: np.ndarray
    tau: float

    def contains(self, x):
        """Closed-box membership for one vector or a ``(N, D)`` batch."""
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.lower.shape[0]:
            raise ContractViolation(f"sample dimension {x.shape[-1]} != polytope dimension {self.lower.shape[0]}")
        return np.all((x >= self.lower) & (x <= self.upper), axis=-1)


def fit_polytope(samples, tau, class_id=None):
    """Per-dimension percentile box holding roughly a fraction ``tau`` of samples."""
    x = np.asarray(samples, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if len(x) == 0:
        raise ContractViolation("cannot fit a polytope to an empty class")
    if not 0.0 < tau <= 1.0:
        raise ContractViolation("tau must lie in (0, 1]")
    lo = np.percentile(x, 100.0 * (1.0 - tau) / 2.0, axis=0)
    hi = np.percentile(x, 100.0 * (1.0 + tau) / 2.0, axis=0)
    return Polytope(class_id, lo, hi, tau)


def fit_class_polytopes(samples, labels, tau):
    x, y = np.asarray(samples, dtype=float), np.asarray(labels)
    return {c: fit_polytope(x[y == c], tau, c) for c in sorted(set(y.tolist()))}


@dataclass
class RelabeledSample:
    index: int
    label_set: frozenset


def membership_matrix(samples, polytopes):
    """Bool ``(N, len(polytopes))``; column order follows the dict."""
    x = np.asarray(samples, dtype=float)
    return np.stack([p.contains(x) for p in polytopes.values()], axis=-1)


def relabel_discrete(samples, labels, polytopes):
    x = np.asarray(samples, dtype=float)
    inside = membership_matrix(x, polytopes)
    classes = list(polytopes)
    out = []
    for i, (y, row) in enumerate(zip(np.asarray(labels).tolist(), inside)):
        out.append(RelabeledSample(i, frozenset({y} | {c for c, hit in zip(classes, row) if hit})))
    return out


def label_mask_discrete(samples, labels, polytopes, num_classes):
    """Vectorised :func:`relabel_discrete` for integer classes: bool ``(N, C)``."""
    mask = np.zeros((len(labels), num_classes), dtype=bool)
    inside = membership_matrix(samples, polytopes)
    for col, c in enumerate(polytopes):
        mask[:, c] |= inside[:, col]
    mask[np.arange(len(labels)), np.asarray(labels)] = True
    return mask


# -- set-based precision / recall -------------------------------------------

def pr_re_m2(predicted, labels):
    f, Y = set(predicted), set(labels)
    if not f or not Y:
        raise ContractViolation("prediction and label sets must be non-empty")
    hit = len(f & Y)
    return hit / len(f), hit / len(Y)


def pr_re_m2_masks(predicted, labels):
    """Per-sample (precision, recall) for boolean set masks of shape ``(N, C)``."""
    f, Y = np.asarray(predicted, bool), np.asarray(labels, bool)
    nf, ny = f.sum(axis=-1), Y.sum(axis=-1)
    if np.any(nf == 0) or np.any(ny == 0):
        raise ContractViolation("prediction and label sets must be non-empty")
    hit = (f & Y).sum(axis=-1)
    return hit / nf, hit / ny


def f1(precision, recall):
    return 0.0 if precision + recall == 0 else 2.0 * precision * recall / (precision + recall)


# -- continuous labels -------------------------------------------------------

@dataclass
class ClusterModel:
    centers: np.ndarray
    labels: np.ndarray
    bandwidth: float

    @property
    def clusters(self):
        return [(c, np.flatnonzero(self.labels == k)) for k, c in enumerate(self.centers)]


def auto_bandwidth(points, seed=0, sample_size=500):
    """Half the median pairwise distance of a random subsample."""
    x = np.asarray(points, dtype=float)
    if len(x) > sample_size:
        x = x[make_rng(seed, "bandwidth").choice(len(x), sample_size, replace=False)]
    if len(x) < 2:
        return 1.0
    d = np.median(pdist(x))
    return 0.5 * d if d > 0 else 1.0


def _sq_dists(a, b):
    d = (a * a).sum(1)[:, None] + (b * b).sum(1)[None, :] - 2.0 * a @ b.T
    return np.maximum(d, 0.0)


def mean_shift(points, bandwidth="auto", max_iter=300, seed=0, chunk=1024):
    """Flat-kernel mean-shift started from every point.

    Each seed moves to the mean of the original points within ``bandwidth``
    until it moves less than ``1e-3 * bandwidth``. Modes closer than
    ``bandwidth / 2`` are merged (denser modes win) and every point joins
    the cluster of the mode its seed converged to.
    """
    x = np.asarray(points, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if len(x) == 0:
        raise ContractViolation("mean-shift needs at least one point")
    if bandwidth == "auto" or bandwidth is None:
        bandwidth = auto_bandwidth(x, seed)
    bandwidth = float(bandwidth)
    if bandwidth <= 0:
        raise ContractViolation("bandwidth must be positive")
    r2, tol = bandwidth ** 2, 1e-3 * bandwidth
    modes = x.copy()
    active = np.ones(len(x), dtype=bool)
    for _ in range(max_iter):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        for start in range(0, idx.size, chunk):
            sel = idx[start:start + chunk]
            near = (_sq_dists(modes[sel], x) <= r2).astype(float)
            count = near.sum(1, keepdims=True)
            new = np.where(count > 0, (near @ x) / np.maximum(count, 1.0), modes[sel])
            moved = np.linalg.norm(new - modes[sel], axis=1)
            modes[sel] = new
            active[sel] = moved >= tol
    density = (_sq_dists(modes, x) <= r2).sum(1) if len(x) <= 4 * chunk else _chunked_density(modes, x, r2, chunk)
    order = np.lexsort((np.arange(len(x)), -density))
    centers = []
    for i in order:
        if not centers or np.min(np.linalg.norm(np.asarray(centers) - modes[i], axis=1)) >= bandwidth / 2:
            centers.append(modes[i])
    centers = np.asarray(centers)
    labels = np.argmin(_sq_dists(modes, centers), axis=1)
    return ClusterModel(centers, labels, bandwidth)


def _chunked_density(modes, x, r2, chunk):
    return np.concatenate([(_sq_dists(modes[s:s + chunk], x) <= r2).sum(1) for s in range(0, len(modes), chunk)])


def fit_cluster_polytopes(inputs, cluster_model, tau):
    """Input-space box for each cluster from the inputs of its members."""
    x = np.asarray(inputs, dtype=float)
    return {k: fit_polytope(x[members], tau, k) for k, (_, members) in enumerate(cluster_model.clusters)}


def assign_clusters(cluster_model, points):
    """Index of the nearest cluster centre for each flattened label."""
    x = np.asarray(points, dtype=float)
    return np.argmin(_sq_dists(x, cluster_model.centers), axis=1)


def relabel_continuous(samples, cluster_model, polytopes, own_cluster):
    """Label sets of cluster ids whose input polytope holds the sample.

    ``own_cluster[i]`` is sample i's cluster, used when no polytope holds it.
    Centres are looked up with :func:`label_centers`.
    """
    x = np.asarray(samples, dtype=float)
    inside = membership_matrix(x, polytopes)
    keys = list(polytopes)
    out = []
    for i, row in enumerate(inside):
        ks = [k for k, hit in zip(keys, row) if hit] or [own_cluster[i]]
        out.append(RelabeledSample(i, frozenset(int(k) for k in ks)))
    return out


def label_centers(relabeled, cluster_model):
    """Cluster-centre arrays for each re-labelled sample."""
    return [cluster_model.centers[sorted(r.label_set)] for r in relabeled]


def l_m2(metric, predictions, labels):
    """Symmetric set distance: each prediction to its nearest label and back."""
    f, Y = list(predictions), list(labels)
    if not f or not Y:
        raise ContractViolation("prediction and label sets must be non-empty")
    D = np.array([[metric(x, y) for y in Y] for x in f], dtype=float)
    return (D.min(axis=1).sum() + D.min(axis=0).sum()) / (len(f) + len(Y))
