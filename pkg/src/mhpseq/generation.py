"""Closed-loop generation with split/merge tree inference.

Before the split, every step simulates a depth-``d`` tree with branching
factor M from the current trunk point. While the tree's last layer stays
compact the first layer is averaged into one point and appended. Once the
last layer spreads wider than ``split_threshold``, M root-to-leaf paths are
picked by angle and the trunk forks into M branches, each of which then
advances by averaging the M heads' proposals for its own state.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import ConvexHull, QhullError
from scipy.spatial.distance import pdist

from .errors import ContractViolation
from .recurrent import LstmState


@dataclass(frozen=True)
class InferenceConfig:
    tree_depth: int = 8
    total_steps: int = 20
    split_threshold: float = 5.0

    def __post_init__(self):
        if self.tree_depth < 1 or self.total_steps < 1:
            raise ContractViolation("tree_depth and total_steps must be >= 1")
        if not self.split_threshold > 0:
            raise ContractViolation("split_threshold must be positive")


@dataclass
class PredictionTree:
    """Complete M-ary tree stored layer by layer.

    ``points[k]`` holds the ``M**(k+1)`` coordinates at depth ``k+1``; node j
    of a layer is child ``j % M`` of node ``j // M`` one layer up. ``states[k]``
    is the recurrent state after consuming ``points[k]``; the last layer's
    states are only computed on request.
    """

    model: object
    root_point: np.ndarray
    root_state: LstmState
    num_hypotheses: int
    points: list = field(default_factory=list)
    states: list = field(default_factory=list)

    @property
    def depth(self):
        return len(self.points)

    @property
    def leaves(self):
        return self.points[-1]

    def path(self, leaf):
        """Coordinates from depth 1 down to ``leaf``: ``(d, 2)``."""
        idx = self.path_indices(leaf)
        return np.stack([self.points[k][i] for k, i in enumerate(idx)])

    def path_indices(self, leaf):
        idx = [int(leaf)]
        for _ in range(self.depth - 1):
            idx.append(idx[-1] // self.num_hypotheses)
        return idx[::-1]

    def node_state(self, layer, index):
        """State after consuming node ``index`` of depth ``layer + 1``."""
        if layer < len(self.states):
            s = self.states[layer]
            return LstmState(s.hidden[index], s.cell[index])
        parent = self.root_state if layer == 0 else self.node_state(layer - 1, index // self.num_hypotheses)
        return self.model.advance(parent, self.points[layer][index])


def build_tree(model, point, state, depth):
    """Expand every node with all M heads down to ``depth`` layers.

    ``state`` must be the recurrent state after consuming ``point``.
    """
    if depth < 1:
        raise ContractViolation("tree depth must be >= 1")
    M = model.num_hypotheses
    tree = PredictionTree(model, np.asarray(point, dtype=float), state, M)
    pts = np.asarray(point, dtype=float)[None]
    st = LstmState(np.asarray(state.hidden)[None], np.asarray(state.cell)[None])
    for k in range(depth):
        proposals = model.heads(st, pts)                      # (M, N, 2)
        children = np.swapaxes(proposals, 0, 1).reshape(-1, 2)  # parent-major order
        tree.points.append(children)
        if k == depth - 1:
            break
        parent_state = LstmState(np.repeat(st.hidden, M, axis=0), np.repeat(st.cell, M, axis=0))
        st = model.advance(parent_state, children)
        tree.states.append(st)
        pts = children
    return tree


def tree_diameter(points):
    """Largest pairwise Euclidean distance in a 2-D point set."""
    p = np.unique(np.asarray(points, dtype=float), axis=0)
    if len(p) < 2:
        return 0.0
    if len(p) > 64:
        try:
            p = p[ConvexHull(p).vertices]
        except QhullError:
            # collinear: the extremes along the principal direction are the diameter
            centred = p - p.mean(axis=0)
            axis = np.linalg.svd(centred, full_matrices=False)[2][0]
            proj = centred @ axis
            p = p[[np.argmin(proj), np.argmax(proj)]]
    return float(pdist(p).max())


def check_split(tree, threshold):
    return tree_diameter(tree.leaves) > threshold


def merge(points):
    """Component-wise mean, computed as an offset from the first point."""
    p = np.asarray(points, dtype=float)
    if len(p) == 0:
        raise ContractViolation("nothing to merge")
    return p[0] + (p - p[0]).mean(axis=0)


def _leaf_angles(leaves, current):
    d = np.asarray(leaves) - np.asarray(current)
    ang = np.arctan2(d[:, 1], d[:, 0])
    # measure relative to the mean direction so the range never straddles +-pi
    mean_dir = d.mean(axis=0)
    ref = np.arctan2(mean_dir[1], mean_dir[0]) if np.any(mean_dir) else 0.0
    return (ang - ref + np.pi) % (2 * np.pi) - np.pi + ref


def choose_tree_leaves(tree, current, M=None):
    """Leaf indices closest in angle to the midpoints of M equal angle ranges."""
    M = M or tree.num_hypotheses
    ang = _leaf_angles(tree.leaves, current)
    order = np.argsort(ang, kind="stable")
    sorted_ang = ang[order]
    lo, hi = sorted_ang[0], sorted_ang[-1]
    targets = lo + (np.arange(M) + 0.5) * (hi - lo) / M
    picks = [int(order[np.argmin(np.abs(sorted_ang - t))]) for t in targets]
    return picks


def choose_tree_paths(tree, current, M=None):
    """M root-to-leaf paths ``(d, 2)`` whose leaves evenly split the angle range."""
    return [tree.path(i) for i in choose_tree_leaves(tree, current, M)]


@dataclass
class InferenceResult:
    seed: np.ndarray
    trunk: np.ndarray          # (k, 2) merged points before the split
    branches: np.ndarray       # (M, l - k, 2), empty first axis when no split

    @property
    def did_split(self):
        return len(self.branches) > 0

    def hypotheses(self):
        """``(H, l, 2)`` generated points per hypothesis, trunk included."""
        if not self.did_split:
            return self.trunk[None]
        trunk = np.repeat(self.trunk[None], len(self.branches), axis=0)
        return np.concatenate([trunk, self.branches], axis=1)


def infer(model, seed, config):
    """Generate ``config.total_steps`` points after ``seed`` (split/merge tree inference)."""
    seed = np.asarray(seed, dtype=float)
    if seed.ndim != 2 or len(seed) == 0:
        raise ContractViolation("seed must be a non-empty (k, 2) sequence")
    d, l = config.tree_depth, config.total_steps
    state = model.encode(seed)
    point = seed[-1]
    trunk = []
    while len(trunk) < l:
        tree = build_tree(model, point, state, d)
        if model.num_hypotheses > 1 and check_split(tree, config.split_threshold):
            leaves = choose_tree_leaves(tree, point)
            take = min(d, l - len(trunk))
            paths = np.stack([tree.path(i)[:take] for i in leaves])
            states = [tree.node_state(take - 1, tree.path_indices(i)[take - 1]) for i in leaves]
            branch_state = LstmState(np.stack([s.hidden for s in states]), np.stack([s.cell for s in states]))
            return _follow_branches(model, seed, np.asarray(trunk).reshape(-1, 2), paths, branch_state, l)
        point = merge(tree.points[0])
        state = model.advance(state, point)
        trunk.append(point)
    return InferenceResult(seed, np.asarray(trunk).reshape(-1, 2), np.zeros((0, 0, 2)))


def _follow_branches(model, seed, trunk, paths, state, total):
    branches = [paths]
    length = len(trunk) + paths.shape[1]
    current = paths[:, -1]
    while length < total:
        proposals = model.heads(state, current)   # (M_heads, M_branches, 2)
        current = merge(proposals)
        state = model.advance(state, current)
        branches.append(current[:, None])
        length += 1
    return InferenceResult(seed, trunk, np.concatenate(branches, axis=1))


def closed_loop(model, seed, steps):
    """Plain closed-loop rollout feeding back the merged head output."""
    seed = np.asarray(seed, dtype=float)
    state, point, out = model.encode(seed), seed[-1], []
    for _ in range(steps):
        point = merge(model.heads(state, point))
        state = model.advance(state, point)
        out.append(point)
    return np.asarray(out)
