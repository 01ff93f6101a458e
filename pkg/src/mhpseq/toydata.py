"""Synthetic three-way intersection traffic.

Vehicles start at ``(0, -L)``, drive north to the junction at the origin and
then turn left (west), go straight (north) or turn right (east), rounding a
quarter circle of radius ``r`` for the turns. Points are spaced at a constant
nominal speed along that path and perturbed with i.i.d. Gaussian noise of
standard deviation ``noise_frac * L``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ContractViolation
from .numerics import make_rng

LEFT, STRAIGHT, RIGHT = 0, 1, 2
CLASS_NAMES = ("L", "S", "R")


@dataclass(frozen=True)
class IntersectionGeometry:
    approach_length: float = 100.0
    turn_radius: float = 10.0
    speed: float = 2.0
    noise_frac: float = 0.015

    @property
    def noise_sigma(self):
        return self.noise_frac * self.approach_length


@dataclass(frozen=True)
class TaskPreset:
    points: int
    geometry: IntersectionGeometry
    prefix: int = 0


# The junction is placed so that the first ~half of each trajectory is
# shared by all three destinations; for prediction all 30 observed points
# lie before the fork.
TASKS = {
    "toy-classification": TaskPreset(75, IntersectionGeometry(approach_length=80.0)),
    "toy-prediction": TaskPreset(60, IntersectionGeometry(approach_length=80.0), prefix=30),
    "toy-generation": TaskPreset(25, IntersectionGeometry(approach_length=30.0), prefix=5),
}


@dataclass
class Trajectory:
    points: np.ndarray
    destination: int
    id: int = 0


@dataclass
class SequenceSample:
    input: np.ndarray
    target: np.ndarray
    split_index: int = 0
    id: int = 0


@dataclass
class DatasetSplit:
    train: list = field(default_factory=list)
    validation: list = field(default_factory=list)
    test: list = field(default_factory=list)


def path_point(dest, s, geometry):
    """Noise-free position after driving arc length ``s`` toward ``dest``."""
    L, r = geometry.approach_length, geometry.turn_radius
    s0 = L - r
    if dest == STRAIGHT or s <= s0:
        return np.array([0.0, -L + s])
    arc = 0.5 * np.pi * r
    side = -1.0 if dest == LEFT else 1.0
    if s <= s0 + arc:
        theta = (s - s0) / r
        # circle centred at (side*r, -r), starting at (0, -r) heading north
        return np.array([side * r * (1.0 - np.cos(theta)), -r + r * np.sin(theta)])
    return np.array([side * (r + (s - s0 - arc)), 0.0])


def nominal_path(dest, n_points, geometry):
    s = np.arange(n_points) * geometry.speed
    return np.stack([path_point(dest, si, geometry) for si in s])


def generate_intersection(num_trajectories, points_per_trajectory, seed, geometry=None):
    """Deterministic list of noisy trajectories; trajectory i uses its own stream."""
    if num_trajectories < 1 or points_per_trajectory < 1:
        raise ContractViolation("counts must be positive")
    geometry = geometry or IntersectionGeometry()
    nominal = [nominal_path(d, points_per_trajectory, geometry) for d in (LEFT, STRAIGHT, RIGHT)]
    out = []
    for i in range(num_trajectories):
        rng = make_rng(seed, "trajectory", i)
        dest = int(rng.integers(3))
        noise = rng.normal(0.0, geometry.noise_sigma, size=(points_per_trajectory, 2))
        out.append(Trajectory(nominal[dest] + noise, dest, i))
    return out


def generate_task(task, num_trajectories, seed):
    preset = TASKS[task]
    return generate_intersection(num_trajectories, preset.points, seed, preset.geometry)


def make_classification_samples(trajectories):
    return [SequenceSample(t.points, np.full(len(t.points), t.destination), id=t.id) for t in trajectories]


def make_prediction_samples(trajectories, prefix):
    out = []
    for t in trajectories:
        if not 0 < prefix < len(t.points):
            raise ContractViolation(f"prefix {prefix} must lie in (0, {len(t.points)})")
        out.append(SequenceSample(t.points[:prefix], t.points[prefix:], prefix, t.id))
    return out


def stack_samples(samples):
    """``(inputs, targets)`` arrays for equal-length samples."""
    return np.stack([s.input for s in samples]), np.stack([s.target for s in samples])


def split_dataset(samples, seed):
    """Seeded 60/20/20 partition of sample positions."""
    n = samples if isinstance(samples, int) else len(samples)
    if n < 5:
        raise ContractViolation("need at least 5 samples to split")
    order = make_rng(seed, "split").permutation(n)
    n_train, n_val = round(0.6 * n), round(0.2 * n)
    return DatasetSplit(
        sorted(order[:n_train].tolist()),
        sorted(order[n_train:n_train + n_val].tolist()),
        sorted(order[n_train + n_val:].tolist()),
    )


# -- serialisation ----------------------------------------------------------

def save_trajectories(trajectories, path):
    with open(path, "w", encoding="utf-8") as fh:
        for t in trajectories:
            rec = {"id": int(t.id), "dest": CLASS_NAMES[t.destination], "pts": t.points.tolist()}
            fh.write(json.dumps(rec) + "\n")


def load_trajectories(path):
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"dataset not found: {path}")
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                rec = json.loads(line)
                out.append(Trajectory(np.asarray(rec["pts"], dtype=np.float64),
                                      CLASS_NAMES.index(rec["dest"]), int(rec["id"])))
    return out


def split_path_for(dataset_path):
    p = Path(dataset_path)
    return p.with_name(p.stem + ".split.json")


def save_split(split, ids, path):
    """Write a split as lists of trajectory ids per partition."""
    ids = list(ids)
    rec = {part: [int(ids[i]) for i in getattr(split, part)] for part in ("train", "validation", "test")}
    Path(path).write_text(json.dumps(rec) + "\n", encoding="utf-8")


def load_split(path, ids):
    """Read a split file and map trajectory ids back to positions in ``ids``."""
    rec = json.loads(Path(path).read_text(encoding="utf-8"))
    pos = {int(i): k for k, i in enumerate(ids)}
    return DatasetSplit(*[[pos[int(i)] for i in rec[part]] for part in ("train", "validation", "test")])
