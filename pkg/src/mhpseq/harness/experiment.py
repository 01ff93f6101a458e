"""Training with early stopping, M2 reference fitting and evaluation."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import metrics as mt
from ..errors import ContractViolation
from ..generation import InferenceConfig, infer
from ..mhp import MhpConfig
from ..models import (EncDecModel, Ensemble, GeneratorModel, Seq2SeqModel,
                      hypothesis_class_mask, shp_star_mask)
from ..numerics import AdamState, make_rng
from ..toydata import (TASKS, load_split, load_trajectories, split_dataset,
                       split_path_for)
from ..training import mcl_train_step, mean_meta_loss, train_step
from .report import MetricReport

log = logging.getLogger(__name__)

NUM_CLASSES = 3


@dataclass
class TaskData:
    """Arrays for one task, partitioned 60/20/20.

    ``x``/``y`` hold model inputs and targets per partition. For generation
    ``x`` is the whole trajectory and ``y`` is None; the evaluation seed and
    truth are cut from ``x`` with the task prefix.
    """

    task: str
    ids: np.ndarray
    x: dict
    y: dict
    part_ids: dict = field(default_factory=dict)

    @property
    def prefix(self):
        return TASKS[self.task].prefix

    @property
    def scale(self):
        # Coordinates are fed in turn-radius units: the deviation that separates
        # the manoeuvres at the fork is then O(1) rather than a few percent.
        return TASKS[self.task].geometry.turn_radius


def load_task_data(task, data_path, seed=0):
    trajectories = load_trajectories(data_path)
    preset = TASKS[task]
    if any(len(t.points) != preset.points for t in trajectories):
        raise ContractViolation(f"{data_path}: {task} expects {preset.points}-point trajectories")
    ids = np.array([t.id for t in trajectories])
    split_file = split_path_for(data_path)
    split = load_split(split_file, ids) if split_file.exists() else split_dataset(len(trajectories), seed)
    pts = np.stack([t.points for t in trajectories])
    dest = np.array([t.destination for t in trajectories])
    if task == "toy-classification":
        X, Y = pts, np.repeat(dest[:, None], preset.points, axis=1)
    elif task == "toy-prediction":
        X, Y = pts[:, :preset.prefix], pts[:, preset.prefix:]
    else:
        X, Y = pts, None
    x, y, part_ids = {}, {}, {}
    for part in ("train", "validation", "test"):
        idx = np.asarray(getattr(split, part), dtype=int)
        x[part] = X[idx]
        y[part] = None if Y is None else Y[idx]
        part_ids[part] = ids[idx]
    return TaskData(task, ids, x, y, part_ids)


# -- models ---------------------------------------------------------------

def _single_model(config, data, rng, num_hypotheses):
    H, scale = config.hidden_dim, data.scale
    if config.task == "toy-classification":
        return Seq2SeqModel.init(2, H, NUM_CLASSES, num_hypotheses, rng, scale=scale)
    if config.task == "toy-prediction":
        return EncDecModel.init(H, data.y["train"].shape[1], num_hypotheses, rng, scale=scale)
    return GeneratorModel.init(H, num_hypotheses, rng, scale=scale)


def build_model(config, data):
    if config.model == "mcl":
        return Ensemble([_single_model(config, data, make_rng(config.seed, "init", k), 1)
                         for k in range(config.M)])
    return _single_model(config, data, make_rng(config.seed, "init"), config.num_hypotheses)


def mhp_config(config):
    eps = 0.0 if config.model == "mcl" else config.epsilon
    return MhpConfig(config.num_hypotheses, eps)


# -- training -------------------------------------------------------------

@dataclass
class History:
    epochs: list = field(default_factory=list)
    best_epoch: int = 0
    best_val_loss: float = float("inf")
    train_ms_per_batch: float = 0.0


def train_with_early_stopping(config, data=None):
    """Train until validation meta-loss stops improving.

    Stops once ``patience`` is exceeded by consecutive non-improving epochs or
    at ``max_epochs``; returns the parameters of the best validation epoch.
    """
    if data is None:
        if not config.data or not Path(config.data).exists():
            raise FileNotFoundError(f"dataset not found: {config.data or '<unset>'}")
        data = load_task_data(config.task, config.data, config.seed)
    model = build_model(config, data)
    mconf = mhp_config(config)
    if isinstance(model, Ensemble):
        opt = [AdamState.for_params(m.params, config.learning_rate) for m in model.members]
    else:
        opt = AdamState.for_params(model.params, config.learning_rate)
    xt, yt = data.x["train"], data.y["train"]
    xv, yv = data.x["validation"], data.y["validation"]
    hist = History()
    best = model
    wait = 0
    batch_time, batches = 0.0, 0
    for epoch in range(1, config.max_epochs + 1):
        order = make_rng(config.seed, "epoch", epoch).permutation(len(xt))
        running = []
        for start in range(0, len(order), config.batch_size):
            idx = order[start:start + config.batch_size]
            xb, yb = xt[idx], (None if yt is None else yt[idx])
            t0 = time.perf_counter()
            if isinstance(model, Ensemble):
                model, opt, loss = mcl_train_step(model, xb, yb, opt)
            else:
                model, opt, loss = train_step(model, xb, yb, mconf, opt)
            batch_time += time.perf_counter() - t0
            batches += 1
            running.append(loss)
        val_loss, val_oracle = mean_meta_loss(model, xv, yv, mconf)
        hist.epochs.append({"epoch": epoch, "train_loss": float(np.mean(running)),
                            "val_loss": val_loss, "val_oracle_loss": val_oracle})
        log.info("%s epoch %d train %.5f val %.5f oracle %.5f", config.label, epoch,
                 np.mean(running), val_loss, val_oracle)
        if val_loss < hist.best_val_loss:
            hist.best_val_loss, hist.best_epoch, best, wait = val_loss, epoch, model, 0
        else:
            wait += 1
            if wait > config.patience:
                break
    hist.train_ms_per_batch = 1000.0 * batch_time / max(batches, 1)
    return best, hist


# -- M2 reference structures ----------------------------------------------

@dataclass
class M2Reference:
    """Polytopes (and clusters) fitted on training + validation data only."""

    task: str
    tau: float
    polytopes: dict
    cluster_model: object = None
    fit_ids: np.ndarray = None


def _label_vectors(data, part):
    if data.task == "toy-prediction":
        return mt.flatten(data.x[part]), mt.flatten(data.y[part])
    p = data.prefix
    return mt.flatten(data.x[part][:, :p]), mt.flatten(data.x[part][:, p:])


def fit_m2_reference(data, tau, bandwidth="auto", seed=0):
    fit_ids = np.concatenate([data.part_ids["train"], data.part_ids["validation"]])
    if data.task == "toy-classification":
        pts = np.concatenate([data.x["train"], data.x["validation"]]).reshape(-1, 2)
        lab = np.concatenate([data.y["train"], data.y["validation"]]).reshape(-1)
        return M2Reference(data.task, tau, mt.fit_class_polytopes(pts, lab, tau), fit_ids=fit_ids)
    xs, ys = zip(*(_label_vectors(data, part) for part in ("train", "validation")))
    inputs, labels = np.concatenate(xs), np.concatenate(ys)
    bw = "auto" if bandwidth in (None, "auto") else float(bandwidth)
    clusters = mt.mean_shift(labels, bw, seed=seed)
    return M2Reference(data.task, tau, mt.fit_cluster_polytopes(inputs, clusters, tau), clusters, fit_ids)


# -- evaluation -----------------------------------------------------------

def _predict_chunked(model, x, chunk=128):
    return np.concatenate([model.predict(x[s:s + chunk]) for s in range(0, len(x), chunk)], axis=1)


@dataclass
class Evaluation:
    values: dict
    details: dict = field(default_factory=dict)
    infer_ms_per_sample: float = 0.0


def evaluate(model, data, config, reference):
    """Oracle and M2 metrics on the test partition."""
    if reference.task != data.task or config.task != data.task:
        raise ContractViolation("task mismatch between model config, data and M2 reference")
    if np.intersect1d(reference.fit_ids, data.part_ids["test"]).size:
        raise ContractViolation("M2 reference was fitted on test samples")
    if data.task == "toy-classification":
        return _evaluate_classification(model, data, config, reference)
    return _evaluate_regression(model, data, config, reference)


def _evaluate_classification(model, data, config, ref):
    if not isinstance(model, (Seq2SeqModel, Ensemble)):
        raise ContractViolation("classification needs a sequence-to-sequence model")
    x, y = data.x["test"], data.y["test"]
    t0 = time.perf_counter()
    probs = _predict_chunked(model, x)                       # (M, N, T, C)
    elapsed = time.perf_counter() - t0
    if config.model == "shp-star":
        pred = shp_star_mask(probs[0], config.gamma)
    else:
        pred = hypothesis_class_mask(probs)
    pred = pred.reshape(-1, NUM_CLASSES)
    labels = y.reshape(-1)
    label_sets = mt.label_mask_discrete(x.reshape(-1, 2), labels, ref.polytopes, NUM_CLASSES)
    oracle = pred[np.arange(len(labels)), labels].astype(float)
    pr, re = mt.pr_re_m2_masks(pred, label_sets)
    Pr, Re = float(pr.mean()), float(re.mean())
    values = {"Pr_O": float(oracle.mean()), "Re_O": float(oracle.mean()),
              "Pr_M2": Pr, "Re_M2": Re, "F1_M2": mt.f1(Pr, Re)}
    details = {"points": x.reshape(-1, 2), "set_match": np.all(pred == label_sets, axis=1)}
    return Evaluation(values, details, 1000.0 * elapsed / len(x))


def _hypotheses_regression(model, data, config, x):
    if data.task == "toy-prediction":
        if not isinstance(model, (EncDecModel, Ensemble)):
            raise ContractViolation("prediction needs an encoder-decoder model")
        return list(np.swapaxes(_predict_chunked(model, x), 0, 1))
    if not isinstance(model, GeneratorModel):
        raise ContractViolation("generation needs a generator model")
    p = data.prefix
    icfg = InferenceConfig(config.depth, config.steps, config.split_threshold)
    return [infer(model, traj[:p], icfg).hypotheses() for traj in x]


def _evaluate_regression(model, data, config, ref):
    x = data.x["test"]
    if config.eval_limit:
        x = x[:config.eval_limit]
    if data.task == "toy-prediction":
        truth = data.y["test"][:len(x)]
        inputs = mt.flatten(x)
    else:
        p = data.prefix
        truth = x[:, p:p + config.steps]
        inputs = mt.flatten(x[:, :p])
    t0 = time.perf_counter()
    hyps = _hypotheses_regression(model, data, config, x)
    elapsed = time.perf_counter() - t0
    clusters = ref.cluster_model
    own = mt.assign_clusters(clusters, mt.flatten(truth))
    relabeled = mt.relabel_continuous(inputs, clusters, ref.polytopes, own)
    centers = mt.label_centers(relabeled, clusters)
    fde_o, ade_o, fde_m2, ade_m2 = [], [], [], []
    for h, t, c in zip(hyps, truth, centers):
        f_err, a_err = mt.fde_ade(h, np.broadcast_to(t, h.shape))
        fde_o.append(f_err.min())
        ade_o.append(a_err.min())
        Y = mt.unflatten(c)
        fde_m2.append(mt.l_m2(mt.fde, h, Y))
        ade_m2.append(mt.l_m2(mt.ade, h, Y))
    values = {"FDE_O": float(np.mean(fde_o)), "ADE_O": float(np.mean(ade_o)),
              "FDE_M2": float(np.mean(fde_m2)), "ADE_M2": float(np.mean(ade_m2))}
    observed = x if data.task == "toy-prediction" else x[:, :data.prefix]
    details = {"observed": observed[0], "truth": truth[0], "hypotheses": hyps[0],
               "num_clusters": len(clusters.centers)}
    return Evaluation(values, details, 1000.0 * elapsed / len(x))


# -- sweeps ---------------------------------------------------------------

@dataclass
class SweepResult:
    report: MetricReport
    models: dict = field(default_factory=dict)
    histories: dict = field(default_factory=dict)
    evaluations: dict = field(default_factory=dict)
    references: dict = field(default_factory=dict)


def run_sweep(configs, data_override=None):
    """Train and evaluate each config in order; one table row per config.

    Configs with identical training settings (e.g. SHP and SHP*) share one
    trained model, and M2 structures are fitted once per (data, tau).
    """
    configs = list(configs)
    if not configs:
        raise ContractViolation("no configs to run")
    task = configs[0].task
    if any(c.task != task for c in configs):
        raise ContractViolation("all configs in a sweep must share one task")
    report = MetricReport(task)
    result = SweepResult(report)
    datasets, trained = {}, {}
    for cfg in configs:
        path = data_override or cfg.data
        if not path or not Path(path).exists():
            raise FileNotFoundError(f"dataset not found: {path or '<unset>'}")
        key_data = (str(path), cfg.seed)
        if key_data not in datasets:
            datasets[key_data] = load_task_data(task, path, cfg.seed)
        data = datasets[key_data]
        tkey = (key_data, cfg.training_key())
        if tkey not in trained:
            log.info("training %s", cfg.label)
            trained[tkey] = train_with_early_stopping(cfg, data)
        model, hist = trained[tkey]
        rkey = (key_data, cfg.tau, cfg.bandwidth)
        if rkey not in result.references:
            result.references[rkey] = fit_m2_reference(data, cfg.tau, cfg.bandwidth, cfg.seed)
        ev = evaluate(model, data, cfg, result.references[rkey])
        report.add(cfg.label, ev.values)
        result.models[cfg.label] = model
        result.histories[cfg.label] = hist
        result.evaluations[cfg.label] = ev
    return result
