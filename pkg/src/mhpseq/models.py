"""Recurrent model families with M output hypotheses.

* :class:`Seq2SeqModel` - one LSTM over the input, M softmax heads per step.
* :class:`EncDecModel` - LSTM encoder, M bridge layers, shared LSTM decoder.
* :class:`GeneratorModel` - one LSTM, M coordinate heads, closed-loop use.
* :class:`Ensemble` - M independent single-hypothesis models (MCL baseline).

Parameters live in an ordered ``dict[str, ndarray]``. ``forward`` takes a
*view* of that dict, which is either the arrays themselves (inference) or
graph Tensors from :meth:`bind` (training). Coordinates are divided by
``scale`` on the way in and multiplied back on the way out.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import numerics as nx
from .errors import ContractViolation
from .recurrent import LstmParams, LstmState, lstm_step, run_sequence

PROB_FLOOR = 1e-12


def _affine_init(rng, fan_in, fan_out):
    return nx.uniform_init(rng, (fan_in, fan_out), fan_in), np.zeros(fan_out, dtype=nx.DTYPE)


class _Model:
    family = ""
    params: dict

    def bind(self, graph):
        return {name: graph.param(name, value) for name, value in self.params.items()}

    def with_params(self, params):
        return replace(self, params=dict(params))

    @property
    def num_params(self):
        return int(sum(v.size for v in self.params.values()))

    def header(self):
        return {k: v for k, v in self.__dict__.items() if k != "params"}

    @classmethod
    def from_header(cls, header, params):
        return cls(params=params, **header)

    def _lstm(self, view, prefix):
        return LstmParams(view[f"{prefix}.weight"], view[f"{prefix}.bias"])


def seq_xent_loss(probs, labels):
    """Mean over time of -log p(true class), probabilities floored at 1e-12.

    ``probs`` is ``(..., T, C)``, ``labels`` integer ``(..., T)``; returns ``(...)``.
    """
    labels = np.asarray(labels)
    if probs.shape[:-1] != labels.shape:
        raise ContractViolation(f"prediction shape {probs.shape} does not match labels {labels.shape}")
    C = probs.shape[-1]
    if labels.size and (labels.min() < 0 or labels.max() >= C):
        raise ContractViolation("label outside class range")
    onehot = np.eye(C)[labels]
    p_true = (nx.as_tensor(probs) * onehot).sum(axis=-1)
    loss = (-nx.log(nx.maximum(p_true, PROB_FLOOR))).mean(axis=-1)
    return loss if isinstance(probs, nx.Tensor) else loss.data


def l2_seq_loss(predicted, truth):
    """Mean over steps of the squared Euclidean error; ``(..., m, 2)`` -> ``(...)``."""
    truth = nx.value(truth)
    if predicted.shape != truth.shape:
        raise ContractViolation(f"sequence shapes differ: {predicted.shape} vs {truth.shape}")
    diff = nx.as_tensor(predicted) - truth
    loss = (diff * diff).sum(axis=-1).mean(axis=-1)
    return loss if isinstance(predicted, nx.Tensor) else loss.data


@dataclass
class Seq2SeqModel(_Model):
    input_dim: int
    hidden_dim: int
    num_classes: int
    num_hypotheses: int = 1
    scale: float = 1.0
    params: dict = field(default_factory=dict, repr=False)

    family = "seq2seq"

    @classmethod
    def init(cls, input_dim, hidden_dim, num_classes, num_hypotheses, rng, scale=1.0):
        lstm = LstmParams.init(input_dim, hidden_dim, rng)
        params = {"lstm.weight": lstm.weight, "lstm.bias": lstm.bias}
        for m in range(num_hypotheses):
            params[f"head{m}.weight"], params[f"head{m}.bias"] = _affine_init(rng, hidden_dim, num_classes)
        return cls(input_dim, hidden_dim, num_classes, num_hypotheses, scale, params)

    def forward(self, view, x):
        """Per-step class probabilities ``(B, T, C)`` for each hypothesis."""
        x = np.asarray(x, dtype=nx.DTYPE)
        if x.ndim != 3 or x.shape[-1] != self.input_dim:
            raise ContractViolation(f"expected (B, T, {self.input_dim}) input, got {x.shape}")
        if x.shape[1] == 0:
            raise ContractViolation("empty input sequence")
        xn = x / self.scale
        states = run_sequence(self._lstm(view, "lstm"), [xn[:, t] for t in range(x.shape[1])])
        hs = nx.stack([s.hidden for s in states], axis=1)
        return [nx.softmax(hs @ view[f"head{m}.weight"] + view[f"head{m}.bias"], axis=-1)
                for m in range(self.num_hypotheses)]

    def hypothesis_losses(self, view, x, y):
        return [seq_xent_loss(p, y) for p in self.forward(view, x)]

    def predict(self, x):
        """``(M, B, T, C)`` probabilities."""
        return np.stack([nx.value(p) for p in self.forward(self.params, x)])


@dataclass
class EncDecModel(_Model):
    hidden_dim: int
    horizon: int
    num_hypotheses: int = 1
    input_dim: int = 2
    scale: float = 1.0
    params: dict = field(default_factory=dict, repr=False)

    family = "encdec"

    @classmethod
    def init(cls, hidden_dim, horizon, num_hypotheses, rng, input_dim=2, scale=1.0):
        params = {}
        enc = LstmParams.init(input_dim, hidden_dim, rng)
        params["enc.weight"], params["enc.bias"] = enc.weight, enc.bias
        for m in range(num_hypotheses):
            params[f"bridge{m}.weight"], params[f"bridge{m}.bias"] = _affine_init(rng, hidden_dim, hidden_dim)
        dec = LstmParams.init(input_dim, hidden_dim, rng)
        params["dec.weight"], params["dec.bias"] = dec.weight, dec.bias
        params["out.weight"], params["out.bias"] = _affine_init(rng, hidden_dim, input_dim)
        return cls(hidden_dim, horizon, num_hypotheses, input_dim, scale, params)

    def encode(self, view, x):
        x = np.asarray(x, dtype=nx.DTYPE)
        if x.ndim != 3 or x.shape[-1] != self.input_dim:
            raise ContractViolation(f"expected (B, T, {self.input_dim}) input, got {x.shape}")
        if x.shape[1] == 0:
            raise ContractViolation("empty input sequence")
        xn = x / self.scale
        states = run_sequence(self._lstm(view, "enc"), [xn[:, t] for t in range(x.shape[1])])
        return states[-1].hidden

    def forward(self, view, x, horizon=None):
        """M decoded sequences ``(B, horizon, 2)`` in scaled units.

        All M bridge outputs are decoded together as one batch of size M*B.
        The decoder works in coordinates relative to the last observed point:
        it starts from the zero vector, the output layer gives the step
        displacement and the running position is fed back as the next input.
        """
        horizon = self.horizon if horizon is None else horizon
        if horizon < 1:
            raise ContractViolation("horizon must be >= 1")
        enc = self.encode(view, x)
        B, M = enc.shape[0], self.num_hypotheses
        h0 = nx.concat([enc @ view[f"bridge{m}.weight"] + view[f"bridge{m}.bias"] for m in range(M)], axis=0)
        state = LstmState(h0, np.zeros((M * B, self.hidden_dim)))
        dec = self._lstm(view, "dec")
        pos = np.zeros((M * B, self.input_dim))
        outputs = []
        for _ in range(horizon):
            state = lstm_step(dec, pos, state)
            pos = pos + (state.hidden @ view["out.weight"] + view["out.bias"])
            outputs.append(pos)
        anchor = np.tile(np.asarray(x, dtype=nx.DTYPE)[:, -1] / self.scale, (M, 1))
        seq = nx.stack(outputs, axis=1) + anchor[:, None, :]
        return [seq[m * B:(m + 1) * B] for m in range(M)]

    def hypothesis_losses(self, view, x, y):
        yn = np.asarray(y, dtype=nx.DTYPE) / self.scale
        return [l2_seq_loss(p, yn) for p in self.forward(view, x, yn.shape[1])]

    def predict(self, x, horizon=None):
        """``(M, B, horizon, 2)`` coordinates in map units."""
        return np.stack([nx.value(p) for p in self.forward(self.params, x, horizon)]) * self.scale


@dataclass
class GeneratorModel(_Model):
    """Next-point model; every head predicts the offset to the next point."""

    hidden_dim: int
    num_hypotheses: int = 1
    input_dim: int = 2
    scale: float = 1.0
    params: dict = field(default_factory=dict, repr=False)

    family = "generator"

    @classmethod
    def init(cls, hidden_dim, num_hypotheses, rng, input_dim=2, scale=1.0):
        lstm = LstmParams.init(input_dim, hidden_dim, rng)
        params = {"lstm.weight": lstm.weight, "lstm.bias": lstm.bias}
        for m in range(num_hypotheses):
            params[f"head{m}.weight"], params[f"head{m}.bias"] = _affine_init(rng, hidden_dim, input_dim)
        return cls(hidden_dim, num_hypotheses, input_dim, scale, params)

    def forward(self, view, x):
        """Teacher-forced next-point predictions ``(B, T-1, 2)`` in scaled units."""
        x = np.asarray(x, dtype=nx.DTYPE)
        if x.ndim != 3 or x.shape[-1] != self.input_dim or x.shape[1] < 2:
            raise ContractViolation(f"expected (B, T>=2, {self.input_dim}) input, got {x.shape}")
        xn = x / self.scale
        inputs = xn[:, :-1]
        states = run_sequence(self._lstm(view, "lstm"), [inputs[:, t] for t in range(inputs.shape[1])])
        hs = nx.stack([s.hidden for s in states], axis=1)
        return [inputs + (hs @ view[f"head{m}.weight"] + view[f"head{m}.bias"])
                for m in range(self.num_hypotheses)]

    def hypothesis_losses(self, view, x, y=None):
        target = np.asarray(x, dtype=nx.DTYPE)[:, 1:] / self.scale
        return [l2_seq_loss(p, target) for p in self.forward(view, x)]

    # closed-loop helpers, plain arrays only

    def advance(self, state, point):
        """State after consuming ``point`` (map units), batched or not."""
        lstm = LstmParams(self.params["lstm.weight"], self.params["lstm.bias"])
        return lstm_step(lstm, np.asarray(point) / self.scale, state).numpy()

    def encode(self, points):
        """State after consuming a seed sequence ``(k, 2)`` from a zero state."""
        state = LstmState.zeros(self.hidden_dim)
        for p in np.asarray(points, dtype=nx.DTYPE):
            state = self.advance(state, p)
        return state

    def heads(self, state, point):
        """Next-point proposals of all heads: ``(M, ..., 2)`` in map units."""
        h = nx.value(state.hidden)
        base = np.asarray(point, dtype=nx.DTYPE)
        return np.stack([base + (h @ self.params[f"head{m}.weight"] + self.params[f"head{m}.bias"]) * self.scale
                         for m in range(self.num_hypotheses)])


@dataclass
class Ensemble:
    """M independent single-hypothesis models; hypothesis m comes from member m."""

    members: list

    family = "mcl"

    @property
    def num_hypotheses(self):
        return len(self.members)

    @property
    def params(self):
        return {f"m{k}.{name}": v for k, member in enumerate(self.members) for name, v in member.params.items()}

    @property
    def num_params(self):
        return sum(m.num_params for m in self.members)

    def with_params(self, params):
        members = []
        for k, member in enumerate(self.members):
            prefix = f"m{k}."
            members.append(member.with_params({n[len(prefix):]: v for n, v in params.items() if n.startswith(prefix)}))
        return Ensemble(members)

    def predict(self, x, *args):
        return np.concatenate([m.predict(x, *args) for m in self.members], axis=0)


def shp_star_predict(probabilities, gamma):
    """Classes with probability above ``gamma``; the argmax alone if none qualify."""
    p = np.asarray(probabilities, dtype=float)
    chosen = {int(c) for c in np.flatnonzero(p > gamma)}
    return chosen or {int(np.argmax(p))}


def shp_star_mask(probabilities, gamma):
    """Vectorised :func:`shp_star_predict` over the last axis; boolean mask."""
    p = np.asarray(probabilities, dtype=float)
    mask = p > gamma
    empty = ~mask.any(axis=-1)
    if empty.any():
        top = np.argmax(p, axis=-1)
        fallback = np.zeros_like(mask)
        np.put_along_axis(fallback, top[..., None], True, axis=-1)
        mask = np.where(empty[..., None], fallback, mask)
    return mask


def hypothesis_class_mask(probs):
    """Union of per-hypothesis argmax classes: ``(M, ..., C)`` -> bool ``(..., C)``."""
    probs = np.asarray(probs)
    C = probs.shape[-1]
    return np.eye(C, dtype=bool)[np.argmax(probs, axis=-1)].any(axis=0)
