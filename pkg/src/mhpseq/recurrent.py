"""Single-layer LSTM cell and its unrolling over time."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .errors import ContractViolation


@dataclass
class LstmParams:
    """Weights of one LSTM cell.

    ``weight`` has shape ``(input_dim + hidden_dim, 4 * hidden_dim)`` and acts
    on ``[x; h]``; its column blocks are the input, forget, output and
    candidate gates in that order. Entries may be arrays or graph Tensors.
    """

    weight: object
    bias: object

    @property
    def hidden_dim(self):
        return self.bias.shape[0] // 4

    @property
    def input_dim(self):
        return self.weight.shape[0] - self.hidden_dim

    @property
    def num_params(self):
        h, i = self.hidden_dim, self.input_dim
        return 4 * h * (i + h + 1)

    @classmethod
    def init(cls, input_dim, hidden_dim, rng):
        fan_in = input_dim + hidden_dim
        weight = nx.uniform_init(rng, (fan_in, 4 * hidden_dim), fan_in)
        bias = np.zeros(4 * hidden_dim, dtype=nx.DTYPE)
        bias[hidden_dim:2 * hidden_dim] = 1.0
        return cls(weight, bias)


@dataclass
class LstmState:
    hidden: object
    cell: object

    @classmethod
    def zeros(cls, hidden_dim, batch=None):
        shape = (hidden_dim,) if batch is None else (batch, hidden_dim)
        return cls(np.zeros(shape, dtype=nx.DTYPE), np.zeros(shape, dtype=nx.DTYPE))

    def numpy(self):
        return LstmState(nx.value(self.hidden), nx.value(self.cell))


def lstm_step(params, x, state):
    """Advance the cell by one input; works on single vectors or batches."""
    H = params.hidden_dim
    if x.shape[-1] != params.input_dim:
        raise ContractViolation(f"input has {x.shape[-1]} features, cell expects {params.input_dim}")
    if state.hidden.shape[-1] != H or state.cell.shape[-1] != H:
        raise ContractViolation("state size does not match hidden_dim")
    z = nx.concat([x, state.hidden], axis=-1) @ params.weight + params.bias
    gates = nx.sigmoid(z[..., :3 * H])
    candidate = nx.tanh(z[..., 3 * H:])
    cell = gates[..., H:2 * H] * state.cell + gates[..., :H] * candidate
    hidden = gates[..., 2 * H:] * nx.tanh(cell)
    return LstmState(hidden, cell)


def run_sequence(params, inputs, initial=None):
    """States after each element of ``inputs``; ``initial`` defaults to zeros."""
    inputs = list(inputs)
    if not inputs:
        return []
    if initial is None:
        batch = inputs[0].shape[0] if inputs[0].ndim == 2 else None
        initial = LstmState.zeros(params.hidden_dim, batch)
    states = []
    state = initial
    for x in inputs:
        state = lstm_step(params, x, state)
        states.append(state)
    return states
