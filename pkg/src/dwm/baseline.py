"""Desk-scale recurrent baseline: one LSTM cell plus a linear readout.

Runs under the same harness, loss and data as the memory model, so any
performance gap isolates the external-memory mechanism. There is no
external memory here; the cell must hold everything in its state.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError


@dataclass(frozen=True)
class BaselineConfig:
    input_width: int = 10
    output_width: int = 8
    hidden_size: int = 64

    def __post_init__(self):
        if self.input_width < 1 or self.output_width < 1 or self.hidden_size < 1:
            raise ConfigError("widths must be positive")

    @property
    def parameter_count(self) -> int:
        gates = 4 * self.hidden_size * (self.input_width + self.hidden_size + 1)
        head = self.output_width * (self.hidden_size + 1)
        return gates + head

    def to_dict(self) -> dict:
        return {
            "input_width": self.input_width,
            "output_width": self.output_width,
            "hidden_size": self.hidden_size,
        }


def create_parameters(config: BaselineConfig, seed: int = 0) -> dict[str, Tensor]:
    """Uniform +-1/sqrt(fan-in) weights with zero bias columns, matching
    the initialization of the memory model."""
    rng = np.random.default_rng(seed)

    def init(rows: int, fan_in: int) -> Tensor:
        k = 1.0 / np.sqrt(fan_in)
        w = np.zeros((rows, fan_in + 1))
        w[:, :fan_in] = rng.uniform(-k, k, size=(rows, fan_in))
        return Tensor(w, requires_grad=True)

    return {
        "w_gates": init(4 * config.hidden_size, config.input_width + config.hidden_size),
        "w_y": init(config.output_width, config.hidden_size),
    }


def lstm_step(
    x_t: Tensor,
    state: tuple[Tensor, Tensor],
    params: dict[str, Tensor],
    hidden_size: int,
) -> tuple[tuple[Tensor, Tensor], Tensor]:
    """Standard input/forget/output/candidate gating.

    c' = f * c + i * tanh(candidate); h' = o * tanh(c'); logits read h'.
    """
    h_prev, c_prev = state
    ones = Tensor(np.ones(x_t.data.shape[:-1] + (1,)))
    v = ad.concat([x_t, h_prev, ones])
    gates = ad.matvec(params["w_gates"], v)
    i_g = ad.sigmoid(ad.narrow(gates, 0, hidden_size))
    f_g = ad.sigmoid(ad.narrow(gates, hidden_size, hidden_size))
    o_g = ad.sigmoid(ad.narrow(gates, 2 * hidden_size, hidden_size))
    cand = ad.tanh(ad.narrow(gates, 3 * hidden_size, hidden_size))
    c_t = ad.add(ad.mul(f_g, c_prev), ad.mul(i_g, cand))
    h_t = ad.mul(o_g, ad.tanh(c_t))
    y_t = ad.matvec(params["w_y"], ad.concat([h_t, ones]))
    return (h_t, c_t), y_t


class RecurrentBaseline:
    """Same model interface as the memory model (trace is not produced)."""

    kind = "baseline"

    def __init__(
        self,
        config: BaselineConfig,
        seed: int = 0,
        params: dict[str, Tensor] | None = None,
    ):
        self.config = config
        self.params = params if params is not None else create_parameters(config, seed)
        for name in ("w_gates", "w_y"):
            if name not in self.params:
                raise ConfigError(f"missing parameter tensor {name!r}")

    @property
    def input_width(self) -> int:
        return self.config.input_width

    @property
    def output_width(self) -> int:
        return self.config.output_width

    def parameter_count(self) -> int:
        return sum(p.data.size for p in self.params.values())

    def forward(
        self,
        inputs: np.ndarray,
        num_addresses: int | None = None,  # accepted for interface parity
        collect_trace: bool = False,
        trace_memory: bool = False,
    ):
        inputs = np.asarray(inputs, dtype=np.float64)
        if inputs.ndim == 2:
            inputs = inputs[:, None, :]
        if inputs.ndim != 3 or inputs.shape[0] == 0:
            raise ValueError("inputs must be a non-empty [T, B, input_width] array")
        if inputs.shape[-1] != self.config.input_width:
            raise ad.ShapeError(
                f"inputs have width {inputs.shape[-1]}, expected {self.config.input_width}"
            )
        batch = inputs.shape[1]
        h = Tensor(np.zeros((batch, self.config.hidden_size)))
        c = Tensor(np.zeros((batch, self.config.hidden_size)))
        state = (h, c)
        logits = []
        for t in range(inputs.shape[0]):
            state, y_t = lstm_step(Tensor(inputs[t]), state, self.params, self.config.hidden_size)
            logits.append(y_t)
        return logits, None
