"""Differentiable working-memory cell.

A tiny sigmoid recurrent controller reads from and writes to an external
memory matrix through a single shared attention vector. The attention
moves by circular-convolution shifts, can jump back to remembered
addresses through gated *bookmarks* (one pinned to the initial attention,
the rest updated by gates), and is re-focused after every shift by a
power sharpening step.

Per timestep, in order:

1. read the memory at the previous attention,
2. run the controller on [input, previous hidden, previous read],
3. split and activate the interface vector,
4. erase--add write at the previous attention,
5. blend the attention with the bookmarks (attention gates),
6. update the dynamic bookmarks toward the previous attention,
7. shift the blended attention circularly, then sharpen it.

All quantities live in the autodiff graph, so a scalar loss on the
output logits differentiates exactly through arbitrarily long rollouts.
Vectors may carry a leading batch axis; the step logic is identical.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError, Tensor
from .errors import ConfigError

SHARPEN_EPS = 1e-12  # floor inside the power, avoids 0**gamma singularities


@dataclass(frozen=True)
class DwmConfig:
    """Model dimensions.

    ``word_width`` (the memory content dimension) defaults to
    ``input_width`` so a whole input item fits in one address. The hidden
    state is kept smaller than one input item so the controller cannot
    hold the sequence on its own. Bookmark 0 is static (pinned to the
    initial attention); the remaining ``num_bookmarks - 1`` are dynamic.
    """

    input_width: int = 10
    output_width: int = 8
    hidden_size: int = 5
    word_width: int | None = None
    num_bookmarks: int = 2
    shift_span: int = 3

    def __post_init__(self):
        if self.input_width < 1 or self.output_width < 1 or self.hidden_size < 1:
            raise ConfigError("widths must be positive")
        if self.hidden_size >= self.input_width:
            raise ConfigError(
                "hidden_size must be smaller than input_width "
                f"(got {self.hidden_size} >= {self.input_width})"
            )
        if self.num_bookmarks < 2:
            raise ConfigError("need the static bookmark plus at least one dynamic one")
        if self.shift_span < 1 or self.shift_span % 2 == 0:
            raise ConfigError("shift_span must be odd and positive")
        if self.word_width is None:
            object.__setattr__(self, "word_width", self.input_width)

    @property
    def concat_width(self) -> int:
        # controller input: [x_t, h_{t-1}, r_{t-1}]
        return self.input_width + self.hidden_size + self.word_width

    @property
    def interface_width(self) -> int:
        # add + erase + shift + bookmark gates + attention gates + sharpening
        return (
            2 * self.word_width
            + self.shift_span
            + (self.num_bookmarks - 1)
            + (self.num_bookmarks + 1)
            + 1
        )

    @property
    def parameter_count(self) -> int:
        rows = self.hidden_size + self.output_width + self.interface_width
        return rows * (self.concat_width + 1)

    def to_dict(self) -> dict:
        return {
            "input_width": self.input_width,
            "output_width": self.output_width,
            "hidden_size": self.hidden_size,
            "word_width": self.word_width,
            "num_bookmarks": self.num_bookmarks,
            "shift_span": self.shift_span,
        }


@dataclass
class InterfaceParams:
    """Activated controller outputs steering one memory step."""

    add: Tensor  # [.., word_width], unconstrained write content
    erase: Tensor  # [.., word_width], each entry in [0, 1]
    shift: Tensor  # [.., shift_span], on the simplex
    bookmark_gates: Tensor  # [.., num_bookmarks - 1], each in [0, 1]
    attention_gates: Tensor  # [.., num_bookmarks + 1], on the simplex
    sharpening: Tensor  # [.., 1], >= 1


@dataclass
class DwmState:
    hidden: Tensor
    attention: Tensor
    bookmarks: tuple[Tensor, ...]
    memory: Tensor


@dataclass
class StepRecord:
    """Detached per-timestep internals, for strategy analysis."""

    attention: np.ndarray
    bookmarks: list[np.ndarray]
    shift: np.ndarray
    bookmark_gates: np.ndarray
    attention_gates: np.ndarray
    sharpening: np.ndarray
    erase: np.ndarray
    add: np.ndarray
    memory: np.ndarray | None = None


@dataclass
class EpisodeTrace:
    steps: list[StepRecord] = field(default_factory=list)
    final_memory: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.steps)


def create_parameters(config: DwmConfig, seed: int = 0) -> dict[str, Tensor]:
    """Fresh trainable weights: uniform in +-1/sqrt(fan-in), zero bias column.

    Each matrix maps the concatenation [x, h, r, 1]; the trailing column
    is the bias.
    """
    rng = np.random.default_rng(seed)
    fan_in = config.concat_width
    k = 1.0 / np.sqrt(fan_in)

    def init(rows: int) -> Tensor:
        w = np.zeros((rows, fan_in + 1))
        w[:, :fan_in] = rng.uniform(-k, k, size=(rows, fan_in))
        return Tensor(w, requires_grad=True)

    return {
        "w_h": init(config.hidden_size),
        "w_y": init(config.output_width),
        "w_p": init(config.interface_width),
    }


def init_state(config: DwmConfig, num_addresses: int, batch_size: int = 1) -> DwmState:
    """Zero hidden state and memory, attention one-hot at address 0,
    every bookmark equal to that initial attention."""
    if num_addresses < 1:
        raise ConfigError(f"need at least one memory address, got {num_addresses}")
    if batch_size < 1:
        raise ConfigError(f"batch_size must be positive, got {batch_size}")
    w0 = np.zeros((batch_size, num_addresses))
    w0[:, 0] = 1.0
    attention = Tensor(w0)
    return DwmState(
        hidden=Tensor(np.zeros((batch_size, config.hidden_size))),
        attention=attention,
        bookmarks=tuple(attention for _ in range(config.num_bookmarks)),
        memory=Tensor(np.zeros((batch_size, config.word_width, num_addresses))),
    )


def read(memory: Tensor, attention: Tensor) -> Tensor:
    """Convex combination of memory columns: r = M w."""
    if memory.data.shape[-1] != attention.data.shape[-1]:
        raise ShapeError(
            f"read: memory {memory.data.shape} vs attention {attention.data.shape}"
        )
    return ad.matvec(memory, attention)


def write(memory: Tensor, attention: Tensor, erase: Tensor, add_vec: Tensor) -> Tensor:
    """Erase--add update: M'[i, j] = M[i, j] (1 - w[j] e[i]) + w[j] a[i].

    The attention indexes addresses (columns), the erase/add vectors
    index word entries (rows).
    """
    keep = ad.sub(Tensor(1.0), ad.outer(erase, attention))
    return ad.add(ad.mul(memory, keep), ad.outer(add_vec, attention))


def update_bookmarks(
    bookmarks: Sequence[Tensor], w_prev: Tensor, gates: Tensor
) -> tuple[Tensor, ...]:
    """Blend each dynamic bookmark toward the previous attention;
    bookmark 0 is static and passes through unchanged."""
    updated = [bookmarks[0]]
    for i, bookmark in enumerate(bookmarks[1:]):
        g = ad.narrow(gates, i, 1)
        updated.append(ad.add(ad.mul(g, w_prev), ad.mul(ad.sub(Tensor(1.0), g), bookmark)))
    return tuple(updated)


def gate_attention(w_prev: Tensor, bookmarks: Sequence[Tensor], gates: Tensor) -> Tensor:
    """Convex blend of the previous attention (gate 0) with every
    bookmark (gates 1..N_B); simplex in, simplex out."""
    out = ad.mul(ad.narrow(gates, 0, 1), w_prev)
    for i, bookmark in enumerate(bookmarks):
        out = ad.add(out, ad.mul(ad.narrow(gates, i + 1, 1), bookmark))
    return out


def shift(attention: Tensor, shift_weights: Tensor) -> Tensor:
    """Circular convolution of the attention with a small shift kernel.

    Kernel index k maps to the address offset k - span//2, so for span 3
    the offsets are (-1, 0, +1) and weight on the last entry advances the
    attention to the next-higher address (with wraparound).
    """
    span = shift_weights.data.shape[-1]
    half = span // 2
    out = None
    for k in range(span):
        term = ad.mul(ad.narrow(shift_weights, k, 1), ad.roll(attention, k - half))
        out = term if out is None else ad.add(out, term)
    return out


def sharpen(attention: Tensor, gamma: Tensor) -> Tensor:
    """Renormalized power w_i^gamma / sum_j w_j^gamma with an epsilon
    floor inside the power; gamma = 1 is the identity.

    Computed as softmax(gamma * log(w + eps)), which is the same
    function but cannot underflow to 0/0 for large gamma or many
    addresses.
    """
    base = ad.add(attention, Tensor(SHARPEN_EPS))
    return ad.softmax(ad.mul(gamma, ad.log(base)))


def controller_step(
    x_t: Tensor, h_prev: Tensor, r_prev: Tensor, params: dict[str, Tensor]
) -> tuple[Tensor, Tensor, Tensor]:
    """One controller evaluation on [x_t, h_{t-1}, r_{t-1}, 1].

    The hidden state goes through a sigmoid; output logits and the raw
    interface vector are affine.
    """
    ones = Tensor(np.ones(x_t.data.shape[:-1] + (1,)))
    v = ad.concat([x_t, h_prev, r_prev, ones])
    h_t = ad.sigmoid(ad.matvec(params["w_h"], v))
    y_t = ad.matvec(params["w_y"], v)
    raw = ad.matvec(params["w_p"], v)
    return h_t, y_t, raw


def process_interface(raw: Tensor, config: DwmConfig) -> InterfaceParams:
    """Split the raw interface vector and apply the fixed activations.

    Field order: add, erase, shift, bookmark gates, attention gates,
    sharpening. The add vector passes through unactivated; erase and
    bookmark gates are sigmoids; the shift kernel is softmax(softplus);
    attention gates are a softmax; sharpening is 1 + softplus.
    """
    if raw.data.shape[-1] != config.interface_width:
        raise ShapeError(
            f"interface vector has width {raw.data.shape[-1]}, "
            f"expected {config.interface_width}"
        )
    wd, nb = config.word_width, config.num_bookmarks
    pos = 0

    def take(n: int) -> Tensor:
        nonlocal pos
        out = ad.narrow(raw, pos, n)
        pos += n
        return out

    add_vec = take(wd)
    erase = ad.sigmoid(take(wd))
    shift_w = ad.softmax(ad.softplus(take(config.shift_span)))
    bookmark_gates = ad.sigmoid(take(nb - 1))
    attention_gates = ad.softmax(take(nb + 1))
    sharpening = ad.add(Tensor(1.0), ad.softplus(take(1)))
    return InterfaceParams(
        add=add_vec,
        erase=erase,
        shift=shift_w,
        bookmark_gates=bookmark_gates,
        attention_gates=attention_gates,
        sharpening=sharpening,
    )


def dwm_step(
    state: DwmState, x_t: Tensor, params: dict[str, Tensor], config: DwmConfig
) -> tuple[DwmState, Tensor, InterfaceParams]:
    """One full cell step; returns the new state, output logits and the
    activated interface (for tracing)."""
    w_prev = state.attention
    r_prev = read(state.memory, w_prev)
    h_t, y_t, raw = controller_step(x_t, state.hidden, r_prev, params)
    iface = process_interface(raw, config)
    # the write happens at the pre-update attention
    memory = write(state.memory, w_prev, iface.erase, iface.add)
    gated = gate_attention(w_prev, state.bookmarks, iface.attention_gates)
    bookmarks = update_bookmarks(state.bookmarks, w_prev, iface.bookmark_gates)
    attention = sharpen(shift(gated, iface.shift), iface.sharpening)
    new_state = DwmState(hidden=h_t, attention=attention, bookmarks=bookmarks, memory=memory)
    return new_state, y_t, iface


def forward_sequence(
    config: DwmConfig,
    params: dict[str, Tensor],
    inputs: np.ndarray,
    num_addresses: int | None = None,
    collect_trace: bool = False,
    trace_memory: bool = False,
) -> tuple[list[Tensor], EpisodeTrace | None]:
    """Unroll the cell over ``inputs`` of shape [T, input_width] or
    [T, B, input_width]; memory defaults to one address per timestep.

    Returns one logit tensor per timestep and, when requested, a trace of
    detached per-step internals (attention, bookmarks, gates, erase/add,
    optionally memory snapshots) plus the final memory.
    """
    inputs = np.asarray(inputs, dtype=np.float64)
    if inputs.ndim == 2:
        inputs = inputs[:, None, :]
    if inputs.ndim != 3 or inputs.shape[0] == 0:
        raise ValueError("inputs must be a non-empty [T, B, input_width] array")
    if inputs.shape[-1] != config.input_width:
        raise ShapeError(
            f"inputs have width {inputs.shape[-1]}, expected {config.input_width}"
        )
    steps, batch = inputs.shape[0], inputs.shape[1]
    if num_addresses is None:
        num_addresses = steps
    state = init_state(config, num_addresses, batch_size=batch)
    trace = EpisodeTrace() if collect_trace else None
    logits: list[Tensor] = []
    for t in range(steps):
        state, y_t, iface = dwm_step(state, Tensor(inputs[t]), params, config)
        logits.append(y_t)
        if trace is not None:
            trace.steps.append(
                StepRecord(
                    attention=state.attention.detach(),
                    bookmarks=[b.detach() for b in state.bookmarks],
                    shift=iface.shift.detach(),
                    bookmark_gates=iface.bookmark_gates.detach(),
                    attention_gates=iface.attention_gates.detach(),
                    sharpening=iface.sharpening.detach(),
                    erase=iface.erase.detach(),
                    add=iface.add.detach(),
                    memory=state.memory.detach() if trace_memory else None,
                )
            )
    if trace is not None:
        trace.final_memory = state.memory.detach()
    return logits, trace


class Dwm:
    """Config + parameters bundled behind the shared model interface."""

    kind = "dwm"

    def __init__(self, config: DwmConfig, seed: int = 0, params: dict[str, Tensor] | None = None):
        self.config = config
        self.params = params if params is not None else create_parameters(config, seed)
        for name in ("w_h", "w_y", "w_p"):
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
        num_addresses: int | None = None,
        collect_trace: bool = False,
        trace_memory: bool = False,
    ) -> tuple[list[Tensor], EpisodeTrace | None]:
        return forward_sequence(
            self.config,
            self.params,
            inputs,
            num_addresses=num_addresses,
            collect_trace=collect_trace,
            trace_memory=trace_memory,
        )
