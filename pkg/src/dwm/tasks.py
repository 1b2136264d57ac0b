"""Seeded generators and oracles for the eight working-memory tasks.

Every episode is a time-indexed stream of 8-bit data items interleaved
with command markers and dummies:

- *data items* carry random bits on the data channels, control zero;
- *markers* set exactly one dedicated control channel to 1, data zero;
  their meaning (store/recall/subsequence type/emit cue) must be learned;
- *dummies* are all-zero items occupying the steps where the model must
  emit output.

The target mask is true exactly on the steps with a defined output; the
targets there follow the task definition (recall in order / reversed /
rotated, recall last elements, recall while ignoring or after forgetting
distractors, and so on).

Encodings per task (data_bits + control channels = input width):

================  =========================================  =====
task              control channels                           width
================  =========================================  =====
serial-recall     store, recall                               10
reverse-recall    store, recall                               10
rotate-shape      store, recall                               10
reading-span      store, recall                               10
scratch-pad       store, recall                               10
ignore            store-x, store-y, recall                    11
forget            store-x, store-y, emit, recall              12
operation-span    store-x, store-y, emit, recall              12
================  =========================================  =====

For ``forget`` and ``operation-span`` the ``emit`` marker cues the
immediate-output dummy block that directly follows each distractor
subsequence.

Generation is a pure function of (task spec, regime, batch index): the
random stream is a counter-keyed generator, so any batch is reproducible
without generating its predecessors. All episodes within a batch share
one layout (subsequence lengths, hence total length and mask) and differ
only in their random data bits, which keeps the per-episode memory size
common across the batch.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError

TASK_NAMES = (
    "serial-recall",
    "reverse-recall",
    "rotate-shape",
    "reading-span",
    "forget",
    "operation-span",
    "scratch-pad",
    "ignore",
)

SIMPLE_TASKS = frozenset({"serial-recall", "reverse-recall", "rotate-shape"})

CONTROL_CHANNELS: dict[str, tuple[str, ...]] = {
    "serial-recall": ("store", "recall"),
    "reverse-recall": ("store", "recall"),
    "rotate-shape": ("store", "recall"),
    "reading-span": ("store", "recall"),
    "scratch-pad": ("store", "recall"),
    "ignore": ("store-x", "store-y", "recall"),
    "forget": ("store-x", "store-y", "emit", "recall"),
    "operation-span": ("store-x", "store-y", "emit", "recall"),
}

PHASES = ("train", "val", "test")
_PHASE_CODE = {"train": 0, "val": 1, "test": 2}


@dataclass(frozen=True)
class TaskSpec:
    task: str
    data_bits: int = 8
    seed: int = 0

    def __post_init__(self):
        if self.task not in TASK_NAMES:
            raise ConfigError(f"unknown task {self.task!r}; choose from {TASK_NAMES}")
        if self.data_bits < 2:
            raise ConfigError("data_bits must be at least 2")

    @property
    def control_bits(self) -> int:
        return len(CONTROL_CHANNELS[self.task])

    @property
    def input_width(self) -> int:
        return self.data_bits + self.control_bits


@dataclass(frozen=True)
class GenerationRegime:
    """Subsequence length/count ranges for one evaluation phase."""

    phase: str
    subseq_len_range: tuple[int, int]
    num_subseq_range: tuple[int, int]

    def __post_init__(self):
        if self.phase not in PHASES:
            raise ConfigError(f"unknown phase {self.phase!r}; choose from {PHASES}")
        for lo, hi in (self.subseq_len_range, self.num_subseq_range):
            if lo < 1 or hi < lo:
                raise ConfigError(f"empty or invalid range ({lo}, {hi})")


def regime_for(task: str, phase: str) -> GenerationRegime:
    """The standard generation regimes: short single subsequences for
    training and progressively longer ones for validation and testing,
    with no overlap between the phases."""
    if task not in TASK_NAMES:
        raise ConfigError(f"unknown task {task!r}")
    simple = task in SIMPLE_TASKS
    table = {
        "train": ((1, 10), (1, 1)) if simple else ((1, 6), (1, 3)),
        "val": ((100, 100), (1, 1)) if simple else ((20, 20), (5, 5)),
        "test": ((1000, 1000), (1, 1)) if simple else ((20, 20), (50, 50)),
    }
    if phase not in table:
        raise ConfigError(f"unknown phase {phase!r}; choose from {PHASES}")
    lens, counts = table[phase]
    return GenerationRegime(phase=phase, subseq_len_range=lens, num_subseq_range=counts)


@dataclass
class TaskEpisode:
    task: str
    inputs: np.ndarray  # [T, input_width] 0/1 floats
    targets: np.ndarray  # [T, data_bits] 0/1 floats; zero outside the mask
    mask: np.ndarray  # [T] bool
    meta: dict = field(default_factory=dict)

    @property
    def length(self) -> int:
        return self.inputs.shape[0]


def rotate_half(item: np.ndarray) -> np.ndarray:
    """Circular shift of a bit item by half its width."""
    item = np.asarray(item)
    return np.roll(item, -(item.shape[-1] // 2), axis=-1)


def _rng(*key: int) -> np.random.Generator:
    # Philox is counter-based: any (seed, phase, batch, stream) key is
    # reachable directly.
    return np.random.Generator(np.random.Philox(key=np.random.SeedSequence(list(key)).generate_state(2, np.uint64)))


# -- layout plans ---------------------------------------------------------
#
# A plan is a list of segments, instantiated once per episode:
#   ("marker", channel)                 one marker item
#   ("items", group, n)                 n fresh data items stored as `group`
#   ("dummies", [(group, row, tf)...])  one dummy per entry; the entry says
#                                       which stored row it must reproduce
#                                       (row -1 = last) and with which
#                                       transform (None or "rotate").


def _plan_recall_family(task: str, n: int) -> list:
    if task == "serial-recall":
        targets = [("x0", j, None) for j in range(n)]
    elif task == "reverse-recall":
        targets = [("x0", n - 1 - j, None) for j in range(n)]
    else:  # rotate-shape
        targets = [("x0", j, "rotate") for j in range(n)]
    return [
        ("marker", "store"),
        ("items", "x0", n),
        ("marker", "recall"),
        ("dummies", targets),
    ]


def _plan_reading_span(lengths: list[int]) -> list:
    plan = []
    for i, n in enumerate(lengths):
        plan += [("marker", "store"), ("items", f"x{i}", n)]
    plan += [("marker", "recall"), ("dummies", [(f"x{i}", -1, None) for i in range(len(lengths))])]
    return plan


def _plan_scratch_pad(lengths: list[int]) -> list:
    plan = []
    for i, n in enumerate(lengths):
        plan += [("marker", "store"), ("items", f"x{i}", n)]
    last = len(lengths) - 1
    plan += [("marker", "recall"), ("dummies", [(f"x{last}", j, None) for j in range(lengths[last])])]
    return plan


def _plan_ignore(x_lengths: list[int], y_lengths: list[int]) -> list:
    plan = []
    for i, (nx, ny) in enumerate(zip(x_lengths, y_lengths)):
        plan += [
            ("marker", "store-x"),
            ("items", f"x{i}", nx),
            ("marker", "store-y"),
            ("items", f"y{i}", ny),
        ]
    finals = [(f"x{i}", j, None) for i, nx in enumerate(x_lengths) for j in range(nx)]
    plan += [("marker", "recall"), ("dummies", finals)]
    return plan


def _plan_forget(x_lengths: list[int], y_lengths: list[int]) -> list:
    plan = []
    for i, (nx, ny) in enumerate(zip(x_lengths, y_lengths)):
        plan += [
            ("marker", "store-x"),
            ("items", f"x{i}", nx),
            ("marker", "store-y"),
            ("items", f"y{i}", ny),
            ("marker", "emit"),
            ("dummies", [(f"y{i}", j, None) for j in range(ny)]),
        ]
    finals = [(f"x{i}", j, None) for i, nx in enumerate(x_lengths) for j in range(nx)]
    plan += [("marker", "recall"), ("dummies", finals)]
    return plan


def _plan_operation_span(x_lengths: list[int]) -> list:
    plan = []
    for i, nx in enumerate(x_lengths):
        plan += [
            ("marker", "store-x"),
            ("items", f"x{i}", nx),
            ("marker", "store-y"),
            ("items", f"y{i}", 1),
            ("marker", "emit"),
            ("dummies", [(f"y{i}", 0, "rotate")]),
        ]
    finals = [(f"x{i}", j, None) for i, nx in enumerate(x_lengths) for j in range(nx)]
    plan += [("marker", "recall"), ("dummies", finals)]
    return plan


def _draw_plan(task: str, regime: GenerationRegime, rng: np.random.Generator) -> list:
    len_lo, len_hi = regime.subseq_len_range
    num_lo, num_hi = regime.num_subseq_range
    k = int(rng.integers(num_lo, num_hi + 1))
    draw = lambda: int(rng.integers(len_lo, len_hi + 1))
    if task in SIMPLE_TASKS:
        return _plan_recall_family(task, draw())
    if task == "reading-span":
        return _plan_reading_span([draw() for _ in range(k)])
    if task == "scratch-pad":
        return _plan_scratch_pad([draw() for _ in range(k)])
    if task == "ignore":
        return _plan_ignore([draw() for _ in range(k)], [draw() for _ in range(k)])
    if task == "forget":
        return _plan_forget([draw() for _ in range(k)], [draw() for _ in range(k)])
    if task == "operation-span":
        return _plan_operation_span([draw() for _ in range(k)])
    raise ConfigError(f"unknown task {task!r}")


def _instantiate(spec: TaskSpec, plan: list, rng: np.random.Generator, phase: str) -> TaskEpisode:
    channels = CONTROL_CHANNELS[spec.task]
    width = spec.input_width
    bits = spec.data_bits
    groups: dict[str, np.ndarray] = {}
    for seg in plan:
        if seg[0] == "items":
            groups[seg[1]] = rng.integers(0, 2, size=(seg[2], bits)).astype(np.float64)

    rows: list[np.ndarray] = []
    targets: list[np.ndarray] = []
    mask: list[bool] = []
    blocks: list[dict] = []
    for seg in plan:
        t0 = len(rows)
        if seg[0] == "marker":
            row = np.zeros(width)
            row[bits + channels.index(seg[1])] = 1.0
            rows.append(row)
            targets.append(np.zeros(bits))
            mask.append(False)
            blocks.append({"kind": f"marker:{seg[1]}", "start": t0, "end": t0 + 1})
        elif seg[0] == "items":
            for row8 in groups[seg[1]]:
                row = np.zeros(width)
                row[:bits] = row8
                rows.append(row)
                targets.append(np.zeros(bits))
                mask.append(False)
            blocks.append({"kind": f"items:{seg[1]}", "start": t0, "end": len(rows)})
        else:  # dummies
            for group, idx, tf in seg[1]:
                item = groups[group][idx]
                rows.append(np.zeros(width))
                targets.append(rotate_half(item) if tf == "rotate" else np.array(item))
                mask.append(True)
            blocks.append({"kind": "dummies", "start": t0, "end": len(rows)})
    meta = {
        "phase": phase,
        "blocks": blocks,
        "group_sizes": {g: int(m.shape[0]) for g, m in groups.items()},
    }
    return TaskEpisode(
        task=spec.task,
        inputs=np.array(rows),
        targets=np.array(targets),
        mask=np.array(mask, dtype=bool),
        meta=meta,
    )


def generate(
    spec: TaskSpec, regime: GenerationRegime, batch_size: int, batch_index: int = 0
) -> list[TaskEpisode]:
    """One batch of episodes sharing a common layout.

    The layout (subsequence lengths, markers, dummy placement) is drawn
    once per batch so every episode has the same length and mask; each
    episode then gets independent data bits.
    """
    if batch_size < 1:
        raise ConfigError(f"batch_size must be positive, got {batch_size}")
    phase_code = _PHASE_CODE[regime.phase]
    layout_rng = _rng(spec.seed, phase_code, batch_index, 0)
    plan = _draw_plan(spec.task, regime, layout_rng)
    episodes = []
    for i in range(batch_size):
        data_rng = _rng(spec.seed, phase_code, batch_index, 1 + i)
        episodes.append(_instantiate(spec, plan, data_rng, regime.phase))
    return episodes


def stack_episodes(episodes: list[TaskEpisode]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Stack a common-layout batch into [T, B, width] inputs,
    [T, B, bits] targets and the shared [T] mask."""
    if not episodes:
        raise ValueError("empty episode batch")
    mask = episodes[0].mask
    for ep in episodes[1:]:
        if ep.length != episodes[0].length or not np.array_equal(ep.mask, mask):
            raise ValueError("episodes do not share a common layout")
    inputs = np.stack([ep.inputs for ep in episodes], axis=1)
    targets = np.stack([ep.targets for ep in episodes], axis=1)
    return inputs, targets, mask


def memory_size_for(episodes: list[TaskEpisode]) -> int:
    """Per-episode memory size: one address per input step, common
    across the batch."""
    if not episodes:
        raise ValueError("empty episode batch")
    length = episodes[0].length
    if any(ep.length != length for ep in episodes):
        raise ValueError("ragged batch: episodes differ in length")
    return length


def min_memory_size(episodes: list[TaskEpisode]) -> int:
    """Smallest admissible memory override: one subsequence must fit."""
    return max(
        max(ep.meta["group_sizes"].values(), default=1) for ep in episodes
    )


def oracle_solve(episode: TaskEpisode) -> np.ndarray:
    """Reference predictions: exact targets at masked steps, zeros
    elsewhere. Scores accuracy 1.0 by construction."""
    inputs, targets, mask = episode.inputs, episode.targets, episode.mask
    if (
        inputs.ndim != 2
        or targets.ndim != 2
        or mask.ndim != 1
        or inputs.shape[0] != targets.shape[0]
        or inputs.shape[0] != mask.shape[0]
    ):
        raise ValueError("malformed episode")
    out = np.zeros_like(targets)
    out[mask] = targets[mask]
    return out


# -- episode files --------------------------------------------------------


def write_episodes(path: str | Path, episodes: list[TaskEpisode]) -> None:
    """Line-delimited JSON, one episode object per line."""
    path = Path(path)
    with path.open("w") as fh:
        for ep in episodes:
            fh.write(
                json.dumps(
                    {
                        "task": ep.task,
                        "inputs": ep.inputs.astype(int).tolist(),
                        "targets": ep.targets.astype(int).tolist(),
                        "mask": ep.mask.astype(int).tolist(),
                        "meta": ep.meta,
                    }
                )
            )
            fh.write("\n")


def read_episodes(path: str | Path) -> list[TaskEpisode]:
    episodes = []
    with Path(path).open() as fh:
        for line in fh:
            if not line.strip():
                continue
            obj = json.loads(line)
            episodes.append(
                TaskEpisode(
                    task=obj["task"],
                    inputs=np.array(obj["inputs"], dtype=np.float64),
                    targets=np.array(obj["targets"], dtype=np.float64),
                    mask=np.array(obj["mask"], dtype=bool),
                    meta=obj.get("meta", {}),
                )
            )
    return episodes
