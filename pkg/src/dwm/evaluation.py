"""Length-generalization evaluation, trace export and heatmap rendering.

``evaluate`` scores a model (or one of the reference predictors) on
fresh batches from a given phase regime and reports masked-bit accuracy.
``record_trace``/``write_trace`` export per-timestep internals
(attention, bookmarks, gates, erase/add vectors, memory snapshots) as
line-delimited JSON for strategy analysis, and ``render_heatmap`` turns
any recorded field into a grayscale PGM image (rows = addresses or bits,
columns = time; the final memory snapshot has columns = addresses).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .autodiff import no_grad
from .errors import ConfigError
from .model import Dwm, EpisodeTrace
from .tasks import (
    TaskEpisode,
    TaskSpec,
    generate,
    memory_size_for,
    min_memory_size,
    oracle_solve,
    regime_for,
    stack_episodes,
)
from .training import accuracy, bce_loss

ORACLE = "oracle"
CONSTANT_HALF = "constant-half"


@dataclass
class EvalRow:
    task: str
    phase: str
    model_id: str
    batches: int
    episodes: int
    masked_bits: int
    accuracy: float
    mean_loss: float | None = None


def _predictor_accuracy(predictor: str, episodes: list[TaskEpisode]) -> tuple[float, int]:
    hits = 0
    bits = 0
    for ep in episodes:
        truth = ep.targets[ep.mask] > 0.5
        if predictor == ORACLE:
            pred = oracle_solve(ep)[ep.mask] > 0.5
        else:  # constant probability 0.5 thresholds to all-zero predictions
            pred = np.zeros_like(truth, dtype=bool)
        hits += int(np.sum(pred == truth))
        bits += truth.size
    return hits / bits, bits


def evaluate(
    model,
    task_spec: TaskSpec,
    phase: str,
    num_batches: int = 4,
    batch_size: int = 16,
    batch_start: int = 1,
    memory_size: int | None = None,
) -> EvalRow:
    """Masked-bit accuracy over fresh batches of one phase regime.

    ``model`` is a forward-capable model, or the string ``"oracle"`` /
    ``"constant-half"`` for the reference predictors. Deterministic given
    (task seed, phase, batch_start).
    """
    if num_batches < 1:
        raise ConfigError("num_batches must be >= 1")
    regime = regime_for(task_spec.task, phase)
    is_predictor = isinstance(model, str)
    if is_predictor and model not in (ORACLE, CONSTANT_HALF):
        raise ConfigError(f"unknown predictor {model!r}")
    if not is_predictor and model.input_width != task_spec.input_width:
        raise ConfigError(
            f"model input width {model.input_width} does not match "
            f"task encoding width {task_spec.input_width}"
        )
    total_hits = 0.0
    total_bits = 0
    losses = []
    for i in range(num_batches):
        episodes = generate(task_spec, regime, batch_size, batch_index=batch_start + i)
        if is_predictor:
            acc, bits = _predictor_accuracy(model, episodes)
            total_hits += acc * bits
            total_bits += bits
            continue
        num_addresses = memory_size if memory_size is not None else memory_size_for(episodes)
        if memory_size is not None and memory_size < min_memory_size(episodes):
            raise ConfigError(
                f"memory_size={memory_size} cannot fit one subsequence "
                f"(needs >= {min_memory_size(episodes)})"
            )
        inputs, targets, mask = stack_episodes(episodes)
        with no_grad():
            logits, _ = model.forward(inputs, num_addresses=num_addresses)
            losses.append(bce_loss(logits, targets, mask).item())
        bits = int(mask.sum()) * targets.shape[1] * targets.shape[2]
        total_hits += accuracy(logits, targets, mask) * bits
        total_bits += bits
    model_id = model if is_predictor else model.kind
    return EvalRow(
        task=task_spec.task,
        phase=phase,
        model_id=model_id,
        batches=num_batches,
        episodes=num_batches * batch_size,
        masked_bits=total_bits,
        accuracy=total_hits / total_bits,
        mean_loss=float(np.mean(losses)) if losses else None,
    )


def write_report_csv(path: str | Path, rows: list[EvalRow]) -> None:
    import csv

    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["task", "phase", "model", "batches", "episodes", "masked_bits", "accuracy", "mean_loss"]
        )
        for r in rows:
            writer.writerow(
                [
                    r.task,
                    r.phase,
                    r.model_id,
                    r.batches,
                    r.episodes,
                    r.masked_bits,
                    f"{r.accuracy:.6f}",
                    f"{r.mean_loss:.10g}" if r.mean_loss is not None else "",
                ]
            )


# -- trace export ----------------------------------------------------------


def record_trace(
    model: Dwm,
    episode: TaskEpisode,
    trace_memory: bool = False,
    memory_size: int | None = None,
) -> tuple[EpisodeTrace, np.ndarray]:
    """Run one episode (batch of 1) with trace capture; returns the trace
    and the [T, output_width] logits."""
    num_addresses = memory_size if memory_size is not None else episode.length
    with no_grad():
        logits, trace = model.forward(
            episode.inputs[:, None, :],
            num_addresses=num_addresses,
            collect_trace=True,
            trace_memory=trace_memory,
        )
    return trace, np.stack([t.data[0] for t in logits])


def write_trace(
    path: str | Path,
    trace: EpisodeTrace,
    episode: TaskEpisode,
    outputs: np.ndarray | None = None,
) -> None:
    """Line-delimited JSON: one meta line, one line per timestep, one
    final-memory line."""

    def row(a: np.ndarray) -> list:
        return np.asarray(a)[0].tolist()  # drop the batch-of-1 axis

    with Path(path).open("w") as fh:
        meta = {
            "type": "meta",
            "task": episode.task,
            "length": episode.length,
            "num_addresses": int(np.asarray(trace.final_memory).shape[-1]),
            "num_bookmarks": len(trace.steps[0].bookmarks) if trace.steps else 0,
            "per_step_memory": trace.steps[0].memory is not None if trace.steps else False,
            "blocks": episode.meta.get("blocks", []),
            "mask": episode.mask.astype(int).tolist(),
        }
        fh.write(json.dumps(meta) + "\n")
        for t, step in enumerate(trace.steps):
            record = {
                "type": "step",
                "t": t,
                "attention": row(step.attention),
                "bookmarks": [row(b) for b in step.bookmarks],
                "gates": {
                    "shift": row(step.shift),
                    "bookmark": row(step.bookmark_gates),
                    "attention": row(step.attention_gates),
                    "sharpening": row(step.sharpening)[0],
                },
                "erase": row(step.erase),
                "add": row(step.add),
            }
            if outputs is not None:
                record["output"] = np.asarray(outputs[t]).tolist()
            if step.memory is not None:
                record["memory"] = np.asarray(step.memory)[0].tolist()
            fh.write(json.dumps(record) + "\n")
        final = {"type": "final-memory", "matrix": np.asarray(trace.final_memory)[0].tolist()}
        fh.write(json.dumps(final) + "\n")


def read_trace(path: str | Path) -> dict:
    """Parse a trace file into {"meta": ..., "steps": [...],
    "final_memory": array}."""
    meta = None
    steps = []
    final_memory = None
    with Path(path).open() as fh:
        for line in fh:
            if not line.strip():
                continue
            obj = json.loads(line)
            if obj["type"] == "meta":
                meta = obj
            elif obj["type"] == "step":
                steps.append(obj)
            elif obj["type"] == "final-memory":
                final_memory = np.array(obj["matrix"], dtype=np.float64)
    if meta is None or final_memory is None:
        raise ValueError(f"{path} is not a complete trace file")
    return {"meta": meta, "steps": steps, "final_memory": final_memory}


# -- strategy analysis -------------------------------------------------------


def overwrite_signature(trace: EpisodeTrace, episode: TaskEpisode) -> dict:
    """Overwrite-strategy indicators for a multi-subsequence episode.

    Operationalized as argmax statements over the recorded gates and
    attention: at the store markers of every subsequence after the first,
    an overwriting model routes its attention through a bookmark instead
    of the pass-through gate, and it stores consecutive subsequences into
    the same addresses. Returns the fraction of such marker steps whose
    attention-gate argmax selects a bookmark, the overlap between the
    first and last subsequence's write addresses, and the combined
    verdict.
    """
    blocks = episode.meta.get("blocks", [])
    store_markers = [b for b in blocks if b["kind"].startswith("marker:store")]
    item_blocks = [b for b in blocks if b["kind"].startswith("items:")]
    if len(store_markers) < 2 or len(item_blocks) < 2:
        raise ValueError("overwrite signature needs at least two stored subsequences")

    jumps = 0
    later_markers = store_markers[1:]
    for marker in later_markers:
        gates = np.asarray(trace.steps[marker["start"]].attention_gates)[0]
        if int(np.argmax(gates)) >= 1:  # a bookmark, not the pass-through gate
            jumps += 1
    jump_fraction = jumps / len(later_markers)

    def write_addresses(block) -> set[int]:
        # the item arriving at step t is written at the pre-step attention,
        # i.e. the attention recorded at step t-1
        addresses = set()
        for t in range(block["start"], block["end"]):
            w = np.asarray(trace.steps[t - 1].attention)[0] if t > 0 else None
            addresses.add(0 if w is None else int(np.argmax(w)))
        return addresses

    first, last = write_addresses(item_blocks[0]), write_addresses(item_blocks[-1])
    reuse = len(first & last) / max(1, len(first))
    return {
        "marker_jump_fraction": jump_fraction,
        "address_reuse": reuse,
        "overwrite": jump_fraction >= 0.5 and reuse >= 0.5,
    }


# -- heatmaps ---------------------------------------------------------------

TRACE_FIELDS = (
    "attention",
    "bookmark<N>",
    "shift",
    "bookmark-gates",
    "attention-gates",
    "erase",
    "add",
    "memory",
)


def _field_matrix(trace: dict, field: str) -> np.ndarray:
    steps = trace["steps"]
    if field == "memory":
        return trace["final_memory"]
    if field == "attention":
        series = [s["attention"] for s in steps]
    elif field.startswith("bookmark") and field[len("bookmark") :].isdigit():
        idx = int(field[len("bookmark") :])
        if steps and idx >= len(steps[0]["bookmarks"]):
            raise ConfigError(f"trace has no bookmark {idx}")
        series = [s["bookmarks"][idx] for s in steps]
    elif field == "shift":
        series = [s["gates"]["shift"] for s in steps]
    elif field == "bookmark-gates":
        series = [s["gates"]["bookmark"] for s in steps]
    elif field == "attention-gates":
        series = [s["gates"]["attention"] for s in steps]
    elif field in ("erase", "add"):
        series = [s[field] for s in steps]
    else:
        raise ConfigError(f"unknown trace field {field!r}; known: {TRACE_FIELDS}")
    return np.array(series, dtype=np.float64).T  # rows = entries, columns = time


def render_heatmap(trace_path: str | Path, field: str, out_path: str | Path) -> np.ndarray:
    """Min-max normalized grayscale PGM of one trace field; a constant
    field maps to mid-gray (128). Returns the pixel matrix."""
    matrix = _field_matrix(read_trace(trace_path), field)
    lo, hi = float(matrix.min()), float(matrix.max())
    if hi > lo:
        pixels = np.rint((matrix - lo) / (hi - lo) * 255.0).astype(np.uint8)
    else:
        pixels = np.full(matrix.shape, 128, dtype=np.uint8)
    write_pgm(out_path, pixels)
    return pixels


def write_pgm(path: str | Path, pixels: np.ndarray) -> None:
    """Binary PGM (P5), 8-bit grayscale."""
    pixels = np.asarray(pixels, dtype=np.uint8)
    if pixels.ndim != 2:
        raise ValueError("PGM needs a 2-D pixel matrix")
    header = f"P5\n{pixels.shape[1]} {pixels.shape[0]}\n255\n".encode()
    Path(path).write_bytes(header + pixels.tobytes())


def read_pgm(path: str | Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    fields = []
    pos = 0
    while len(fields) < 4:  # magic, width, height, maxval
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if raw[pos : pos + 1] == b"#":
            while pos < len(raw) and raw[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        fields.append(raw[start:pos])
    pos += 1  # single whitespace after maxval
    if fields[0] != b"P5":
        raise ValueError("not a binary PGM file")
    width, height = int(fields[1]), int(fields[2])
    return np.frombuffer(raw[pos : pos + width * height], dtype=np.uint8).reshape(height, width)
