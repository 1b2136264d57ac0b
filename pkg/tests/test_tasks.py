"""Generator layout, oracle and determinism tests for all eight tasks."""

import numpy as np
import pytest

from dwm.errors import ConfigError
from dwm.tasks import (
    CONTROL_CHANNELS,
    SIMPLE_TASKS,
    TASK_NAMES,
    GenerationRegime,
    TaskSpec,
    generate,
    memory_size_for,
    min_memory_size,
    oracle_solve,
    read_episodes,
    regime_for,
    rotate_half,
    stack_episodes,
    write_episodes,
)


def fixed_regime(n, k=1, phase="train"):
    return GenerationRegime(phase=phase, subseq_len_range=(n, n), num_subseq_range=(k, k))


def data_rows(episode, spec):
    """Steps holding data items (some data bit set, no control bits)."""
    data = episode.inputs[:, : spec.data_bits]
    ctrl = episode.inputs[:, spec.data_bits :]
    return (data.sum(axis=1) > 0) & (ctrl.sum(axis=1) == 0)


class TestRotateHalf:
    def test_zero_fixed_point(self):
        assert np.array_equal(rotate_half(np.zeros(8)), np.zeros(8))

    def test_half_swap(self):
        item = np.array([1, 1, 1, 1, 0, 0, 0, 0])
        assert np.array_equal(rotate_half(item), [0, 0, 0, 0, 1, 1, 1, 1])

    def test_involution(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            item = rng.integers(0, 2, 8)
            assert np.array_equal(rotate_half(rotate_half(item)), item)


class TestSerialRecallLayout:
    def test_structure(self):
        spec = TaskSpec("serial-recall", seed=3)
        ep = generate(spec, fixed_regime(2), 1)[0]
        assert ep.length == 6  # store, a, b, recall, dummy, dummy
        assert np.array_equal(ep.mask, [False, False, False, False, True, True])
        # markers on dedicated channels, data zero there
        assert ep.inputs[0, 8] == 1.0 and ep.inputs[3, 9] == 1.0
        assert np.all(ep.inputs[0, :8] == 0.0) and np.all(ep.inputs[3, :8] == 0.0)
        # dummies all-zero
        assert np.all(ep.inputs[4:] == 0.0)
        # recalled in order
        assert np.array_equal(ep.targets[4], ep.inputs[1, :8])
        assert np.array_equal(ep.targets[5], ep.inputs[2, :8])

    def test_reverse_recall_reverses(self):
        ep = generate(TaskSpec("reverse-recall", seed=3), fixed_regime(2), 1)[0]
        assert np.array_equal(ep.targets[4], ep.inputs[2, :8])
        assert np.array_equal(ep.targets[5], ep.inputs[1, :8])

    def test_rotate_shape_rotates(self):
        ep = generate(TaskSpec("rotate-shape", seed=3), fixed_regime(3), 1)[0]
        masked = np.flatnonzero(ep.mask)
        for j, t in enumerate(masked):
            assert np.array_equal(ep.targets[t], rotate_half(ep.inputs[1 + j, :8]))


class TestComplexLayouts:
    def test_reading_span_targets_last_elements(self):
        spec = TaskSpec("reading-span", seed=5)
        ep = generate(spec, fixed_regime(3, k=2), 1)[0]
        # layout: (store + 3 items) x2, recall, 2 dummies
        assert ep.length == 2 * 4 + 1 + 2
        masked = np.flatnonzero(ep.mask)
        assert len(masked) == 2
        assert np.array_equal(ep.targets[masked[0]], ep.inputs[3, :8])  # last of group 0
        assert np.array_equal(ep.targets[masked[1]], ep.inputs[7, :8])  # last of group 1

    def test_scratch_pad_returns_last_group(self):
        spec = TaskSpec("scratch-pad", seed=6)
        ep = generate(spec, fixed_regime(2, k=3), 1)[0]
        assert ep.length == 3 * 3 + 1 + 2
        masked = np.flatnonzero(ep.mask)
        last_group_rows = ep.inputs[7:9, :8]  # items of the third group
        assert np.array_equal(ep.targets[masked], last_group_rows)

    def test_ignore_recalls_only_x(self):
        spec = TaskSpec("ignore", seed=7)
        ep = generate(spec, fixed_regime(2, k=2), 1)[0]
        # (mx, 2 items, my, 2 items) x2, recall, 4 dummies
        assert ep.length == 2 * 6 + 1 + 4
        masked = np.flatnonzero(ep.mask)
        x_rows = np.vstack([ep.inputs[1:3, :8], ep.inputs[7:9, :8]])
        assert np.array_equal(ep.targets[masked], x_rows)

    def test_forget_emits_y_immediately_then_recalls_x(self):
        spec = TaskSpec("forget", seed=8)
        ep = generate(spec, fixed_regime(1, k=2), 1)[0]
        # per group: mx, x, my, y, emit, dummy -> 6 steps; then recall + 2 dummies
        assert ep.length == 2 * 6 + 1 + 2
        masked = np.flatnonzero(ep.mask)
        assert list(masked) == [5, 11, 13, 14]
        assert np.array_equal(ep.targets[5], ep.inputs[3, :8])  # y_1 right after its block
        assert np.array_equal(ep.targets[11], ep.inputs[9, :8])  # y_2
        assert np.array_equal(ep.targets[13], ep.inputs[1, :8])  # x_1 at the end
        assert np.array_equal(ep.targets[14], ep.inputs[7, :8])  # x_2

    def test_operation_span_rotates_y_immediately(self):
        spec = TaskSpec("operation-span", seed=9)
        ep = generate(spec, fixed_regime(2, k=1), 1)[0]
        # mx, x1, x2, my, y, emit, dummy, recall, 2 dummies
        assert ep.length == 10
        assert np.array_equal(ep.targets[6], rotate_half(ep.inputs[4, :8]))
        assert np.array_equal(ep.targets[8], ep.inputs[1, :8])
        assert np.array_equal(ep.targets[9], ep.inputs[2, :8])

    def test_operation_span_rotation_example(self):
        # any y equal to 11110000 must be emitted as 00001111
        spec = TaskSpec("operation-span", seed=0)
        found = False
        for b in range(200):
            ep = generate(spec, fixed_regime(2, k=2), 1, batch_index=b)[0]
            data = ep.inputs[:, :8]
            for block in ep.meta["blocks"]:
                if block["kind"].startswith("items:y"):
                    y = data[block["start"]]
                    if np.array_equal(y, [1, 1, 1, 1, 0, 0, 0, 0]):
                        t = block["end"] + 1  # emit marker, then the dummy
                        assert np.array_equal(ep.targets[t], [0, 0, 0, 0, 1, 1, 1, 1])
                        found = True
        assert found, "no y block drew the probe pattern in 200 batches"


class TestRegimes:
    def test_simple_tables(self):
        assert regime_for("serial-recall", "train").subseq_len_range == (1, 10)
        assert regime_for("serial-recall", "val").subseq_len_range == (100, 100)
        assert regime_for("serial-recall", "test").subseq_len_range == (1000, 1000)

    def test_complex_tables(self):
        assert regime_for("ignore", "train").subseq_len_range == (1, 6)
        assert regime_for("ignore", "train").num_subseq_range == (1, 3)
        assert regime_for("ignore", "val").num_subseq_range == (5, 5)
        assert regime_for("ignore", "test").num_subseq_range == (50, 50)

    def test_phases_never_overlap(self):
        for task in TASK_NAMES:
            regimes = [regime_for(task, p) for p in ("train", "val", "test")]
            train, val, test = (r.subseq_len_range for r in regimes)
            assert train[1] < val[0] and train[1] < test[0]
            if val == test:  # complex tasks separate by subsequence count
                counts = [r.num_subseq_range for r in regimes]
                assert counts[0][1] < counts[1][0] < counts[2][0]

    def test_bad_range_rejected(self):
        with pytest.raises(ConfigError):
            GenerationRegime("train", (0, 5), (1, 1))
        with pytest.raises(ConfigError):
            GenerationRegime("train", (5, 2), (1, 1))


class TestGenerate:
    def test_deterministic(self):
        spec = TaskSpec("ignore", seed=42)
        regime = regime_for("ignore", "train")
        a = generate(spec, regime, 3, batch_index=5)
        b = generate(spec, regime, 3, batch_index=5)
        for ea, eb in zip(a, b):
            assert np.array_equal(ea.inputs, eb.inputs)
            assert np.array_equal(ea.targets, eb.targets)

    def test_batches_differ(self):
        spec = TaskSpec("serial-recall", seed=42)
        regime = regime_for("serial-recall", "train")
        a = generate(spec, regime, 1, batch_index=0)[0]
        b = generate(spec, regime, 1, batch_index=1)[0]
        assert a.length != b.length or not np.array_equal(a.inputs, b.inputs)

    def test_common_layout_within_batch(self):
        for task in TASK_NAMES:
            spec = TaskSpec(task, seed=1)
            eps = generate(spec, regime_for(task, "train"), 4, batch_index=2)
            inputs, targets, mask = stack_episodes(eps)
            assert inputs.shape[1] == 4
            assert memory_size_for(eps) == inputs.shape[0]

    def test_item_classes_disjoint(self):
        for task in TASK_NAMES:
            spec = TaskSpec(task, seed=2)
            ep = generate(spec, regime_for(task, "train"), 1, batch_index=1)[0]
            data = ep.inputs[:, : spec.data_bits]
            ctrl = ep.inputs[:, spec.data_bits :]
            marker = ctrl.sum(axis=1) > 0
            assert np.all(data[marker] == 0.0)
            assert np.all(ctrl.sum(axis=1) <= 1.0)
            dummy = (data.sum(axis=1) == 0) & ~marker
            assert np.all(ep.inputs[dummy] == 0.0)

    def test_control_widths(self):
        assert TaskSpec("serial-recall").input_width == 10
        assert TaskSpec("ignore").input_width == 11
        assert TaskSpec("forget").input_width == 12
        assert TaskSpec("operation-span").input_width == 12
        for task, channels in CONTROL_CHANNELS.items():
            assert 2 <= len(channels) <= 4

    def test_unknown_task_rejected(self):
        with pytest.raises(ConfigError):
            TaskSpec("free-recall")

    def test_bad_batch_size(self):
        with pytest.raises(ConfigError):
            generate(TaskSpec("serial-recall"), regime_for("serial-recall", "train"), 0)


class TestMemorySize:
    def test_serial_recall_length_ten(self):
        eps = generate(TaskSpec("serial-recall", seed=0), fixed_regime(10), 2)
        assert memory_size_for(eps) == 22  # 1 + 10 + 1 + 10

    def test_serial_recall_length_one(self):
        eps = generate(TaskSpec("serial-recall", seed=0), fixed_regime(1), 1)
        assert memory_size_for(eps) == 4

    def test_min_override_fits_one_subsequence(self):
        eps = generate(TaskSpec("scratch-pad", seed=1), fixed_regime(4, k=3), 1)
        assert min_memory_size(eps) == 4

    def test_ragged_batch_rejected(self):
        a = generate(TaskSpec("serial-recall", seed=0), fixed_regime(2), 1)
        b = generate(TaskSpec("serial-recall", seed=0), fixed_regime(3), 1)
        with pytest.raises(ValueError):
            memory_size_for(a + b)


class TestOracle:
    def test_oracle_is_perfect(self):
        for task in TASK_NAMES:
            spec = TaskSpec(task, seed=3)
            ep = generate(spec, regime_for(task, "train"), 1, batch_index=4)[0]
            pred = oracle_solve(ep)
            assert np.array_equal(pred[ep.mask], ep.targets[ep.mask])
            assert np.all(pred[~ep.mask] == 0.0)

    def test_constant_half_predictor_near_chance(self):
        # all-zero predictions against random bits: Monte-Carlo over >= 1e4 bits
        spec = TaskSpec("serial-recall", seed=11)
        bits = 0
        hits = 0
        b = 0
        while bits < 10_000:
            ep = generate(spec, fixed_regime(10), 1, batch_index=b)[0]
            truth = ep.targets[ep.mask] > 0.5
            hits += int(np.sum(~truth))
            bits += truth.size
            b += 1
        assert hits / bits == pytest.approx(0.5, abs=0.02)

    def test_reading_span_oracle_returns_last_elements(self):
        spec = TaskSpec("reading-span", seed=12)
        ep = generate(spec, fixed_regime(4, k=3), 1)[0]
        pred = oracle_solve(ep)
        masked = np.flatnonzero(ep.mask)
        for i, t in enumerate(masked):
            block = [b for b in ep.meta["blocks"] if b["kind"] == f"items:x{i}"][0]
            assert np.array_equal(pred[t], ep.inputs[block["end"] - 1, :8])

    def test_malformed_episode_rejected(self):
        spec = TaskSpec("serial-recall", seed=0)
        ep = generate(spec, fixed_regime(2), 1)[0]
        ep.targets = ep.targets[:-1]
        with pytest.raises(ValueError):
            oracle_solve(ep)


class TestEpisodeFiles:
    def test_roundtrip(self, tmp_path):
        spec = TaskSpec("forget", seed=13)
        eps = generate(spec, regime_for("forget", "train"), 3, batch_index=1)
        path = tmp_path / "episodes.jsonl"
        write_episodes(path, eps)
        back = read_episodes(path)
        assert len(back) == 3
        for a, b in zip(eps, back):
            assert a.task == b.task
            assert np.array_equal(a.inputs, b.inputs)
            assert np.array_equal(a.targets, b.targets)
            assert np.array_equal(a.mask, b.mask)
