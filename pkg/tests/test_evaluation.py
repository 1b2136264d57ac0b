"""Evaluation, trace export, heatmap and checkpoint tests."""

import json

import numpy as np
import pytest

from dwm.baseline import BaselineConfig, RecurrentBaseline
from dwm.checkpoint import (
    build_id,
    load_checkpoint,
    read_manifest,
    save_checkpoint,
    write_manifest,
)
from dwm.errors import ConfigError
from dwm.evaluation import (
    evaluate,
    read_pgm,
    read_trace,
    record_trace,
    render_heatmap,
    write_pgm,
    write_trace,
)
from dwm.model import Dwm, DwmConfig
from dwm.tasks import GenerationRegime, TaskSpec, generate


def small_dwm(task="serial-recall", seed=0):
    spec = TaskSpec(task)
    return Dwm(DwmConfig(input_width=spec.input_width, output_width=8, hidden_size=5), seed=seed)


class TestEvaluate:
    def test_oracle_scores_one_everywhere(self):
        for task in ("serial-recall", "ignore"):
            row = evaluate("oracle", TaskSpec(task, seed=0), "train", num_batches=2, batch_size=4)
            assert row.accuracy == 1.0
            assert row.model_id == "oracle"

    def test_constant_half_near_chance(self):
        row = evaluate(
            "constant-half", TaskSpec("serial-recall", seed=1), "train", num_batches=20, batch_size=8
        )
        assert row.accuracy == pytest.approx(0.5, abs=0.03)

    def test_untrained_model_near_chance_on_val(self):
        row = evaluate(small_dwm(seed=7), TaskSpec("serial-recall", seed=2), "val", num_batches=1)
        assert row.accuracy == pytest.approx(0.5, abs=0.04)
        assert row.mean_loss is not None and np.isfinite(row.mean_loss)

    def test_deterministic(self):
        spec = TaskSpec("serial-recall", seed=3)
        model = small_dwm(seed=5)
        a = evaluate(model, spec, "train", num_batches=2, batch_size=4)
        b = evaluate(model, spec, "train", num_batches=2, batch_size=4)
        assert a.accuracy == b.accuracy and a.mean_loss == b.mean_loss

    def test_width_mismatch_rejected(self):
        with pytest.raises(ConfigError):
            evaluate(small_dwm("serial-recall"), TaskSpec("forget"), "train", num_batches=1)

    def test_unknown_predictor_rejected(self):
        with pytest.raises(ConfigError):
            evaluate("parrot", TaskSpec("serial-recall"), "train")


class TestTrace:
    def test_roundtrip_exact_values(self, tmp_path):
        spec = TaskSpec("serial-recall", seed=4)
        regime = GenerationRegime("train", (3, 3), (1, 1))
        episode = generate(spec, regime, 1, batch_index=1)[0]
        model = small_dwm(seed=6)
        trace, outputs = record_trace(model, episode, trace_memory=True)
        assert len(trace) == episode.length
        path = tmp_path / "trace.jsonl"
        write_trace(path, trace, episode, outputs=outputs)
        back = read_trace(path)
        assert back["meta"]["task"] == "serial-recall"
        assert back["meta"]["length"] == episode.length
        assert len(back["steps"]) == episode.length
        for t, step in enumerate(back["steps"]):
            assert np.array_equal(step["attention"], trace.steps[t].attention[0])
            assert np.array_equal(step["memory"], trace.steps[t].memory[0])
            assert step["gates"]["sharpening"] == trace.steps[t].sharpening[0][0]
        assert np.array_equal(back["final_memory"], trace.final_memory[0])

    def test_static_bookmark_row_constant(self, tmp_path):
        spec = TaskSpec("serial-recall", seed=4)
        episode = generate(spec, GenerationRegime("train", (4, 4), (1, 1)), 1)[0]
        trace, _ = record_trace(small_dwm(seed=8), episode)
        first = trace.steps[0].bookmarks[0]
        for step in trace.steps:
            assert np.array_equal(step.bookmarks[0], first)

    def test_gate_constraints_hold_in_trace(self, tmp_path):
        spec = TaskSpec("ignore", seed=5)
        episode = generate(spec, GenerationRegime("train", (2, 2), (2, 2)), 1)[0]
        model = small_dwm("ignore", seed=9)
        trace, _ = record_trace(model, episode)
        for step in trace.steps:
            assert step.shift.sum() == pytest.approx(1.0, abs=1e-6)
            assert step.attention_gates.sum() == pytest.approx(1.0, abs=1e-6)
            assert np.all((step.bookmark_gates >= 0) & (step.bookmark_gates <= 1))
            assert np.all((step.erase >= 0) & (step.erase <= 1))
            assert step.sharpening[0][0] >= 1.0


class TestHeatmap:
    def make_trace(self, tmp_path, task="serial-recall", n=3):
        spec = TaskSpec(task, seed=6)
        episode = generate(spec, GenerationRegime("train", (n, n), (1, 1)), 1)[0]
        trace, _ = record_trace(small_dwm(task, seed=10), episode, trace_memory=False)
        path = tmp_path / "trace.jsonl"
        write_trace(path, trace, episode)
        return path, episode

    def test_attention_heatmap_width_is_T(self, tmp_path):
        path, episode = self.make_trace(tmp_path)
        out = tmp_path / "attention.pgm"
        pixels = render_heatmap(path, "attention", out)
        assert pixels.shape == (episode.length, episode.length)  # A == T here
        assert np.array_equal(read_pgm(out), pixels)

    def test_constant_field_maps_to_mid_gray(self, tmp_path):
        path, _ = self.make_trace(tmp_path)
        pixels = render_heatmap(path, "bookmark0", tmp_path / "b0.pgm")
        # static bookmark rows never change; first row is all ones -> not constant
        # memory of an untrained model may vary; craft a constant matrix instead
        write_pgm(tmp_path / "c.pgm", np.full((3, 4), 0, dtype=np.uint8))
        # explicit contract check through the normalizer:
        from dwm.evaluation import _field_matrix  # noqa: PLC2701

        trace = read_trace(path)
        trace["steps"] = [
            {**s, "gates": {**s["gates"], "bookmark": [0.5]}} for s in trace["steps"]
        ]
        import json as _json

        rewritten = tmp_path / "const.jsonl"
        with rewritten.open("w") as fh:
            fh.write(_json.dumps(trace["meta"]) + "\n")
            for s in trace["steps"]:
                fh.write(_json.dumps(s) + "\n")
            fh.write(
                _json.dumps({"type": "final-memory", "matrix": trace["final_memory"].tolist()})
                + "\n"
            )
        pixels = render_heatmap(rewritten, "bookmark-gates", tmp_path / "g.pgm")
        assert np.all(pixels == 128)

    def test_normalization_contract(self, tmp_path):
        path, _ = self.make_trace(tmp_path)
        pixels = render_heatmap(path, "attention", tmp_path / "a.pgm")
        assert pixels.min() == 0 and pixels.max() == 255

    def test_unknown_field_rejected(self, tmp_path):
        path, _ = self.make_trace(tmp_path)
        with pytest.raises(ConfigError):
            render_heatmap(path, "entropy", tmp_path / "x.pgm")

    def test_memory_field_shape(self, tmp_path):
        path, episode = self.make_trace(tmp_path)
        pixels = render_heatmap(path, "memory", tmp_path / "m.pgm")
        assert pixels.shape == (10, episode.length)  # word_width x addresses


class TestPgm:
    def test_roundtrip(self, tmp_path):
        rng = np.random.default_rng(11)
        pixels = rng.integers(0, 256, (5, 7), dtype=np.uint8)
        path = tmp_path / "img.pgm"
        write_pgm(path, pixels)
        assert np.array_equal(read_pgm(path), pixels)
        header = path.read_bytes()[:2]
        assert header == b"P5"


class TestCheckpoint:
    def test_roundtrip_bit_exact(self, tmp_path):
        model = small_dwm(seed=12)
        # make values irrational so exact round-trip is meaningful
        for p in model.params.values():
            p.data += np.pi * 1e-3
        path = tmp_path / "model.ckpt.json"
        save_checkpoint(path, model, meta={"task": "serial-recall", "episodes": 7})
        loaded, meta = load_checkpoint(path)
        assert loaded.kind == "dwm"
        assert meta["episodes"] == 7
        for name, p in model.params.items():
            assert np.array_equal(loaded.params[name].data, p.data)
            assert loaded.params[name].requires_grad

    def test_baseline_roundtrip(self, tmp_path):
        model = RecurrentBaseline(BaselineConfig(input_width=10, output_width=8, hidden_size=4), seed=1)
        path = tmp_path / "baseline.ckpt.json"
        save_checkpoint(path, model)
        loaded, _ = load_checkpoint(path)
        assert loaded.kind == "baseline"
        assert loaded.config.hidden_size == 4
        assert np.array_equal(loaded.params["w_gates"].data, model.params["w_gates"].data)

    def test_malformed_file_rejected(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({"format": "something-else"}))
        with pytest.raises(ConfigError):
            load_checkpoint(path)

    def test_manifest_roundtrip_and_build_id(self, tmp_path):
        path = tmp_path / "manifest.json"
        write_manifest(path, {"pkg_build": build_id(), "seeds": [0, 1, 2]})
        data = read_manifest(path)
        assert data["seeds"] == [0, 1, 2]
        assert len(data["pkg_build"]) == 12
