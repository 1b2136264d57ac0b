"""Recurrent baseline cell tests."""

import numpy as np
import pytest

from dwm import autodiff as ad
from dwm.autodiff import Tensor, no_grad
from dwm.baseline import BaselineConfig, RecurrentBaseline, create_parameters, lstm_step
from dwm.tasks import TaskSpec
from dwm.training import TrainConfig, bce_loss, train


class TestLstmStep:
    def test_zero_weights_zero_state(self):
        cfg = BaselineConfig(input_width=4, output_width=3, hidden_size=2)
        params = {
            "w_gates": Tensor(np.zeros((8, 7)), requires_grad=True),
            "w_y": Tensor(np.zeros((3, 3)), requires_grad=True),
        }
        state = (Tensor(np.zeros((1, 2))), Tensor(np.zeros((1, 2))))
        (h, c), y = lstm_step(Tensor(np.zeros((1, 4))), state, params, 2)
        assert np.all(y.data == 0.0)
        assert np.all(c.data == 0.0)
        assert np.all(h.data == 0.0)

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(0)
        cfg = BaselineConfig(input_width=4, output_width=3, hidden_size=3)
        model = RecurrentBaseline(cfg, seed=1)
        inputs = rng.random((4, 1, 4))
        targets = rng.integers(0, 2, (4, 1, 3)).astype(float)
        mask = np.array([False, True, True, True])

        def loss_fn():
            logits, _ = model.forward(inputs)
            return bce_loss(logits, targets, mask)

        loss_fn().backward()
        for name, p in model.params.items():
            def f(arr, p=p):
                saved = p.data
                p.data = arr
                with no_grad():
                    out = loss_fn().item()
                p.data = saved
                return out

            err = ad.gradient_error(p.grad, ad.numeric_gradient(f, np.array(p.data)))
            assert err < 1e-4, f"{name}: {err}"


class TestBaselineModel:
    def test_parameter_count_reported(self):
        cfg = BaselineConfig(input_width=10, output_width=8, hidden_size=64)
        model = RecurrentBaseline(cfg, seed=0)
        assert model.parameter_count() == cfg.parameter_count
        assert cfg.parameter_count == 4 * 64 * (10 + 64 + 1) + 8 * (64 + 1)

    def test_forward_shapes(self):
        model = RecurrentBaseline(BaselineConfig(input_width=5, output_width=4, hidden_size=3), seed=2)
        logits, trace = model.forward(np.zeros((6, 2, 5)))
        assert len(logits) == 6
        assert logits[0].data.shape == (2, 4)
        assert trace is None

    def test_trains_under_same_harness(self):
        model = RecurrentBaseline(BaselineConfig(input_width=10, output_width=8, hidden_size=8), seed=3)
        result = train(
            model,
            TaskSpec("serial-recall", seed=1),
            TrainConfig(max_episodes=3, validation_interval=3, batch_size=2, learning_rate=5e-3),
        )
        assert result.episodes == 3
        assert np.isfinite(result.best_val_loss)
