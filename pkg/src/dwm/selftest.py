"""Randomized invariant and gradient suites.

Each check returns (name, passed, detail); ``run_all`` executes the full
battery. The CLI exposes this as ``dwm selftest`` and the acceptance
tests run the same functions with larger trial counts.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, no_grad
from .model import (
    Dwm,
    DwmConfig,
    forward_sequence,
    gate_attention,
    init_state,
    read,
    sharpen,
    shift,
    update_bookmarks,
    write,
)
from .tasks import TASK_NAMES, TaskSpec, generate, oracle_solve, regime_for
from .training import Adam, bce_loss

Result = tuple[str, bool, str]


def _random_simplex(rng: np.random.Generator, n: int) -> np.ndarray:
    raw = rng.random(n) + 1e-9
    return raw / raw.sum()


def check_op_gradients(trials: int = 100, tol: float = 1e-4, seed: int = 0) -> Result:
    """Finite-difference agreement for every differentiable op."""
    rng = np.random.default_rng(seed)
    ops = {
        "add": (ad.add, lambda: (rng.standard_normal(5), rng.standard_normal(5))),
        "sub": (ad.sub, lambda: (rng.standard_normal(5), rng.standard_normal(5))),
        "mul": (ad.mul, lambda: (rng.standard_normal(5), rng.standard_normal(5))),
        "div": (ad.div, lambda: (rng.standard_normal(5), rng.uniform(0.5, 2.0, 5))),
        "power": (ad.power, lambda: (rng.uniform(0.2, 2.0, 5), rng.uniform(0.5, 3.0, 1))),
        "sigmoid": (ad.sigmoid, lambda: (rng.standard_normal(5) * 2,)),
        "softplus": (ad.softplus, lambda: (rng.standard_normal(5) * 2,)),
        "log": (ad.log, lambda: (rng.uniform(0.1, 3.0, 5),)),
        "softmax": (ad.softmax, lambda: (rng.standard_normal(6) * 3,)),
        "matvec": (ad.matvec, lambda: (rng.standard_normal((4, 3)), rng.standard_normal(3))),
        "outer": (ad.outer, lambda: (rng.standard_normal(3), rng.standard_normal(4))),
    }
    worst = 0.0
    per_op = max(1, trials // len(ops))
    for name, (op, make) in ops.items():
        for _ in range(per_op):
            arrays = make()
            tensors = [Tensor(a, requires_grad=True) for a in arrays]
            ad.tsum(op(*tensors)).backward()
            for i, t in enumerate(tensors):
                def f(x, i=i):
                    probe = [Tensor(a) for a in arrays]
                    probe[i] = Tensor(x)
                    return ad.tsum(op(*probe)).item()

                err = ad.gradient_error(
                    t.grad, ad.numeric_gradient(f, np.array(arrays[i]))
                )
                worst = max(worst, err)
                if err >= tol:
                    return (
                        "op-gradients",
                        False,
                        f"{name} input {i}: rel err {err:.3g} >= {tol}",
                    )
    return ("op-gradients", True, f"worst rel err {worst:.3g} over {per_op} trials/op")


def check_simplex_closure(trials: int = 1000, seed: int = 1) -> Result:
    """gate_attention, shift and sharpen map the simplex to itself."""
    rng = np.random.default_rng(seed)
    for _ in range(trials):
        n = int(rng.integers(2, 12))
        w = Tensor(_random_simplex(rng, n))
        bookmarks = (Tensor(_random_simplex(rng, n)), Tensor(_random_simplex(rng, n)))
        delta = Tensor(_random_simplex(rng, 3))
        s = Tensor(_random_simplex(rng, 3))
        gamma = Tensor(np.array([1.0 + rng.exponential(3.0)]))
        for tag, out in (
            ("gate", gate_attention(w, bookmarks, delta)),
            ("shift", shift(w, s)),
            ("sharpen", sharpen(Tensor(_random_simplex(rng, n)), gamma)),
        ):
            v = out.data
            if np.any(v < -1e-12) or abs(v.sum() - 1.0) > 1e-6:
                return (
                    "simplex-closure",
                    False,
                    f"{tag}: sum {v.sum():.2e}, min {v.min():.2e}",
                )
    return ("simplex-closure", True, f"{trials} random draws")


def check_shift_mass_conservation(trials: int = 1000, seed: int = 2) -> Result:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        n = int(rng.integers(2, 20))
        w = Tensor(_random_simplex(rng, n))
        s = Tensor(_random_simplex(rng, 3))
        out = shift(w, s).data
        worst = max(worst, abs(out.sum() - w.data.sum()))
    ok = worst <= 1e-12
    return ("shift-mass-conservation", ok, f"worst drift {worst:.2e}")


def check_static_bookmark(trials: int = 50, steps: int = 20, seed: int = 3) -> Result:
    """Bookmark 0 equals the initial attention after arbitrary steps of a
    randomly initialized model on random inputs."""
    rng = np.random.default_rng(seed)
    for trial in range(trials):
        config = DwmConfig(
            input_width=int(rng.integers(4, 8)),
            output_width=3,
            hidden_size=3,
            num_bookmarks=int(rng.integers(2, 4)),
        )
        model = Dwm(config, seed=int(rng.integers(0, 2**31)))
        # scale weights up so gates move far from their init
        for p in model.params.values():
            p.data *= 5.0
        num_addresses = int(rng.integers(2, 8))
        inputs = rng.random((steps, 1, config.input_width))
        with no_grad():
            _, trace = forward_sequence(
                config, model.params, inputs, num_addresses, collect_trace=True
            )
        w0 = np.zeros(num_addresses)
        w0[0] = 1.0
        for step in trace.steps:
            if not np.array_equal(step.bookmarks[0][0], w0):
                return ("static-bookmark", False, f"moved at trial {trial}")
    return ("static-bookmark", True, f"{trials} random models x {steps} steps")


def check_read_convexity(trials: int = 200, seed: int = 4) -> Result:
    """The read vector stays inside the componentwise hull of the
    memory columns."""
    rng = np.random.default_rng(seed)
    for _ in range(trials):
        word, n = int(rng.integers(2, 8)), int(rng.integers(2, 8))
        m = rng.standard_normal((word, n))
        w = _random_simplex(rng, n)
        r = read(Tensor(m), Tensor(w)).data
        if np.any(r < m.min(axis=1) - 1e-12) or np.any(r > m.max(axis=1) + 1e-12):
            return ("read-convexity", False, "read left the hull")
    return ("read-convexity", True, f"{trials} random draws")


def check_masked_loss_independence(trials: int = 100, seed: int = 5) -> Result:
    """Perturbing logits at unmasked steps changes neither loss nor
    accuracy."""
    from .training import accuracy

    rng = np.random.default_rng(seed)
    for _ in range(trials):
        steps, bits = int(rng.integers(3, 10)), 4
        mask = rng.random(steps) < 0.5
        if not mask.any():
            mask[0] = True
        targets = rng.integers(0, 2, (steps, bits)).astype(float)
        logits = [Tensor(rng.standard_normal(bits)) for _ in range(steps)]
        perturbed = [
            t if m else Tensor(t.data + rng.standard_normal(bits) * 10)
            for t, m in zip(logits, mask)
        ]
        base = bce_loss(logits, targets, mask).item()
        moved = bce_loss(perturbed, targets, mask).item()
        if base != moved:
            return ("masked-loss-independence", False, f"loss moved by {moved - base}")
        if accuracy(logits, targets, mask) != accuracy(perturbed, targets, mask):
            return ("masked-loss-independence", False, "accuracy moved")
    return ("masked-loss-independence", True, f"{trials} perturbations")


def check_generator_consistency(trials_per_task: int = 125, seed: int = 6) -> Result:
    """Masked-step count matches the task definition; item classes are
    mutually exclusive; generation is deterministic."""
    for task in TASK_NAMES:
        spec = TaskSpec(task, seed=seed)
        for phase in ("train", "val"):
            regime = regime_for(task, phase)
            for b in range(max(1, trials_per_task // 2)):
                ep = generate(spec, regime, 1, batch_index=b)[0]
                sizes = ep.meta["group_sizes"]
                x_total = sum(v for k, v in sizes.items() if k.startswith("x"))
                y_total = sum(v for k, v in sizes.items() if k.startswith("y"))
                if task == "reading-span":
                    expected = sum(1 for k in sizes if k.startswith("x"))
                elif task == "scratch-pad":
                    last = max(int(k[1:]) for k in sizes if k.startswith("x"))
                    expected = sizes[f"x{last}"]
                elif task in ("forget", "operation-span"):
                    expected = x_total + y_total
                else:  # recall family and ignore: all x items
                    expected = x_total
                if int(ep.mask.sum()) != expected:
                    return (
                        "generator-consistency",
                        False,
                        f"{task}/{phase} batch {b}: {int(ep.mask.sum())} masked, expected {expected}",
                    )
                data = ep.inputs[:, : spec.data_bits]
                ctrl = ep.inputs[:, spec.data_bits :]
                if np.any((data.sum(axis=1) > 0) & (ctrl.sum(axis=1) > 0)):
                    return ("generator-consistency", False, f"{task}: mixed item classes")
                if np.any(ctrl.sum(axis=1) > 1):
                    return ("generator-consistency", False, f"{task}: overlapping markers")
                pred = oracle_solve(ep)
                if not np.array_equal(pred[ep.mask], ep.targets[ep.mask]):
                    return ("generator-consistency", False, f"{task}: oracle mismatch")
            twin_a = generate(spec, regime_for(task, phase), 2, batch_index=7)
            twin_b = generate(spec, regime_for(task, phase), 2, batch_index=7)
            for ea, eb in zip(twin_a, twin_b):
                if not (
                    np.array_equal(ea.inputs, eb.inputs)
                    and np.array_equal(ea.targets, eb.targets)
                    and np.array_equal(ea.mask, eb.mask)
                ):
                    return ("generator-consistency", False, f"{task}: nondeterministic")
    return ("generator-consistency", True, f"all tasks, {trials_per_task} draws each")


def check_parameter_count() -> Result:
    count = DwmConfig().parameter_count
    actual = Dwm(DwmConfig(), seed=0).parameter_count()
    ok = count == 1066 and actual == 1066
    return ("parameter-count", ok, f"config says {count}, tensors hold {actual}")


def check_adam_descends(seed: int = 7) -> Result:
    """One Adam step decreases a convex quadratic for small lr."""
    rng = np.random.default_rng(seed)
    for _ in range(20):
        theta = Tensor(rng.standard_normal(4), requires_grad=True)
        opt = Adam({"theta": theta}, learning_rate=1e-3)
        loss = ad.tsum(theta * theta)
        before = loss.item()
        loss.backward()
        opt.step()
        after = ad.tsum(theta * theta).item()
        if before > 1e-8 and after >= before:
            return ("adam-descends", False, f"{before} -> {after}")
    return ("adam-descends", True, "quadratic decreased in 20 random starts")


def check_model_gradients(trials: int = 5, tol: float = 1e-4, seed: int = 8) -> Result:
    """End-to-end finite-difference check of small random rollouts."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        config = DwmConfig(input_width=5, output_width=3, hidden_size=3)
        model = Dwm(config, seed=int(rng.integers(0, 2**31)))
        steps = int(rng.integers(2, 7))
        addresses = int(rng.integers(3, 6))
        inputs = rng.random((steps, 1, 5))
        targets = rng.integers(0, 2, (steps, 1, 3)).astype(float)
        mask = rng.random(steps) < 0.7
        if not mask.any():
            mask[-1] = True

        def loss_value():
            logits, _ = model.forward(inputs, num_addresses=addresses)
            return bce_loss(logits, targets, mask)

        loss = loss_value()
        for p in model.params.values():
            p.grad = None
        loss.backward()
        for name, tensor in model.params.items():

            def f(arr, tensor=tensor):
                saved = tensor.data
                tensor.data = arr
                with no_grad():
                    out = loss_value().item()
                tensor.data = saved
                return out

            # an unreachable parameter (mask on step 0 only) has zero gradient
            analytic = tensor.grad if tensor.grad is not None else np.zeros_like(tensor.data)
            err = ad.gradient_error(analytic, ad.numeric_gradient(f, np.array(tensor.data)))
            worst = max(worst, err)
            if err >= tol:
                return ("model-gradients", False, f"{name}: rel err {err:.3g}")
    return ("model-gradients", True, f"worst rel err {worst:.3g} over {trials} rollouts")


def run_all(trials: int = 200) -> list[Result]:
    scale = max(1, trials)
    return [
        check_op_gradients(trials=scale),
        check_simplex_closure(trials=max(scale, 1000)),
        check_shift_mass_conservation(trials=max(scale, 1000)),
        check_static_bookmark(trials=max(10, scale // 10)),
        check_read_convexity(trials=scale),
        check_masked_loss_independence(trials=scale),
        check_generator_consistency(trials_per_task=scale),
        check_parameter_count(),
        check_adam_descends(),
        check_model_gradients(trials=3),
    ]
