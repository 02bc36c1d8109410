"""Deterministic SGD and Adam over dictionaries of float64 parameter arrays."""

import numpy as np
import pytest

from dm_ldbp.errors import ParameterError
from dm_ldbp.optimizers import AdamOptimizer, SgdOptimizer


class TestSgd:
    def test_single_step_hand_value(self):
        w = {"w": np.array([1.0, -2.0])}
        opt = SgdOptimizer(w, learning_rate=0.1)
        opt.step({"w": np.array([0.5, 1.0])})
        assert np.array_equal(w["w"], np.array([0.95, -2.1]))

    def test_updates_in_place(self):
        arr = np.array([3.0])
        opt = SgdOptimizer({"w": arr}, learning_rate=1.0)
        opt.step({"w": np.array([1.0])})
        assert arr[0] == 2.0

    def test_complex_view_update(self):
        # a complex tap array exposed to the optimizer as its float64 view
        taps = np.array([1.0 + 2.0j], dtype=np.complex128)
        opt = SgdOptimizer({"taps": taps.view(np.float64)}, learning_rate=0.5)
        opt.step({"taps": np.array([0.2, -0.4])})
        assert taps[0] == (1.0 - 0.5 * 0.2) + 1j * (2.0 + 0.5 * 0.4)


class TestAdam:
    def test_two_steps_match_hand_computation(self):
        lr, b1, b2, eps = 0.1, 0.9, 0.999, 1e-8
        w = {"w": np.array([1.0])}
        opt = AdamOptimizer(w, learning_rate=lr)
        g1, g2 = 0.3, -0.2

        m = (1 - b1) * g1
        v = (1 - b2) * g1**2
        w1 = 1.0 - lr * (m / (1 - b1)) / (np.sqrt(v / (1 - b2)) + eps)
        opt.step({"w": np.array([g1])})
        assert w["w"][0] == pytest.approx(w1, rel=1e-15)

        m = b1 * m + (1 - b1) * g2
        v = b2 * v + (1 - b2) * g2**2
        w2 = w1 - lr * (m / (1 - b1**2)) / (np.sqrt(v / (1 - b2**2)) + eps)
        opt.step({"w": np.array([g2])})
        assert w["w"][0] == pytest.approx(w2, rel=1e-14)

    def test_first_step_size_is_learning_rate(self):
        # bias correction makes the very first update ~lr * sign(g)
        w = {"w": np.array([0.0])}
        opt = AdamOptimizer(w, learning_rate=1e-4)
        opt.step({"w": np.array([123.0])})
        assert w["w"][0] == pytest.approx(-1e-4, rel=1e-6)

    def test_state_is_per_parameter(self):
        w = {"a": np.array([0.0]), "b": np.array([0.0])}
        opt = AdamOptimizer(w, learning_rate=0.1)
        opt.step({"a": np.array([1.0]), "b": np.array([-1.0])})
        assert w["a"][0] == pytest.approx(-w["b"][0], rel=1e-12)

    def test_unknown_parameter_rejected(self):
        opt = AdamOptimizer({"a": np.array([0.0])}, learning_rate=0.1)
        with pytest.raises(ParameterError):
            opt.step({"b": np.array([1.0])})


def quadratic_descent(opt_factory, iters):
    rng = np.random.default_rng(40)
    a = rng.normal(size=(8, 4)) + 1j * rng.normal(size=(8, 4))
    w_true = rng.normal(size=4) + 1j * rng.normal(size=4)
    b = a @ w_true  # consistent system: the least-squares minimum is zero
    w = np.zeros(4, dtype=np.complex128)
    params = {"w": w.view(np.float64)}
    opt = opt_factory(params)
    losses = []
    for _ in range(iters):
        r = a @ w - b
        losses.append(float(np.mean(np.abs(r) ** 2)))
        # Wirtinger gradient dL/dw*; the float64 view update needs (2 Re, 2 Im)
        g = a.conj().T @ r / len(b)
        opt.step({"w": (2 * g).view(np.float64)})
    return losses, w, a, b


class TestConvergence:
    def test_sgd_converges_on_complex_least_squares(self):
        losses, w, a, b = quadratic_descent(
            lambda p: SgdOptimizer(p, learning_rate=0.05), 4000
        )
        w_star, *_ = np.linalg.lstsq(a, b, rcond=None)
        assert losses[-1] < losses[0] * 1e-6
        assert np.max(np.abs(w - w_star)) < 1e-4

    def test_adam_converges_on_complex_least_squares(self):
        losses, w, a, b = quadratic_descent(
            lambda p: AdamOptimizer(p, learning_rate=0.05), 4000
        )
        w_star, *_ = np.linalg.lstsq(a, b, rcond=None)
        assert losses[-1] < 1e-8
        assert np.max(np.abs(w - w_star)) < 1e-3

    def test_identical_runs_are_bitwise_identical(self):
        _, w1, *_ = quadratic_descent(lambda p: AdamOptimizer(p, learning_rate=0.05), 200)
        _, w2, *_ = quadratic_descent(lambda p: AdamOptimizer(p, learning_rate=0.05), 200)
        assert np.array_equal(w1, w2)
