"""Adam, gradient clipping, LR schedules, and the FD checker itself."""

import math

import numpy as np
import pytest

from radlab.optim import (AdamState, LrSchedule, NonFiniteGradientError,
                          adam_step, clip_grad_norm, gradient_check, lr_at)
from radlab.tensor import Tensor


class TestAdam:
    def test_first_step_magnitude(self):
        # bias correction makes the first update exactly lr * g/|g|
        p = Tensor(np.zeros(1, np.float32))
        adam_step(AdamState(), [p], [np.ones(1, np.float32)], lr=0.1)
        assert p.data[0] == pytest.approx(-0.1, rel=1e-4)

    def test_decoupled_weight_decay_shrinks_before_update(self):
        p = Tensor(np.full(1, 2.0, np.float32))
        state = AdamState(weight_decay=0.5)
        adam_step(state, [p], [np.zeros(1, np.float32)], lr=0.1)
        # decay only: 2.0 * (1 - 0.1*0.5) = 1.9; zero grad adds nothing
        assert p.data[0] == pytest.approx(1.9, rel=1e-5)

    def test_nonfinite_gradient_rejected(self):
        p = Tensor(np.zeros(2, np.float32))
        with pytest.raises(NonFiniteGradientError):
            adam_step(AdamState(), [p], [np.array([1.0, np.nan], np.float32)], 0.1)

    def test_shape_mismatch_rejected(self):
        p = Tensor(np.zeros(2, np.float32))
        with pytest.raises(ValueError):
            adam_step(AdamState(), [p], [np.zeros(3, np.float32)], 0.1)

    def test_quadratic_convergence(self):
        # minimize (x-3)^2; Adam should close most of the gap
        p = Tensor(np.zeros(1, np.float32))
        state = AdamState()
        for _ in range(500):
            g = 2.0 * (p.data - 3.0)
            adam_step(state, [p], [g], lr=0.05)
        assert abs(p.data[0] - 3.0) < 0.05


class TestClipGradNorm:
    def test_noop_below_threshold(self):
        g = [np.array([0.3, 0.4], np.float32)]
        total = clip_grad_norm(g, 1.0)
        assert total == pytest.approx(0.5)
        np.testing.assert_allclose(g[0], [0.3, 0.4])

    def test_scales_to_max_norm(self):
        g = [np.array([3.0, 4.0], np.float32), np.array([0.0], np.float32)]
        clip_grad_norm(g, 1.0)
        total = math.sqrt(sum(float((x ** 2).sum()) for x in g))
        assert total == pytest.approx(1.0, rel=1e-5)


class TestSchedules:
    def test_linear_warmup(self):
        s = LrSchedule(1e-3, total_epochs=100, warmup_epochs=10)
        assert lr_at(s, 0) == pytest.approx(1e-4)
        assert lr_at(s, 9) == pytest.approx(1e-3)

    def test_cosine_tail(self):
        s = LrSchedule(1e-3, total_epochs=100, warmup_epochs=10)
        assert lr_at(s, 10) == pytest.approx(1e-3)
        mid = 10 + (100 - 10) // 2
        assert lr_at(s, mid) == pytest.approx(5e-4, rel=1e-6)

    def test_step_decay(self):
        s = LrSchedule(1e-3, total_epochs=60, kind="step_decay")
        assert lr_at(s, 0) == pytest.approx(1e-3)
        assert lr_at(s, 19) == pytest.approx(1e-3)
        assert lr_at(s, 20) == pytest.approx(1e-4)
        assert lr_at(s, 40) == pytest.approx(1e-5)

    def test_epoch_out_of_range(self):
        s = LrSchedule(1e-3, total_epochs=10)
        with pytest.raises(ValueError):
            lr_at(s, 10)


class TestGradientCheck:
    def test_correct_gradient_passes(self):
        x = Tensor(np.array([0.7, -1.2, 0.9], np.float32))
        assert gradient_check(lambda t: (t * t).mean(), x, h=1e-2) < 1e-3

    def test_scalar_required(self):
        x = Tensor(np.ones(3, np.float32))
        with pytest.raises(ValueError):
            gradient_check(lambda t: t * 2.0, x)

    def test_constant_function_rejected(self):
        x = Tensor(np.ones(2, np.float32))
        with pytest.raises(ValueError):
            gradient_check(lambda t: Tensor(np.zeros(1, np.float32)).sum(), x)
