import numpy as np
import pytest

from linalg import thin_svd
from models import QATConfig, QATMode, QATState, ScaleEnvelope
from tools.adapter_tools import dense_update, reconstruct
from tools.io_tools import quantize_scales
from tools.qat_tools import (
    adamw_step,
    adapter_loss,
    compare_qat_ptq,
    init_state,
    kappa_at,
    learning_rate,
    make_planted_task,
    qat_backward,
    qat_forward,
    random_adapter,
    smooth_sign_derivative,
    train,
)
from utils.errors import DegenerateInputError


def _state(rng, n, m, r, kappa):
    return QATState(
        h1=rng.standard_normal((n, r)),
        h2=rng.standard_normal((r, m)),
        envelopes=[
            ScaleEnvelope(
                alpha=rng.uniform(0.5, 1.5, n), beta=rng.uniform(0.5, 1.5, r), gamma=rng.uniform(0.5, 1.5, m)
            )
        ],
        kappa=kappa,
    )


def test_planted_task_is_consistent():
    task, hidden = make_planted_task(8, 6, 2, samples=40, seed=0)
    assert (task.samples, task.n, task.m) == (40, 8, 6)
    np.testing.assert_allclose(task.delta_target(), reconstruct(hidden), atol=1e-9)
    assert adapter_loss(hidden, task) == pytest.approx(0.0, abs=1e-20)


def test_random_adapter_dyadic_scales():
    adapter = random_adapter(10, 7, 3, seed=5, dyadic=True)
    for axis in ("alpha", "beta", "gamma"):
        values = getattr(adapter.envelopes[0], axis)
        np.testing.assert_array_equal(values * 8.0, np.round(values * 8.0))
        assert values.min() >= 0.5 and values.max() <= 1.5


def test_smooth_sign_derivative():
    assert smooth_sign_derivative(np.array([0.0]), 5.0)[0] == 5.0
    assert smooth_sign_derivative(np.array([10.0]), 5.0)[0] == pytest.approx(0.0, abs=1e-12)


def test_scale_gradients_match_finite_differences():
    rng = np.random.default_rng(0)
    for _ in range(50):
        task, _ = make_planted_task(6, 5, 2, samples=30, seed=int(rng.integers(1000)))
        state = _state(rng, 6, 5, 2, kappa=100.0)
        _, grads = qat_backward(state, task)
        env = state.envelopes[0]
        h = 1e-6
        for j, axis in enumerate(("alpha", "beta", "gamma")):
            values = getattr(env, axis)
            step = np.zeros_like(values)
            step[1] = h

            def loss_at(delta):
                shifted = ScaleEnvelope(**{**env.model_dump(), axis: values + delta})
                loss, _ = qat_forward(state.model_copy(update={"envelopes": [shifted]}), task)
                return loss

            fd = (loss_at(step) - loss_at(-step)) / (2 * h)
            assert grads.scales[0][j][1] == pytest.approx(fd, rel=1e-6, abs=1e-9)


def test_relaxed_carrier_gradients_match_finite_differences():
    rng = np.random.default_rng(1)
    for _ in range(50):
        task, _ = make_planted_task(6, 5, 2, samples=30, seed=int(rng.integers(1000)))
        state = _state(rng, 6, 5, 2, kappa=5.0)
        _, grads = qat_backward(state, task, relaxed=True)
        h = 1e-6
        for name, index in (("h1", (3, 1)), ("h2", (0, 4))):
            base = getattr(state, name)

            def loss_at(delta):
                shifted = base.copy()
                shifted[index] += delta
                loss, _ = qat_forward(state.model_copy(update={name: shifted}), task, relaxed=True)
                return loss

            fd = (loss_at(h) - loss_at(-h)) / (2 * h)
            assert getattr(grads, name)[index] == pytest.approx(fd, rel=1e-4, abs=1e-8)


def test_learning_rate_schedule():
    config = QATConfig(lr=1.0, steps=100, warmup_frac=0.1)
    assert learning_rate(0, config) == pytest.approx(0.1)
    assert learning_rate(9, config) == pytest.approx(1.0)
    assert learning_rate(10, config) == pytest.approx(1.0)
    assert learning_rate(55, config) == pytest.approx(0.5)
    assert 0.0 <= learning_rate(99, config) < 0.01
    assert learning_rate(50, QATConfig(lr=0.3, schedule="constant")) == 0.3


def test_kappa_ramp():
    config = QATConfig(kappa=11.0, kappa_start=1.0, kappa_schedule="linear", steps=11)
    assert kappa_at(0, config) == pytest.approx(1.0)
    assert kappa_at(5, config) == pytest.approx(6.0)
    assert kappa_at(10, config) == pytest.approx(11.0)
    assert kappa_at(3, QATConfig(kappa=7.0)) == 7.0


def test_adamw_first_step_moves_by_lr():
    params = {"w": np.array([1.0, -2.0])}
    grads = {"w": np.array([0.5, -3.0])}
    new, moments = adamw_step(params, grads, {}, 1, 0.01, QATConfig())
    np.testing.assert_allclose(new["w"], [0.99, -1.99], atol=1e-6)
    assert set(moments) == {"m_w", "v_w"}


def test_freeze_mode_keeps_carriers_and_lowers_loss():
    task, hidden = make_planted_task(16, 16, 2, samples=128, seed=0)
    damped = hidden.with_envelopes(
        [ScaleEnvelope(alpha=0.5 * env.alpha, beta=env.beta, gamma=env.gamma) for env in hidden.envelopes]
    )
    config = QATConfig(mode=QATMode.FREEZE, steps=300, lr=1e-2)
    adapter, state = train(task, damped, config)
    assert adapter.b1.same_bits(hidden.b1) and adapter.b2.same_bits(hidden.b2)
    assert len(state.loss_history) == 301
    assert state.loss_history[-1] < 0.5 * state.loss_history[0]
    assert adapter_loss(adapter, task) == state.loss_history[-1]


def test_scratch_mode_needs_rank():
    task, _ = make_planted_task(6, 6, 2, samples=20, seed=0)
    with pytest.raises(DegenerateInputError):
        train(task, None, QATConfig(mode=QATMode.SCRATCH, steps=1))
    with pytest.raises(DegenerateInputError):
        train(task, None, QATConfig(mode=QATMode.FULL, steps=1))
    adapter, state = train(task, None, QATConfig(mode=QATMode.SCRATCH, steps=3), rank=2)
    assert adapter.rank == 2 and state.step == 3


@pytest.mark.slow
def test_qat_ptq_comparison_report():
    report = compare_qat_ptq([0, 1], n=16, m=16, rank=2, samples=96, config=QATConfig(steps=20, lr=1e-3))
    assert report.seeds == [0, 1]
    assert len(report.ratios) == 2
    assert report.median_ratio == pytest.approx(float(np.median(report.ratios)))
    assert all(loss >= 0.0 for loss in report.ptq_losses + report.qat_losses)


def test_zero_gradient_step_leaves_params_unchanged():
    params = {"w": np.array([1.0, -2.0, 0.5])}
    grads = {"w": np.zeros(3)}
    new, moments = adamw_step(params, grads, {}, 1, 0.01, QATConfig())
    np.testing.assert_array_equal(new["w"], params["w"])
    np.testing.assert_array_equal(moments["m_w"], np.zeros(3))


def test_zero_learning_rate_leaves_params_unchanged():
    task, hidden = make_planted_task(10, 8, 2, samples=50, seed=4)
    config = QATConfig(steps=5, lr=0.0)
    start = init_state(task, hidden, config)
    _, state = train(task, hidden, config)
    np.testing.assert_array_equal(state.h1, start.h1)
    np.testing.assert_array_equal(state.h2, start.h2)
    for before, after in zip(start.envelopes, state.envelopes):
        for axis in ("alpha", "beta", "gamma"):
            np.testing.assert_array_equal(getattr(after, axis), getattr(before, axis))


def test_training_leaves_base_weights_untouched():
    task, hidden = make_planted_task(10, 8, 2, samples=50, seed=6)
    w0 = task.w0.copy()
    train(task, hidden, QATConfig(steps=10, lr=1e-3))
    np.testing.assert_array_equal(task.w0, w0)


def test_fp16_export_loss_stays_close():
    task, hidden = make_planted_task(16, 12, 3, samples=80, seed=8)
    damped = hidden.with_envelopes(
        [ScaleEnvelope(alpha=0.7 * env.alpha, beta=env.beta, gamma=env.gamma) for env in hidden.envelopes]
    )
    adapter, _ = train(task, damped, QATConfig(mode=QATMode.FREEZE, steps=50, lr=1e-2))
    loss = adapter_loss(adapter, task)
    baseline = 0.5 * float(np.sum((task.y - task.x @ task.w0) ** 2)) / task.samples
    assert adapter_loss(quantize_scales(adapter), task) <= 1.01 * loss + 2e-3 * baseline


def test_svd_init_starts_from_truncated_delta():
    task, _ = make_planted_task(12, 10, 3, samples=60, seed=2)
    config = QATConfig(init="svd")
    state = init_state(task, None, config, rank=2, ell=2)
    u, s, vt = np.linalg.svd(task.delta_target())
    truncated = (u[:, :2] * s[:2]) @ vt[:2]
    np.testing.assert_allclose(dense_update(state.h1, state.h2, state.envelopes), truncated, atol=1e-9)
    np.testing.assert_allclose(thin_svd(task.delta_target(), 2).s, state.envelopes[0].beta)
    assert len(state.envelopes) == 2 and not state.envelopes[1].beta.any()

    adapter, trained = train(task, None, config.model_copy(update={"steps": 5}), rank=2)
    assert adapter.rank == 2 and trained.step == 5
    with pytest.raises(DegenerateInputError):
        init_state(task, None, config)


@pytest.mark.slow
def test_qat_improves_on_ptq_over_ten_seeds():
    report = compare_qat_ptq(range(10))
    assert report.median_ratio <= 0.2
