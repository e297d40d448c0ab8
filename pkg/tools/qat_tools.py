"""QAT-LoRDBA on planted regression tasks with the smooth-sign straight-through estimator."""
import math
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from linalg import signs, thin_svd
from models import (
    ADMMConfig,
    ComparisonReport,
    LoRDBAAdapter,
    QATConfig,
    QATMode,
    QATState,
    ScaleEnvelope,
    ToyTask,
)
from utils import log
from utils.errors import DegenerateInputError, DivergenceError, ShapeMismatchError

from .adapter_tools import dense_update, update_gradients
from .admm_tools import SCALE_AXES, fit_scales, run_admm


class QATGradients(NamedTuple):
    h1: np.ndarray
    h2: np.ndarray
    scales: List[Tuple[np.ndarray, np.ndarray, np.ndarray]]


# ========== Task ==========

def random_adapter(
    n: int,
    m: int,
    rank: int,
    ell: int = 1,
    seed: int = 0,
    r0_ref: Optional[int] = None,
    dyadic: bool = False,
) -> LoRDBAAdapter:
    """Rademacher carriers with positive scales drawn from U(0.5, 1.5); β is normalised by √R.

    ``dyadic`` draws the scales from the multiples of 1/8 in [0.5, 1.5] and skips the √R
    normalisation, so products of two scales are exact in binary32.
    """
    rng = np.random.default_rng(seed)
    b1 = rng.choice([-1.0, 1.0], size=(n, rank))
    b2 = rng.choice([-1.0, 1.0], size=(rank, m))

    def draw(size: int) -> np.ndarray:
        if dyadic:
            return rng.integers(4, 13, size).astype(float) / 8.0
        return rng.uniform(0.5, 1.5, size)

    envelopes = [
        ScaleEnvelope(
            alpha=draw(n),
            beta=draw(rank) if dyadic else draw(rank) / math.sqrt(rank),
            gamma=draw(m),
        )
        for _ in range(ell)
    ]
    return LoRDBAAdapter.from_dense(b1, b2, envelopes, r0_ref=r0_ref or rank)


def make_planted_task(
    n: int,
    m: int,
    rank: int,
    samples: int,
    ell: int = 1,
    noise: float = 0.0,
    seed: int = 0,
) -> Tuple[ToyTask, LoRDBAAdapter]:
    """Y = X·(W0 + ΔW(θ_hidden)) + noise with X ~ N(0, 1) and W0 ~ N(0, 1/N)."""
    rng = np.random.default_rng(seed)
    hidden = random_adapter(n, m, rank, ell=ell, seed=seed + 1)
    x = rng.standard_normal((samples, n))
    w0 = rng.standard_normal((n, m)) / math.sqrt(n)
    delta = dense_update(hidden.b1.to_dense(), hidden.b2.to_dense(), hidden.envelopes)
    y = x @ (w0 + delta)
    if noise > 0.0:
        y = y + noise * rng.standard_normal(y.shape)
    return ToyTask(x=x, y=y, w0=w0), hidden


# ========== Forward / backward ==========

def _carriers(state: QATState, relaxed: bool) -> Tuple[np.ndarray, np.ndarray]:
    if relaxed:
        return np.tanh(state.kappa * state.h1), np.tanh(state.kappa * state.h2)
    return signs(state.h1), signs(state.h2)


def _loss(task: ToyTask, delta: np.ndarray) -> Tuple[float, np.ndarray]:
    yhat = task.x @ (task.w0 + delta)
    residual = task.y - yhat
    return 0.5 * float(np.sum(residual * residual)) / task.samples, yhat


def qat_forward(state: QATState, task: ToyTask, relaxed: bool = False) -> Tuple[float, np.ndarray]:
    """½‖Y − X·(W0 + ΔW)‖²_F / T with hard-sign carriers (or tanh(κ·) when relaxed)."""
    if (state.n, state.m) != (task.n, task.m):
        raise ShapeMismatchError(f"latent carriers ({state.n}, {state.m}) do not fit task ({task.n}, {task.m})")
    c1, c2 = _carriers(state, relaxed)
    return _loss(task, dense_update(c1, c2, state.envelopes))


def adapter_loss(adapter: LoRDBAAdapter, task: ToyTask) -> float:
    loss, _ = _loss(task, dense_update(adapter.b1.to_dense(), adapter.b2.to_dense(), adapter.envelopes))
    return loss


def smooth_sign_derivative(h: np.ndarray, kappa: float) -> np.ndarray:
    """κ(1 − tanh²(κh))."""
    t = np.tanh(kappa * h)
    return kappa * (1.0 - t * t)


def qat_backward(state: QATState, task: ToyTask, relaxed: bool = False) -> Tuple[float, QATGradients]:
    """Loss and reverse-mode gradients; the sign Jacobian is replaced by κ(1 − tanh²(κh))."""
    loss, yhat = qat_forward(state, task, relaxed=relaxed)
    c1, c2 = _carriers(state, relaxed)
    grad_w = -(task.x.T @ (task.y - yhat)) / task.samples
    g1, g2, scales = update_gradients(c1, c2, state.envelopes, grad_w)
    return loss, QATGradients(
        h1=g1 * smooth_sign_derivative(state.h1, state.kappa),
        h2=g2 * smooth_sign_derivative(state.h2, state.kappa),
        scales=scales,
    )


# ========== Optimiser ==========

def learning_rate(step: int, config: QATConfig) -> float:
    """Linear warm-up over ``warmup_frac`` of the steps, then cosine to zero."""
    if config.schedule == "constant":
        return config.lr
    warmup = int(round(config.warmup_frac * config.steps))
    if step < warmup:
        return config.lr * (step + 1) / warmup
    decay_steps = max(config.steps - warmup, 1)
    progress = min((step - warmup) / decay_steps, 1.0)
    return config.lr * 0.5 * (1.0 + math.cos(math.pi * progress))


def kappa_at(step: int, config: QATConfig) -> float:
    if config.kappa_schedule == "constant" or config.steps <= 1:
        return config.kappa
    frac = step / (config.steps - 1)
    return config.kappa_start + frac * (config.kappa - config.kappa_start)


def adamw_step(
    params: Dict[str, np.ndarray],
    grads: Dict[str, np.ndarray],
    moments: Dict[str, np.ndarray],
    step: int,
    lr: float,
    config: QATConfig,
) -> Tuple[Dict[str, np.ndarray], Dict[str, np.ndarray]]:
    """One AdamW update (decoupled weight decay); ``step`` counts from 1."""
    new_params, new_moments = {}, dict(moments)
    bias1 = 1.0 - config.beta1 ** step
    bias2 = 1.0 - config.beta2 ** step
    for name, p in params.items():
        g = grads[name]
        m = config.beta1 * moments.get(f"m_{name}", np.zeros_like(p)) + (1.0 - config.beta1) * g
        v = config.beta2 * moments.get(f"v_{name}", np.zeros_like(p)) + (1.0 - config.beta2) * g * g
        new_moments[f"m_{name}"], new_moments[f"v_{name}"] = m, v
        p = p - lr * config.weight_decay * p
        new_params[name] = p - lr * (m / bias1) / (np.sqrt(v / bias2) + config.eps)
    return new_params, new_moments


def _flatten(state: QATState, grads: Optional[QATGradients], train_carriers: bool):
    params, flat_grads = {}, {}
    if train_carriers:
        params.update(h1=state.h1, h2=state.h2)
        if grads is not None:
            flat_grads.update(h1=grads.h1, h2=grads.h2)
    for i, env in enumerate(state.envelopes):
        for j, axis in enumerate(SCALE_AXES):
            params[f"{axis}{i}"] = getattr(env, axis)
            if grads is not None:
                flat_grads[f"{axis}{i}"] = grads.scales[i][j]
    return params, flat_grads


def _unflatten(state: QATState, params: Dict[str, np.ndarray]) -> Dict:
    envelopes = [
        ScaleEnvelope(**{axis: params[f"{axis}{i}"] for axis in SCALE_AXES})
        for i in range(len(state.envelopes))
    ]
    update = {"envelopes": envelopes}
    if "h1" in params:
        update.update(h1=params["h1"], h2=params["h2"])
    return update


# ========== Training ==========

def _svd_state(task: ToyTask, config: QATConfig, rank: Optional[int], ell: int) -> QATState:
    if rank is None:
        raise DegenerateInputError("SVD initialisation needs a carrier rank")
    if not 1 <= rank <= min(task.n, task.m):
        raise ShapeMismatchError(f"carrier rank {rank} outside [1, min(N, M)={min(task.n, task.m)}]")
    svd = thin_svd(task.delta_target(), rank)
    envelopes = [ScaleEnvelope(alpha=np.ones(task.n), beta=svd.s, gamma=np.ones(task.m))]
    envelopes += [ScaleEnvelope.zeros(task.n, rank, task.m) for _ in range(ell - 1)]
    return QATState(h1=svd.u, h2=svd.vt, envelopes=envelopes, kappa=kappa_at(0, config))


def init_state(
    task: ToyTask,
    init: Optional[LoRDBAAdapter],
    config: QATConfig,
    rank: Optional[int] = None,
    ell: int = 1,
) -> QATState:
    """Latents from ``init`` (Full/Freeze) or from unit-variance noise (Scratch).

    With ``config.init == "svd"`` Full/Freeze start from the task delta instead:
    H₁ = U_R, H₂ = V_Rᵀ, β = s and α = γ = 1 on the first envelope, so the continuous
    update D_α·H₁·D_β·H₂·D_γ is the rank-R truncation.
    """
    if config.mode != QATMode.SCRATCH and config.init == "svd":
        if init is not None:
            rank, ell = rank or init.rank, init.ell
        return _svd_state(task, config, rank, ell)
    if config.mode == QATMode.SCRATCH:
        rank = rank or (init.rank if init is not None else None)
        ell = init.ell if init is not None else ell
        if rank is None:
            raise DegenerateInputError("scratch training needs a carrier rank")
        rng = np.random.default_rng(config.seed)
        h1 = rng.standard_normal((task.n, rank))
        h2 = rng.standard_normal((rank, task.m))
        seeds = [ScaleEnvelope.ones(task.n, rank, task.m) for _ in range(ell)]
        envelopes = fit_scales(signs(h1), signs(h2), seeds, task.delta_target())
    else:
        if init is None:
            raise DegenerateInputError(f"{config.mode.value} training needs an initial adapter")
        if (init.n, init.m) != (task.n, task.m):
            raise ShapeMismatchError(f"adapter ({init.n}, {init.m}) does not fit task ({task.n}, {task.m})")
        scale = config.latent_init_scale or 1.0 / config.kappa
        h1 = init.b1.to_dense() * scale
        h2 = init.b2.to_dense() * scale
        envelopes = list(init.envelopes)
    return QATState(h1=h1, h2=h2, envelopes=envelopes, kappa=kappa_at(0, config))


def export(state: QATState, r0_ref: int) -> LoRDBAAdapter:
    return LoRDBAAdapter.from_dense(signs(state.h1), signs(state.h2), state.envelopes, r0_ref=r0_ref)


def train(
    task: ToyTask,
    init: Optional[LoRDBAAdapter],
    config: QATConfig,
    rank: Optional[int] = None,
    ell: int = 1,
) -> Tuple[LoRDBAAdapter, QATState]:
    """Run ``config.steps`` AdamW steps; Freeze mode updates only the scales."""
    state = init_state(task, init, config, rank=rank, ell=ell)
    train_carriers = config.mode != QATMode.FREEZE
    log.info(
        f"QAT start: mode={config.mode.value} N={state.n} M={state.m} R={state.rank} "
        f"l={len(state.envelopes)} steps={config.steps} lr={config.lr}"
    )
    history: List[float] = []
    for step in range(config.steps):
        state = state.model_copy(update={"kappa": kappa_at(step, config)})
        loss, grads = qat_backward(state, task)
        if not math.isfinite(loss):
            raise DivergenceError(f"loss became non-finite at step {step}")
        history.append(loss)
        params, flat_grads = _flatten(state, grads, train_carriers)
        params, moments = adamw_step(params, flat_grads, state.moments, step + 1, learning_rate(step, config), config)
        state = state.model_copy(update={**_unflatten(state, params), "moments": moments, "step": step + 1})
        if step % max(config.steps // 10, 1) == 0:
            log.debug(f"step {step}: loss={loss:.6g}")

    final_loss, _ = qat_forward(state, task)
    if not math.isfinite(final_loss):
        raise DivergenceError("final loss is non-finite")
    history.append(final_loss)
    state = state.model_copy(update={"loss_history": history})
    r0_ref = init.r0_ref if init is not None else state.rank
    log.info(f"QAT done: loss {history[0]:.6g} -> {final_loss:.6g}")
    return export(state, r0_ref), state


def compare_qat_ptq(
    seeds: Sequence[int],
    n: int = 32,
    m: int = 32,
    rank: int = 4,
    samples: int = 256,
    config: Optional[QATConfig] = None,
) -> ComparisonReport:
    """Per seed: SVD-started PTQ on the task's least-squares delta, then QAT-Full from it.

    The default schedule is 2000 steps at a warm-up learning rate of 2e-4.
    """
    config = config or QATConfig(mode=QATMode.FULL, lr=2e-4, steps=2000)
    ptq_losses, qat_losses, ratios = [], [], []
    for seed in seeds:
        task, _ = make_planted_task(n, m, rank, samples, seed=seed)
        ptq, _ = run_admm(task.delta_target(), ADMMConfig(carrier_rank=rank, warm_start="svd"))
        ptq_loss = adapter_loss(ptq, task)
        qat, _ = train(task, ptq, config.model_copy(update={"seed": seed}))
        qat_loss = adapter_loss(qat, task)
        ptq_losses.append(ptq_loss)
        qat_losses.append(qat_loss)
        if ptq_loss > 0.0:
            ratios.append(qat_loss / ptq_loss)
        else:
            ratios.append(0.0 if qat_loss == 0.0 else float("inf"))
    return ComparisonReport(
        seeds=list(seeds),
        ptq_losses=ptq_losses,
        qat_losses=qat_losses,
        ratios=ratios,
        median_ratio=float(np.median(ratios)),
    )
