"""PTQ-LoRDBA: scaled consensus ADMM compression of a dense update into a LoRDBA adapter.

One sweep runs, in order: the block-1 and block-2 U-steps (Gauss–Seidel), one
closed-form scale sweep on the carriers sign(U + Y), the sign projection with the
scaled dual update, and the residual-balancing penalty update. Per-block
penalties are ρ̃_k = ρ/n_k with n₁ = NR and n₂ = RM.
"""
import math
from typing import List, Optional, Sequence, Tuple

import numpy as np

from linalg import (
    ThinSVD,
    as_dense,
    ensure_finite,
    frobenius_norm,
    pinv_solve,
    signs,
    solve_spd_batched,
    thin_svd,
)
from models import ADMMConfig, ADMMState, ADMMSummary, LoRDBAAdapter, ScaleEnvelope, SignMarginReport
from utils import chunk_slices, log, parallel_map
from utils.errors import DegenerateInputError, NonFiniteError, ShapeMismatchError

from .adapter_tools import dense_update, fit_objective, update_gradients

SCALE_AXES = ("alpha", "beta", "gamma")


# ========== Closed-form scale updates ==========

def _safe_ratio(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    out = np.zeros_like(num)
    nonzero = den > 0.0
    out[nonzero] = num[nonzero] / den[nonzero]
    return out


def fit_alpha(c1: np.ndarray, c2: np.ndarray, env: ScaleEnvelope, target: np.ndarray) -> np.ndarray:
    """Row-wise least squares; rows with an all-zero design get α = 0."""
    design = (c1 * env.beta) @ (c2 * env.gamma)
    return _safe_ratio(np.sum(target * design, axis=1), np.sum(design * design, axis=1))


def fit_gamma(c1: np.ndarray, c2: np.ndarray, env: ScaleEnvelope, target: np.ndarray) -> np.ndarray:
    design = ((env.alpha[:, None] * c1) * env.beta) @ c2
    return _safe_ratio(np.sum(target * design, axis=0), np.sum(design * design, axis=0))


def fit_beta(c1: np.ndarray, c2: np.ndarray, env: ScaleEnvelope, target: np.ndarray) -> np.ndarray:
    """β = G_β†·h_β with G_β = (PᵀP)⊙(QQᵀ), P = D_α·c1, Q = c2·D_γ."""
    p = env.alpha[:, None] * c1
    q = c2 * env.gamma
    gram = (p.T @ p) * (q @ q.T)
    h = np.sum((p.T @ target) * q, axis=1)
    return pinv_solve(gram, h)


_FITTERS = {"alpha": fit_alpha, "beta": fit_beta, "gamma": fit_gamma}


def fit_scales(
    c1: np.ndarray,
    c2: np.ndarray,
    envelopes: Sequence[ScaleEnvelope],
    target: np.ndarray,
    sweeps: int = 1,
    axes: Sequence[str] = SCALE_AXES,
) -> List[ScaleEnvelope]:
    """Block-coordinate sweeps over the scales with the carriers held fixed.

    Envelope i is fitted against its own residual target T − Σ_{i'≠i} ΔW⁽ⁱ'⁾,
    axes in the given order. Each axis solve is an exact partial minimiser.
    """
    envelopes = list(envelopes)
    for _ in range(sweeps):
        for i in range(len(envelopes)):
            residual = target - dense_update(c1, c2, envelopes[:i] + envelopes[i + 1:])
            env = envelopes[i]
            for axis in axes:
                fitted = _FITTERS[axis](c1, c2, env, residual)
                env = ScaleEnvelope(**{**{a: getattr(env, a) for a in SCALE_AXES}, axis: fitted})
            envelopes[i] = env
    return envelopes


def scale_sweep(state: ADMMState, target: np.ndarray) -> ADMMState:
    """One α → β → γ pass per envelope on sign(U + Y), the carriers this sweep commits.

    Scales fitted to ±1 carriers keep the continuous U on the same scale as M.
    """
    envelopes = fit_scales(signs(state.u1 + state.y1), signs(state.u2 + state.y2), state.envelopes, target)
    return state.model_copy(update={"envelopes": envelopes})


# ========== Scale refinement ==========

# Dense Jacobians above this many entries are not formed; refinement is skipped.
REFINE_MAX_ENTRIES = 2_000_000


def _pack_scales(envelopes: Sequence[ScaleEnvelope]) -> np.ndarray:
    return np.concatenate([np.concatenate([env.alpha, env.beta, env.gamma]) for env in envelopes])


def _unpack_scales(params: np.ndarray, n: int, r: int, m: int) -> List[ScaleEnvelope]:
    size = n + r + m
    return [
        ScaleEnvelope(alpha=chunk[:n], beta=chunk[n:n + r], gamma=chunk[n + r:])
        for chunk in np.split(params, len(params) // size)
    ]


def scale_jacobian(c1: np.ndarray, c2: np.ndarray, envelopes: Sequence[ScaleEnvelope]) -> np.ndarray:
    """∂ vec(ΔW)/∂(α⁽¹⁾, β⁽¹⁾, γ⁽¹⁾, …), row-major over (i, j)."""
    n, r = c1.shape
    m = c2.shape[1]
    flat = np.arange(n * m)
    blocks = []
    for env in envelopes:
        d_alpha = np.zeros((n * m, n))
        d_alpha[flat, flat // m] = (c1 @ ((env.beta[:, None] * c2) * env.gamma)).ravel()
        d_beta = np.einsum("ir,rj->ijr", env.alpha[:, None] * c1, c2 * env.gamma).reshape(n * m, r)
        d_gamma = np.zeros((n * m, m))
        d_gamma[flat, flat % m] = (((env.alpha[:, None] * c1) * env.beta) @ c2).ravel()
        blocks.extend((d_alpha, d_beta, d_gamma))
    return np.concatenate(blocks, axis=1)


def refine_scales(
    c1: np.ndarray,
    c2: np.ndarray,
    envelopes: Sequence[ScaleEnvelope],
    target: np.ndarray,
    iterations: int = 30,
) -> List[ScaleEnvelope]:
    """Levenberg–Marquardt over all scales jointly, carriers fixed.

    Only decreasing steps are accepted; on carriers that admit an exact fit the
    residual reaches rounding level in a few steps. Returns the input unchanged when
    the Jacobian would exceed ``REFINE_MAX_ENTRIES``.
    """
    n, r = c1.shape
    m = c2.shape[1]
    envelopes = list(envelopes)
    if n * m * len(envelopes) * (n + r + m) > REFINE_MAX_ENTRIES:
        log.debug(f"scale refinement skipped for N={n} M={m} R={r} l={len(envelopes)}")
        return envelopes

    params = _pack_scales(envelopes)
    residual = (target - dense_update(c1, c2, envelopes)).ravel()
    cost = 0.5 * float(residual @ residual)
    floor = 0.5 * (np.finfo(np.float64).eps * frobenius_norm(target)) ** 2
    damping = 1e-3
    for _ in range(iterations):
        if cost <= floor or damping > 1e4:
            break
        jac = scale_jacobian(c1, c2, envelopes)
        diag = np.sum(jac * jac, axis=0)
        weight = np.sqrt(damping * np.maximum(diag, 1e-12 * max(float(np.max(diag)), 1e-300)))
        system = np.concatenate([jac, np.diag(weight)], axis=0)
        step, *_ = np.linalg.lstsq(system, np.concatenate([residual, np.zeros(len(params))]), rcond=None)
        trial_params = params + step
        trial = _unpack_scales(trial_params, n, r, m)
        trial_residual = (target - dense_update(c1, c2, trial)).ravel()
        trial_cost = 0.5 * float(trial_residual @ trial_residual)
        if math.isfinite(trial_cost) and trial_cost < cost:
            gain = cost - trial_cost
            params, envelopes, residual, cost = trial_params, trial, trial_residual, trial_cost
            damping = max(damping / 10.0, 1e-12)
            if gain <= 1e-12 * cost:
                break
        else:
            damping *= 10.0
    return envelopes


# ========== Warm start ==========

def scale_matched_rho(target: np.ndarray, rank: int) -> float:
    """ρ⁽⁰⁾ = ‖T‖²_F/(NR + RM)."""
    n, m = target.shape
    return float(np.sum(target * target)) / (n * rank + rank * m)


def _start_state(c1: np.ndarray, c2: np.ndarray, envelopes: List[ScaleEnvelope], target: np.ndarray) -> ADMMState:
    objective = fit_objective(c1, c2, envelopes, target)
    return ADMMState(
        u1=c1,
        u2=c2,
        m1=c1.copy(),
        m2=c2.copy(),
        y1=np.zeros_like(c1),
        y2=np.zeros_like(c2),
        envelopes=envelopes,
        rho=scale_matched_rho(target, c1.shape[1]),
        objective_history=[objective],
        best_objective=objective,
        best_carriers=(c1.copy(), c2.copy()),
        best_envelopes=list(envelopes),
    )


def svd_warm_start(target: np.ndarray, rank: int, ell: int = 1, svd: Optional[ThinSVD] = None) -> ADMMState:
    """Binarised thin-SVD start.

    U₁ = sign(U_R), U₂ = sign(V_Rᵀ); the singular values are split into ℓ contiguous
    descending blocks that seed the zero-extended β⁽ⁱ⁾; α and γ come from one
    closed-form pass with β fixed.
    """
    target = as_dense(target, "target")
    n, m = target.shape
    if not 1 <= rank <= min(n, m):
        raise ShapeMismatchError(f"carrier rank {rank} outside [1, min(N, M)={min(n, m)}]")
    if not 1 <= ell <= rank:
        raise ShapeMismatchError(f"split-spectrum start needs 1 <= envelope rank <= R, got {ell}")

    svd = svd or thin_svd(target, rank)
    c1 = signs(svd.u)
    c2 = signs(svd.vt)
    envelopes = []
    for block in np.array_split(np.arange(rank), ell):
        beta = np.zeros(rank)
        beta[block] = svd.s[block]
        envelopes.append(ScaleEnvelope(alpha=np.ones(n), beta=beta, gamma=np.ones(m)))
    envelopes = fit_scales(c1, c2, envelopes, target, axes=("alpha", "gamma"))
    return _start_state(c1, c2, envelopes, target)


# ========== Carrier recovery start ==========

# Above this rank the quadratic-form system (R(R+1)/2 unknowns) is not assembled.
RECOVERY_MAX_RANK = 24


def equal_magnitude_basis(x: np.ndarray, seed: int = 0) -> Optional[np.ndarray]:
    """R×R matrix H such that every row of x·H has entries of one common magnitude.

    Rows of x = D_a·B·G with B ∈ {±1} satisfy x_i·Q·x_iᵀ = 0 for every
    Q = G⁻¹·D·G⁻ᵀ with D diagonal and trace-free. Two generic members of that null
    space share the eigenvectors G⁻ᵀ, which fixes H = G⁻¹ up to column scaling
    (for R = 2 a whole family works and any member is returned). None with fewer than
    1 + R(R − 1)/2 rows or when the eigenproblem breaks down.
    """
    n, r = x.shape
    if r == 1:
        return np.ones((1, 1))
    if n < 1 + r * (r - 1) // 2:
        return None
    iu, ju = np.triu_indices(r)
    features = x[:, iu] * x[:, ju] * np.where(iu == ju, 1.0, 2.0)
    _, _, vt = np.linalg.svd(features, full_matrices=True)
    forms = []
    for v in vt[-(r - 1):]:
        q = np.zeros((r, r))
        q[iu, ju] = v
        q[ju, iu] = v
        forms.append(q)
    try:
        if r == 2:
            values, vectors = np.linalg.eigh(forms[0])
            if not values[0] < 0.0 < values[1]:
                return None
            basis = vectors * np.sqrt(np.abs(values))
        else:
            weights = np.random.default_rng(seed).standard_normal((2, r - 1))
            qa = np.tensordot(weights[0], np.stack(forms), axes=1)
            qb = np.tensordot(weights[1], np.stack(forms), axes=1)
            _, vectors = np.linalg.eig(np.linalg.solve(qb, qa))
            basis = np.linalg.inv(np.real(vectors)).T
    except np.linalg.LinAlgError:
        return None
    return basis if np.all(np.isfinite(basis)) else None


def _rank_one_magnitudes(values: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """(u, v) ≥ 0 with |values| ≈ u·vᵀ."""
    svd = thin_svd(np.abs(values), 1)
    return np.abs(svd.u[:, 0]) * svd.s[0], np.abs(svd.vt[0])


def _fitted_candidate(
    c1: np.ndarray, c2: np.ndarray, seed: ScaleEnvelope, target: np.ndarray
) -> Tuple[float, List[ScaleEnvelope]]:
    envelopes = fit_scales(c1, c2, [seed], target, sweeps=10, axes=("beta", "gamma", "alpha"))
    envelopes = refine_scales(c1, c2, envelopes, target)
    return fit_objective(c1, c2, envelopes, target), envelopes


def recovery_warm_start(
    target: np.ndarray, rank: int, svd: Optional[ThinSVD] = None, seed: int = 0
) -> Optional[ADMMState]:
    """Consensus start from carriers read off an equal-magnitude basis of the SVD factors.

    The left factor U_R·S_R is rotated so its rows have equal-magnitude entries; their
    signs give B₁ and a least-squares solve gives B₂ with its scales. Targets that are
    already LoRDBA adapters at rank R (ℓ = 1) are recovered exactly. None when the
    basis is undetermined or R exceeds ``RECOVERY_MAX_RANK``.
    """
    target = as_dense(target, "target")
    n, m = target.shape
    if not 1 <= rank <= min(n, m) or rank > RECOVERY_MAX_RANK:
        return None
    svd = svd or thin_svd(target, rank)
    if np.any(svd.s == 0.0):
        return None
    left = svd.u * svd.s
    basis = equal_magnitude_basis(left, seed)
    if basis is None:
        return None
    p = left @ basis
    z, *_ = np.linalg.lstsq(p, target, rcond=None)
    c1 = signs(p)
    alpha, u = _rank_one_magnitudes(p)
    w, gamma = _rank_one_magnitudes(z)
    candidates = [(c1, signs(z), ScaleEnvelope(alpha=alpha, beta=u * w, gamma=gamma))]

    if rank == 2:
        # Any member of the R = 2 family gives B₁ but may skew B₂; read B₂ off the
        # right factor instead and try both row orders.
        right_basis = equal_magnitude_basis(svd.vt.T * svd.s, seed)
        if right_basis is not None:
            c2 = signs(svd.vt.T * svd.s @ right_basis).T
            start = ScaleEnvelope(alpha=alpha, beta=np.ones(rank), gamma=np.ones(m))
            candidates += [(c1, c2, start), (c1, c2[::-1].copy(), start)]

    best = None
    for cand_c1, cand_c2, start in candidates:
        objective, envelopes = _fitted_candidate(cand_c1, cand_c2, start, target)
        if math.isfinite(objective) and (best is None or objective < best[0]):
            best = (objective, cand_c1, cand_c2, envelopes)
    if best is None:
        return None
    _, c1, c2, envelopes = best
    return _start_state(c1, c2, envelopes, target)


def state_from_adapter(adapter: LoRDBAAdapter, target: np.ndarray) -> ADMMState:
    """Consensus start (U = M, Y = 0) from an existing adapter's carriers and scales."""
    target = as_dense(target, "target")
    if target.shape != (adapter.n, adapter.m):
        raise ShapeMismatchError(f"target {target.shape} does not match adapter ({adapter.n}, {adapter.m})")
    return _start_state(adapter.b1.to_dense(), adapter.b2.to_dense(), list(adapter.envelopes), target)


def extend_envelopes(adapter: LoRDBAAdapter, target: np.ndarray, sweeps: int = 5) -> LoRDBAAdapter:
    """Add one envelope (α = 1, γ = 1, β fitted to the residual) and refit all scales.

    The fitting objective never increases: β = 0 reproduces the input adapter.
    """
    target = as_dense(target, "target")
    c1, c2 = adapter.b1.to_dense(), adapter.b2.to_dense()
    residual = target - dense_update(c1, c2, adapter.envelopes)
    seed = ScaleEnvelope.ones(adapter.n, adapter.rank, adapter.m)
    beta = fit_beta(c1, c2, seed, residual)
    envelopes = list(adapter.envelopes) + [ScaleEnvelope(alpha=seed.alpha, beta=beta, gamma=seed.gamma)]
    envelopes = fit_scales(c1, c2, envelopes, target, sweeps=sweeps)
    return adapter.with_envelopes(envelopes)


# ========== U-steps ==========

def _row_systems(u2: np.ndarray, envelopes: Sequence[ScaleEnvelope], target: np.ndarray):
    """Per-row Gram K_r·K_rᵀ and data rhs K_r·T[r,:]ᵀ with K_r = Σᵢ αᵢ[r]·D_βᵢ·U₂·D_γᵢ."""
    alphas = np.stack([env.alpha for env in envelopes])
    carriers = np.stack([(env.beta[:, None] * u2) * env.gamma for env in envelopes])
    cross = np.einsum("iam,jbm->ijab", carriers, carriers)
    gram = np.einsum("ir,jr,ijab->rab", alphas, alphas, cross, optimize=True)
    projected = np.stack([target @ c.T for c in carriers])
    rhs = np.sum(alphas[:, :, None] * projected, axis=0)
    return gram, rhs


def _column_systems(u1: np.ndarray, envelopes: Sequence[ScaleEnvelope], target: np.ndarray):
    """Per-column Gram L_cᵀ·L_c and rhs L_cᵀ·T[:,c] with L_c = Σᵢ γᵢ[c]·D_αᵢ·U₁·D_βᵢ."""
    gammas = np.stack([env.gamma for env in envelopes])
    carriers = np.stack([(env.alpha[:, None] * u1) * env.beta for env in envelopes])
    cross = np.einsum("ina,jnb->ijab", carriers, carriers)
    gram = np.einsum("ic,jc,ijab->cab", gammas, gammas, cross, optimize=True)
    projected = np.stack([p.T @ target for p in carriers])
    rhs = np.sum(gammas[:, None, :] * projected, axis=0).T
    return gram, rhs


def _solve_chunked(gram: np.ndarray, rhs: np.ndarray, workers: Optional[int]) -> np.ndarray:
    slices = chunk_slices(gram.shape[0], workers)
    parts = parallel_map(lambda s: solve_spd_batched(gram[s], rhs[s]), slices, workers)
    return np.concatenate(parts, axis=0)


def u_step(state: ADMMState, target: np.ndarray, block: int, workers: Optional[int] = None) -> ADMMState:
    """Exact minimiser of f + (ρ̃_k/2)‖U_k − M_k + Y_k‖²_F over one carrier block.

    Block 1 decouples by rows of U₁, block 2 by columns of U₂; each is an R×R
    SPD solve.
    """
    if block not in (1, 2):
        raise ValueError(f"block must be 1 or 2, got {block}")
    rho_tilde = state.rho_tilde(block)
    if block == 1:
        gram, rhs = _row_systems(state.u2, state.envelopes, target)
        prox = state.m1 - state.y1
    else:
        gram, rhs = _column_systems(state.u1, state.envelopes, target)
        prox = (state.m2 - state.y2).T
    gram = gram + rho_tilde * np.eye(state.rank)
    rhs = rhs + rho_tilde * prox
    solution = _solve_chunked(gram, rhs, workers)
    if block == 1:
        return state.model_copy(update={"u1": solution})
    return state.model_copy(update={"u2": np.ascontiguousarray(solution.T)})


# ========== Projection, dual and penalty ==========

def projection_dual_step(state: ADMMState) -> ADMMState:
    """M_k ← sign(U_k + Y_k), Y_k ← Y_k + U_k − M_k."""
    z1 = state.u1 + state.y1
    z2 = state.u2 + state.y2
    m1 = signs(z1)
    m2 = signs(z2)
    d1 = frobenius_norm(m1 - state.m1)
    d2 = frobenius_norm(m2 - state.m2)
    return state.model_copy(
        update={
            "m1": m1,
            "m2": m2,
            "y1": z1 - m1,
            "y2": z2 - m2,
            "m_changed": bool(d1 > 0.0 or d2 > 0.0),
            "m_change_norms": (d1, d2),
        }
    )


def residuals(state: ADMMState) -> Tuple[float, float]:
    """(primal r, dual s) of the current iterate, each relative to its own scale.

    r = ‖U − M‖ / max(‖U‖, ‖M‖) and s = Σ ρ̃_k‖ΔM_k‖ / Σ ρ̃_k‖Y_k‖, so the balance does not
    depend on the magnitude of the target or of ρ itself.
    """
    u_norm = math.hypot(frobenius_norm(state.u1), frobenius_norm(state.u2))
    m_norm = math.hypot(frobenius_norm(state.m1), frobenius_norm(state.m2))
    gap = math.hypot(frobenius_norm(state.u1 - state.m1), frobenius_norm(state.u2 - state.m2))
    primal = gap / (max(u_norm, m_norm) or 1.0)
    weights = (state.rho_tilde(1), state.rho_tilde(2))
    change = sum(w * d for w, d in zip(weights, state.m_change_norms))
    scale = sum(w * frobenius_norm(y) for w, y in zip(weights, (state.y1, state.y2)))
    dual = change / (scale or 1.0)
    return primal, dual


def penalty_update(state: ADMMState, config: ADMMConfig) -> ADMMState:
    """Residual balancing, frozen from sweep index K/2 on; Y is rescaled with ρ."""
    primal, dual = residuals(state)
    rho, y1, y2 = state.rho, state.y1, state.y2
    if state.sweep < config.rho_schedule_cutoff:
        if primal > config.mu * dual:
            rho, y1, y2 = rho * config.tau, y1 / config.tau, y2 / config.tau
        elif dual > config.mu * primal:
            rho, y1, y2 = rho / config.tau, y1 * config.tau, y2 * config.tau
    return state.model_copy(
        update={
            "rho": rho,
            "y1": y1,
            "y2": y2,
            "primal_residual_history": [*state.primal_residual_history, primal],
            "dual_residual_history": [*state.dual_residual_history, dual],
            "rho_history": [*state.rho_history, rho],
        }
    )


def sign_margin(state: ADMMState, config: Optional[ADMMConfig] = None) -> SignMarginReport:
    """η = min entrywise |U_k + Y_k| over both blocks."""
    eta = min(float(np.min(np.abs(state.u1 + state.y1))), float(np.min(np.abs(state.u2 + state.y2))))
    in_tail = config is None or state.sweep >= config.rho_schedule_cutoff
    if eta == 0.0:
        log.warning("Sign margin violated: U + Y has an exactly zero entry")
    return SignMarginReport(eta=eta, positive=eta > 0.0, in_tail=in_tail)


# ========== Diagnostics ==========

def objective_gradients(
    u1: np.ndarray, u2: np.ndarray, envelopes: Sequence[ScaleEnvelope], target: np.ndarray
) -> Tuple[np.ndarray, np.ndarray]:
    """(∇_{U₁}f, ∇_{U₂}f) of f = ½‖T − ΔW(U₁, U₂)‖²_F."""
    grad_w = dense_update(u1, u2, envelopes) - target
    g1, g2, _ = update_gradients(u1, u2, envelopes, grad_w)
    return g1, g2


def _identity_residual(rho: float, n_k: int, y: np.ndarray, grad: np.ndarray, dm: np.ndarray) -> float:
    parts = (rho * y, n_k * grad, rho * dm)
    scale = sum(frobenius_norm(p) for p in parts)
    if scale == 0.0:
        return 0.0
    return frobenius_norm(parts[0] + parts[1] + parts[2]) / scale


def tail_monotone_fraction(state: ADMMState, config: ADMMConfig) -> Optional[float]:
    """Share of consecutive tail sweeps whose recorded objective did not increase."""
    first = int(math.ceil(config.rho_schedule_cutoff)) + 1
    tail = np.asarray(state.objective_history[first:])
    if tail.size < 2:
        return None
    slack = 1e-12 * max(float(np.max(np.abs(tail))), 1.0)
    return float(np.mean(np.diff(tail) <= slack))


def summarize(state: ADMMState, config: ADMMConfig, final_objective: float) -> ADMMSummary:
    if state.margin_history:
        eta = state.margin_history[-1]
        margin = SignMarginReport(eta=eta, positive=eta > 0.0, in_tail=state.sweep >= config.rho_schedule_cutoff)
    else:
        margin = sign_margin(state, config)
    return ADMMSummary(
        sweeps=state.sweep,
        freeze_sweep=state.freeze_sweep,
        objective_history=list(state.objective_history),
        warm_start_objective=state.objective_history[0],
        final_objective=final_objective,
        rho_history=list(state.rho_history),
        primal_residual_history=list(state.primal_residual_history),
        dual_residual_history=list(state.dual_residual_history),
        dual_identity_history=list(state.dual_identity_history),
        margin_history=list(state.margin_history),
        tail_monotone_fraction=tail_monotone_fraction(state, config),
        sign_margin=margin,
    )


# ========== Driver ==========

def admm_sweep(state: ADMMState, target: np.ndarray, config: ADMMConfig) -> ADMMState:
    """One full sweep, including its diagnostics."""
    envelopes_before = state.envelopes
    m1_before, m2_before = state.m1, state.m2
    u2_before = state.u2

    state = u_step(state, target, 1, config.workers)
    g1, _ = objective_gradients(state.u1, u2_before, envelopes_before, target)
    state = u_step(state, target, 2, config.workers)
    _, g2 = objective_gradients(state.u1, state.u2, envelopes_before, target)
    state = scale_sweep(state, target)

    eta = sign_margin(state).eta
    state = projection_dual_step(state)
    n1, n2 = state.block_sizes
    identity = max(
        _identity_residual(state.rho, n1, state.y1, g1, state.m1 - m1_before),
        _identity_residual(state.rho, n2, state.y2, g2, state.m2 - m2_before),
    )

    objective = fit_objective(state.m1, state.m2, state.envelopes, target)
    if not math.isfinite(objective):
        raise NonFiniteError(f"objective became non-finite at sweep {state.sweep}")
    update = {
        "objective_history": [*state.objective_history, objective],
        "dual_identity_history": [*state.dual_identity_history, identity],
        "margin_history": [*state.margin_history, eta],
    }
    if state.best_objective is None or objective < state.best_objective:
        update.update(
            best_objective=objective,
            best_carriers=(state.m1.copy(), state.m2.copy()),
            best_envelopes=list(state.envelopes),
        )
    state = state.model_copy(update=update)

    state = penalty_update(state, config)
    sweep = state.sweep + 1
    last_change = sweep if state.m_changed else state.last_change
    return state.model_copy(update={"sweep": sweep, "last_change": last_change})


def export_adapter(state: ADMMState, target: np.ndarray, config: ADMMConfig, r0_ref: int) -> LoRDBAAdapter:
    """Best (or final) binary iterate with ``polish_sweeps`` scale sweeps on its carriers.

    With ``refine_scales`` the polished scales are then refined jointly.
    """
    if config.keep_best and state.best_carriers is not None:
        c1, c2 = state.best_carriers
        envelopes = list(state.best_envelopes)
    else:
        c1, c2, envelopes = state.m1, state.m2, list(state.envelopes)
    envelopes = fit_scales(c1, c2, envelopes, target, sweeps=config.polish_sweeps)
    if config.refine_scales:
        envelopes = refine_scales(c1, c2, envelopes, target)
    return LoRDBAAdapter.from_dense(c1, c2, envelopes, r0_ref=r0_ref)


def _nested_start(target: np.ndarray, config: ADMMConfig, r0_ref: int) -> ADMMState:
    coarse_config = config.model_copy(update={"envelope_rank": config.envelope_rank - 1})
    coarse, _ = run_admm(target, coarse_config, r0_ref=r0_ref)
    return state_from_adapter(extend_envelopes(coarse, target, sweeps=config.polish_sweeps), target)


def _warm_start(target: np.ndarray, config: ADMMConfig) -> ADMMState:
    svd = thin_svd(target, config.carrier_rank)
    state = svd_warm_start(target, config.carrier_rank, config.envelope_rank, svd=svd)
    if config.warm_start != "best" or config.envelope_rank != 1:
        return state
    recovered = recovery_warm_start(target, config.carrier_rank, svd=svd)
    if recovered is not None and recovered.best_objective < state.best_objective:
        log.debug(f"carrier recovery start {recovered.best_objective:.6g} < SVD start {state.best_objective:.6g}")
        return recovered
    return state


def run_admm(
    target: np.ndarray, config: ADMMConfig, r0_ref: Optional[int] = None
) -> Tuple[LoRDBAAdapter, ADMMState]:
    """Warm start, then sweeps until K or a binary freeze in the fixed-penalty tail."""
    target = as_dense(target, "target")
    n, m = target.shape
    config.check_shape(n, m)
    if frobenius_norm(target) == 0.0:
        raise DegenerateInputError("target update is identically zero")
    r0_ref = r0_ref or config.carrier_rank

    if config.envelope_init == "nested" and config.envelope_rank > 1:
        state = _nested_start(target, config, r0_ref)
    else:
        state = _warm_start(target, config)
    log.info(
        f"ADMM start: N={n} M={m} R={config.carrier_rank} l={config.envelope_rank} "
        f"rho0={state.rho:.4g} objective={state.objective_history[0]:.6g}"
    )

    for t in range(config.max_sweeps):
        state = admm_sweep(state, target, config)
        log.debug(
            f"sweep {t}: objective={state.objective_history[-1]:.6g} rho={state.rho:.4g} "
            f"r={state.primal_residual_history[-1]:.3g} s={state.dual_residual_history[-1]:.3g} "
            f"changed={state.m_changed}"
        )
        if config.freeze_detect and not state.m_changed and t >= config.rho_schedule_cutoff:
            state = state.model_copy(update={"freeze_sweep": state.last_change})
            log.info(f"Binary carriers frozen after sweep {state.last_change}; stopping at sweep {t + 1}")
            break

    ensure_finite(state.u1, "U1")
    ensure_finite(state.u2, "U2")
    adapter = export_adapter(state, target, config, r0_ref)
    log.info(
        f"ADMM done: sweeps={state.sweep} freeze={state.freeze_sweep} "
        f"objective={fit_objective(adapter.b1.to_dense(), adapter.b2.to_dense(), adapter.envelopes, target):.6g}"
    )
    return adapter, state
