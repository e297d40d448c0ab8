"""Construction, reconstruction and accounting for LoRDBA adapters."""
from typing import List, Sequence, Tuple

import numpy as np

from linalg import as_dense, signs
from models import (
    DiagnosticsReport,
    LoRAFactors,
    LoRDBAAdapter,
    QATMode,
    ScaleEnvelope,
)
from utils import log
from utils.errors import DegenerateInputError, ShapeMismatchError

SCALE_BITS = 16

EnvelopeGradient = Tuple[np.ndarray, np.ndarray, np.ndarray]


# ========== Reconstruction ==========

def dense_update(c1: np.ndarray, c2: np.ndarray, envelopes: Sequence[ScaleEnvelope]) -> np.ndarray:
    """Σᵢ diag(α⁽ⁱ⁾)·c1·diag(β⁽ⁱ⁾)·c2·diag(γ⁽ⁱ⁾) for dense (real or ±1) carriers."""
    if c1.shape[1] != c2.shape[0]:
        raise ShapeMismatchError(f"carrier ranks differ: {c1.shape} vs {c2.shape}")
    out = np.zeros((c1.shape[0], c2.shape[1]))
    for env in envelopes:
        if env.dims != (c1.shape[0], c1.shape[1], c2.shape[1]):
            raise ShapeMismatchError(f"envelope lengths {env.dims} do not fit carriers {c1.shape}, {c2.shape}")
        out += env.term(c1, c2)
    return out


def reconstruct(adapter: LoRDBAAdapter) -> np.ndarray:
    """Dense N×M update ΔW(θ)."""
    return dense_update(adapter.b1.to_dense(), adapter.b2.to_dense(), adapter.envelopes)


def fit_objective(c1: np.ndarray, c2: np.ndarray, envelopes: Sequence[ScaleEnvelope], target: np.ndarray) -> float:
    """½‖T − ΔW‖²_F."""
    residual = target - dense_update(c1, c2, envelopes)
    return 0.5 * float(np.sum(residual * residual))


def update_gradients(
    c1: np.ndarray,
    c2: np.ndarray,
    envelopes: Sequence[ScaleEnvelope],
    grad_w: np.ndarray,
) -> Tuple[np.ndarray, np.ndarray, List[EnvelopeGradient]]:
    """Pull ∂L/∂ΔW back to the carriers and every (α, β, γ).

    Returns (∂L/∂c1, ∂L/∂c2, [(∂L/∂α⁽ⁱ⁾, ∂L/∂β⁽ⁱ⁾, ∂L/∂γ⁽ⁱ⁾)]).
    """
    g1 = np.zeros_like(c1, dtype=np.float64)
    g2 = np.zeros_like(c2, dtype=np.float64)
    scale_grads: List[EnvelopeGradient] = []
    for env in envelopes:
        a_g = env.alpha[:, None] * grad_w
        weighted = a_g * env.gamma
        g1 += (weighted @ c2.T) * env.beta
        g2 += env.beta[:, None] * (c1.T @ weighted)

        p = env.alpha[:, None] * c1
        q = c2 * env.gamma
        g_alpha = np.sum(grad_w * ((c1 * env.beta) @ q), axis=1)
        g_beta = np.sum((p.T @ grad_w) * q, axis=1)
        g_gamma = np.sum(grad_w * ((p * env.beta) @ c2), axis=0)
        scale_grads.append((g_alpha, g_beta, g_gamma))
    return g1, g2, scale_grads


# ========== Storage ==========

def storage_bits(adapter: LoRDBAAdapter) -> int:
    """R(N+M) + 16ℓ(N+R+M) logical bits, container excluded."""
    n, r, m, ell = adapter.n, adapter.rank, adapter.m, adapter.ell
    return r * (n + m) + SCALE_BITS * ell * (n + r + m)


def bpw(adapter: LoRDBAAdapter) -> Tuple[float, float]:
    """(bpw_bc, bpw_tot) relative to an fp16 LoRA of rank r0_ref."""
    bpw_bc = adapter.rank / adapter.r0_ref
    bpw_tot = storage_bits(adapter) / (adapter.r0_ref * (adapter.n + adapter.m))
    return bpw_bc, bpw_tot


def trainable_parameters(adapter: LoRDBAAdapter, mode: QATMode = QATMode.FULL) -> int:
    scales = adapter.ell * (adapter.n + adapter.rank + adapter.m)
    if mode == QATMode.FREEZE:
        return scales
    return adapter.rank * (adapter.n + adapter.m) + scales


# ========== Envelopes ==========

def pad_envelopes(adapter: LoRDBAAdapter, extra: int = 1) -> LoRDBAAdapter:
    """Append ``extra`` all-zero envelopes; ΔW(θ) is unchanged."""
    if extra < 0:
        raise ShapeMismatchError(f"cannot pad by {extra} envelopes")
    zeros = [ScaleEnvelope.zeros(adapter.n, adapter.rank, adapter.m) for _ in range(extra)]
    return adapter.with_envelopes(list(adapter.envelopes) + zeros)


# ========== LoRA factors ==========

def gauge_fix(factors: LoRAFactors) -> LoRAFactors:
    """Column-balancing gauge: equal ‖A_{:k}‖ and ‖B_{:k}‖, same product and signs."""
    a = np.array(factors.a, copy=True)
    b = np.array(factors.b, copy=True)
    norm_a = np.linalg.norm(a, axis=0)
    norm_b = np.linalg.norm(b, axis=0)
    active = (norm_a > 0.0) & (norm_b > 0.0)
    d = np.ones_like(norm_a)
    d[active] = np.sqrt(norm_b[active] / norm_a[active])
    a[:, active] *= d[active]
    b[:, active] /= d[active]
    return LoRAFactors(a=a, b=b)


def _magnitude_stats(x: np.ndarray) -> Tuple[float, float]:
    mags = np.abs(x)
    # population variance, normalised by the entry count
    return float(mags.mean()), float(mags.std())


def diagnose(factors: LoRAFactors) -> DiagnosticsReport:
    """Plug-in μ̂_A, μ̂_B, ζ̂ and ζ̂/min(μ̂) in the column-balancing gauge."""
    balanced = gauge_fix(factors)
    mu_a, zeta_a = _magnitude_stats(balanced.a)
    mu_b, zeta_b = _magnitude_stats(balanced.b)
    if min(mu_a, mu_b) == 0.0:
        raise DegenerateInputError("an all-zero factor has no residual-to-magnitude ratio")
    zeta = max(zeta_a, zeta_b)
    ratio = zeta / min(mu_a, mu_b)
    log.debug(f"Diagnostics: mu_A={mu_a:.4g} mu_B={mu_b:.4g} zeta={zeta:.4g} ratio={ratio:.4g}")
    return DiagnosticsReport(
        mu_a=mu_a,
        mu_b=mu_b,
        zeta_a=zeta_a,
        zeta_b=zeta_b,
        zeta=zeta,
        ratio=ratio,
        n=factors.n,
        m=factors.m,
        r0=factors.r0,
    )


def canonical_reconstruction(factors: LoRAFactors, mu_a: float, mu_b: float) -> LoRDBAAdapter:
    """Observed-sign adapter: B₁ = sign(A), B₂ = sign(B)ᵀ, β = μ_A·μ_B, α = γ = 1."""
    n, m, r = factors.n, factors.m, factors.r0
    envelope = ScaleEnvelope(alpha=np.ones(n), beta=np.full(r, mu_a * mu_b), gamma=np.ones(m))
    return LoRDBAAdapter.from_dense(
        signs(factors.a),
        signs(factors.b).T,
        [envelope],
        r0_ref=r,
    )


def target_from_factors(factors: LoRAFactors) -> np.ndarray:
    """ΔW* = A·Bᵀ in the balanced gauge."""
    balanced = gauge_fix(factors)
    return as_dense(balanced.product(), "target")


def factors_from_adapter(adapter: LoRDBAAdapter) -> LoRAFactors:
    """A = diag(α)·B₁·diag(β), B = diag(γ)·B₂ᵀ, so A·Bᵀ = ΔW(θ). Single envelope only."""
    if adapter.ell != 1:
        raise ShapeMismatchError(f"only a single-envelope adapter is a rank-R factor pair, got l={adapter.ell}")
    env = adapter.envelopes[0]
    a = env.alpha[:, None] * adapter.b1.to_dense() * env.beta[None, :]
    b = env.gamma[:, None] * adapter.b2.to_dense().T
    return LoRAFactors(a=a, b=b)
