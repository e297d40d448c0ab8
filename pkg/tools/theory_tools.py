"""Monte-Carlo checks of the sign-plus-noise expressivity guarantees.

Every trial draws from its own ``default_rng([seed, trial])`` stream, so reports are
reproducible and independent of the worker count. Universal constants in the bounds
are unknown; the checks fit them or test the scaling shape with c₁ = 1.
"""
import math
from typing import List, Optional, Sequence, Tuple

import numpy as np
from tqdm import tqdm

from linalg import frobenius_norm, operator_norm, relative_error, signs
from models import LoRAFactors, MCReport, NoiseKind, SignMode, SignNoiseModel
from utils import log, parallel_map
from utils.errors import RegimeError, ShapeMismatchError

from .adapter_tools import canonical_reconstruction, reconstruct

GAUSSIAN_PSI2 = math.sqrt(8.0 / 3.0)
DEFAULT_ZETA_GRID = (0.02, 0.04, 0.08, 0.12, 0.16, 0.2)
DEFAULT_T_GRID = (0.25, 0.5, 1.0, 1.5, 2.0, 3.0)


# ========== Sampling ==========

def zeta_proxy(model: SignNoiseModel) -> float:
    """ψ₂ proxy: s·√(8/3) for N(0, s²), a for U(−a, a), the supplied value for custom noise."""
    if model.noise == NoiseKind.GAUSSIAN:
        return model.noise_scale * GAUSSIAN_PSI2
    if model.noise == NoiseKind.UNIFORM:
        return model.noise_scale
    return float(model.custom_zeta)


def noise_scale_for_zeta(model: SignNoiseModel, zeta: float) -> float:
    if model.noise == NoiseKind.GAUSSIAN:
        return zeta / GAUSSIAN_PSI2
    if model.noise == NoiseKind.UNIFORM:
        return zeta
    raise RegimeError("custom noise has no adjustable scale")


def _noise(model: SignNoiseModel, rng: np.random.Generator, shape) -> np.ndarray:
    if model.noise == NoiseKind.GAUSSIAN:
        return model.noise_scale * rng.standard_normal(shape)
    if model.noise == NoiseKind.UNIFORM:
        return rng.uniform(-model.noise_scale, model.noise_scale, shape)
    return np.asarray(model.custom_sampler(rng, shape), dtype=np.float64)


def _latent_signs(model: SignNoiseModel, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    if model.sign_mode == SignMode.FIXED:
        sa = signs(np.asarray(model.fixed_sign_a, dtype=np.float64))
        sb = signs(np.asarray(model.fixed_sign_b, dtype=np.float64))
        if sa.shape != (model.n, model.r) or sb.shape != (model.m, model.r):
            raise ShapeMismatchError(f"fixed signs have shapes {sa.shape}, {sb.shape}")
        return sa, sb
    return (
        rng.choice([-1.0, 1.0], size=(model.n, model.r)),
        rng.choice([-1.0, 1.0], size=(model.m, model.r)),
    )


def trial_rng(model: SignNoiseModel, trial: int) -> np.random.Generator:
    return np.random.default_rng([model.seed, trial])


def sample_factors(
    model: SignNoiseModel, rng: Optional[np.random.Generator] = None
) -> Tuple[LoRAFactors, np.ndarray, np.ndarray, float]:
    """A = μ_A·σᴬ + ξᴬ, B = μ_B·σᴮ + ξᴮ; returns (factors, σᴬ, σᴮ, ζ proxy)."""
    rng = rng or np.random.default_rng(model.seed)
    sa, sb = _latent_signs(model, rng)
    a = model.mu_a * sa + _noise(model, rng, sa.shape)
    b = model.mu_b * sb + _noise(model, rng, sb.shape)
    return LoRAFactors(a=a, b=b), sa, sb, zeta_proxy(model)


def _model_dump(model: SignNoiseModel) -> dict:
    return model.model_dump(mode="json", exclude={"custom_sampler", "fixed_sign_a", "fixed_sign_b"})


def _run_trials(fn, trials: int, workers: Optional[int], desc: str, progress: bool) -> List:
    items = tqdm(range(trials), desc=desc, disable=not progress, leave=False)
    return parallel_map(fn, items, workers)


def _binomial_std(p: float, trials: int) -> float:
    p = min(max(p, 0.0), 1.0)
    return math.sqrt(p * (1.0 - p) / max(trials, 1))


# ========== Reconstruction bound ==========

def _latent_update(model: SignNoiseModel, sa: np.ndarray, sb: np.ndarray) -> np.ndarray:
    """ΔW(θ*) = μ_A·μ_B·σᴬ(σᴮ)ᵀ, evaluated through the same path as the observed-sign adapter."""
    return reconstruct(canonical_reconstruction(LoRAFactors(a=sa, b=sb), model.mu_a, model.mu_b))


def _reconstruction_trial(model: SignNoiseModel, trial: int) -> dict:
    factors, sa, sb, _ = sample_factors(model, trial_rng(model, trial))
    product = factors.product()
    latent = _latent_update(model, sa, sb)
    residual = product - latent
    consistent = bool(np.array_equal(signs(factors.a), sa) and np.array_equal(signs(factors.b), sb))
    observed_equal = None
    if consistent:
        observed = reconstruct(canonical_reconstruction(factors, model.mu_a, model.mu_b))
        observed_equal = bool(np.array_equal(observed, latent))
    return {
        "error": relative_error(latent, product),
        "consistent": consistent,
        "observed_equal": observed_equal,
        "op_norm_ok": operator_norm(residual) <= frobenius_norm(residual) * (1.0 + 1e-12),
    }


def check_regime(model: SignNoiseModel, delta: float) -> None:
    zeta = zeta_proxy(model)
    if model.n * model.m <= 8:
        raise RegimeError(f"NM = {model.n * model.m} must exceed 8")
    if not 0.0 < delta < 1.0:
        raise RegimeError(f"delta must lie in (0, 1), got {delta}")
    if zeta > max(model.mu_a, model.mu_b):
        raise RegimeError(f"zeta = {zeta:.4g} exceeds max(mu_A, mu_B)")


def check_reconstruction_bound(
    model: SignNoiseModel,
    trials: int,
    delta: float = 0.05,
    zeta_grid: Optional[Sequence[float]] = DEFAULT_ZETA_GRID,
    grid_trials: Optional[int] = None,
    workers: Optional[int] = None,
    progress: bool = False,
) -> MCReport:
    """Relative error of the latent-sign reconstruction against C′·ζ/min(μ)·√log(2NM/δ).

    C′ is fitted to the (1 − δ) quantile of ``trials`` draws; the violation rate is
    measured on as many further draws (trial indices ``trials`` … ``2·trials − 1``).
    ``zeta_grid`` holds ζ/min(μ_A, μ_B) ratios for the log–log slope fit.
    """
    check_regime(model, delta)
    zeta = zeta_proxy(model)
    min_mu = min(model.mu_a, model.mu_b)
    log_term = math.sqrt(math.log(2.0 * model.n * model.m / delta))

    results = _run_trials(lambda t: _reconstruction_trial(model, t), trials, workers, "theorem1", progress)
    errors = sorted(r["error"] for r in results)
    quantile = float(np.quantile(errors, 1.0 - delta)) if errors else 0.0
    ratio = zeta / min_mu
    c_prime = quantile / (ratio * log_term) if ratio > 0.0 else None
    fitted_bound = quantile if c_prime is None else c_prime * ratio * log_term
    holdout = _run_trials(
        lambda t: _reconstruction_trial(model, trials + t), trials, workers, "theorem1 holdout", progress
    )
    holdout_errors = [r["error"] for r in holdout]
    violations = sum(e > fitted_bound for e in holdout_errors)
    violation_rate = violations / max(trials, 1)
    # both the fitted quantile and the held-out count are binomial estimates
    violation_slack = 3.0 * math.sqrt(2.0) * _binomial_std(delta, trials)

    results = list(results) + list(holdout)
    consistent = [r for r in results if r["consistent"]]
    extras = {
        "zeta": zeta,
        "ratio": ratio,
        "quantile": quantile,
        "c_prime": c_prime,
        "log_term": log_term,
        "side_condition": math.log(6.0 * model.n * model.m / delta) / model.r,
        "consistent_trials": len(consistent),
        "observed_sign_equal": all(r["observed_equal"] for r in consistent),
        "op_norm_violations": sum(not r["op_norm_ok"] for r in results),
        "fit_violation_rate": sum(e > fitted_bound for e in errors) / max(trials, 1),
        "holdout_trials": len(holdout_errors),
        "holdout_empirical": holdout_errors,
        "violation_slack": violation_slack,
    }

    slope = intercept = None
    passed = (
        extras["observed_sign_equal"]
        and extras["op_norm_violations"] == 0
        and violation_rate <= delta + violation_slack
    )
    if zeta_grid and model.noise != NoiseKind.CUSTOM:
        zetas, medians = [], []
        for q in zeta_grid:
            point = model.with_noise_scale(noise_scale_for_zeta(model, q * min_mu))
            check_regime(point, delta)
            point_results = _run_trials(
                lambda t: _reconstruction_trial(point, t), grid_trials or trials, workers, f"zeta={q}", progress
            )
            zetas.append(q * min_mu)
            medians.append(float(np.median([r["error"] for r in point_results])))
        slope, intercept = (float(v) for v in np.polyfit(np.log(zetas), np.log(medians), 1))
        extras.update(grid_zeta=zetas, grid_median_error=medians)
        passed = passed and abs(slope - 1.0) <= 0.15
        log.info(f"Noise-scaling slope {slope:.3f} over {len(zetas)} grid points")

    return MCReport(
        quantity="relative_reconstruction_error",
        trials=trials,
        empirical=errors,
        bounds=[fitted_bound],
        violation_rate=violation_rate,
        slope=slope,
        intercept=intercept,
        passed=passed,
        model=_model_dump(model),
        extras=extras,
    )


# ========== Sign consistency ==========

def p_flip(model: SignNoiseModel) -> float:
    """2Nr·e^{−μ_A²/ζ²} + 2Mr·e^{−μ_B²/ζ²}."""
    zeta = zeta_proxy(model)
    if zeta == 0.0:
        return 0.0
    z2 = zeta * zeta
    return 2.0 * model.n * model.r * math.exp(-model.mu_a ** 2 / z2) + 2.0 * model.m * model.r * math.exp(
        -model.mu_b ** 2 / z2
    )


def check_sign_consistency(
    model: SignNoiseModel, trials: int, workers: Optional[int] = None, progress: bool = False
) -> MCReport:
    """Frequency of sign(A) ≠ σᴬ or sign(B) ≠ σᴮ against p_flip."""

    def trial(t: int) -> float:
        factors, sa, sb, _ = sample_factors(model, trial_rng(model, t))
        ok = np.array_equal(signs(factors.a), sa) and np.array_equal(signs(factors.b), sb)
        return 0.0 if ok else 1.0

    flips = _run_trials(trial, trials, workers, "signcons", progress)
    failure_rate = float(np.mean(flips)) if flips else 0.0
    bound = p_flip(model)
    vacuous = bound >= 1.0
    slack = 3.0 * _binomial_std(bound, trials)
    passed = vacuous or failure_rate <= bound + slack
    if vacuous:
        log.warning(f"Sign-consistency bound is vacuous (p_flip = {bound:.3g})")
    return MCReport(
        quantity="sign_flip_failure",
        trials=trials,
        empirical=flips,
        bounds=[bound],
        violation_rate=failure_rate,
        passed=passed,
        vacuous=vacuous,
        model=_model_dump(model),
        extras={"zeta": zeta_proxy(model), "consistency_rate": 1.0 - failure_rate, "slack": slack},
    )


# ========== Signal lower bound ==========

def check_signal_lowerbound(
    n: int, m: int, r: int, trials: int, seed: int = 0, workers: Optional[int] = None, progress: bool = False
) -> MCReport:
    """Pr[Σ W²_{ij} ≥ NMr/2] ≥ 1 − 8/(NM) for W = σᴬ(σᴮ)ᵀ with Rademacher signs."""

    def trial(t: int) -> float:
        rng = np.random.default_rng([seed, t])
        sa = rng.choice([-1.0, 1.0], size=(n, r))
        sb = rng.choice([-1.0, 1.0], size=(m, r))
        w = sa @ sb.T
        return float(np.sum(w * w))

    z = np.asarray(_run_trials(trial, trials, workers, "signal", progress))
    events = (z >= 0.5 * n * m * r).astype(float)
    frequency = float(events.mean()) if trials else 1.0
    tail = 8.0 / (n * m)
    slack = 3.0 * _binomial_std(tail, trials)
    expected = float(r * n * m)
    std_err = math.sqrt(2.0 * r * (r - 1) * n * m / max(trials, 1))
    mean_ok = abs(float(z.mean()) - expected) <= 4.0 * std_err if trials else True
    return MCReport(
        quantity="signal_event",
        trials=trials,
        empirical=events.tolist(),
        bounds=[1.0 - tail],
        violation_rate=1.0 - frequency,
        passed=frequency >= 1.0 - tail - slack and mean_ok,
        model={"n": n, "m": m, "r": r, "seed": seed},
        extras={
            "frequency": frequency,
            "mean_z": float(z.mean()) if trials else 0.0,
            "expected_z": expected,
            "var_z": 2.0 * r * (r - 1) * n * m,
            "mean_within_4_stderr": mean_ok,
        },
    )


# ========== Entry tail ==========

def entry_variance_proxy(model: SignNoiseModel) -> float:
    """V = rζ²(μ_A² + μ_B² + ζ²)."""
    zeta = zeta_proxy(model)
    return model.r * zeta ** 2 * (model.mu_a ** 2 + model.mu_b ** 2 + zeta ** 2)


def check_entry_tail(
    model: SignNoiseModel, trials: int, t_grid: Sequence[float] = DEFAULT_T_GRID
) -> MCReport:
    """Empirical Pr[|E₀₀| > t] against 6·exp(−min(t²/V, t/ζ²)) and E[E₀₀²] ≤ V."""
    rng = np.random.default_rng(model.seed)
    if model.sign_mode == SignMode.FIXED:
        sa = np.broadcast_to(signs(np.asarray(model.fixed_sign_a, dtype=np.float64))[0], (trials, model.r))
        sb = np.broadcast_to(signs(np.asarray(model.fixed_sign_b, dtype=np.float64))[0], (trials, model.r))
    else:
        sa = rng.choice([-1.0, 1.0], size=(trials, model.r))
        sb = rng.choice([-1.0, 1.0], size=(trials, model.r))
    a = model.mu_a * sa + _noise(model, rng, (trials, model.r))
    b = model.mu_b * sb + _noise(model, rng, (trials, model.r))
    entry = np.sum(a * b, axis=1) - model.mu_a * model.mu_b * np.sum(sa * sb, axis=1)

    zeta = zeta_proxy(model)
    v = entry_variance_proxy(model)
    t_grid = sorted(float(t) for t in t_grid)
    tail = [float(np.mean(np.abs(entry) > t)) for t in t_grid]
    bounds = []
    for t in t_grid:
        if v == 0.0:
            bounds.append(0.0 if t > 0.0 else 6.0)
        else:
            bounds.append(min(6.0 * math.exp(-min(t * t / v, t / zeta ** 2)), 1.0))

    squares = entry * entry
    second_moment = float(squares.mean()) if trials else 0.0
    std_err = float(squares.std()) / math.sqrt(max(trials, 1))
    passed = second_moment <= v + 3.0 * std_err
    if not passed:
        log.warning(f"E[E00^2] = {second_moment:.4g} exceeds V = {v:.4g}")
    return MCReport(
        quantity="entry_tail",
        trials=trials,
        empirical=tail,
        bounds=bounds,
        violation_rate=float(np.mean([e > b for e, b in zip(tail, bounds)])) if t_grid else 0.0,
        passed=passed,
        model=_model_dump(model),
        extras={
            "t_grid": t_grid,
            "zeta": zeta,
            "v": v,
            "second_moment": second_moment,
            "second_moment_stderr": std_err,
            "tail_monotone": all(x >= y for x, y in zip(tail, tail[1:])),
        },
    )
