"""Quadratic-norm regularization as componentwise linear filtering.

The regularized estimate at parameter ``gamma`` is the LSE filtered by
``lam / (lam + gamma)``, so picking ``gamma`` reduces to a scalar root-find:
the discrepancy ``f(mu)`` (with ``mu = 1/gamma``) falls monotonically from
the full image power to zero, and the significance level fixes its target.
A variant adds non-negativity of the restored object via constrained least
squares.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import optimize

from ._rootfind import expand_bracket, find_root
from .errors import DegenerateTarget, DimensionMismatch, DomainError, NoRoot, NotConverged
from .estimators import FilterWeights, apply_filter, lse
from .model_core import PrincipalComponents, SpectralModel
from .stats import chi2_quantile


@dataclass(frozen=True)
class TikhonovSolution:
    """Regularized estimate at the significance level that fixed ``gamma``.

    ``achieved_misfit`` restates the filtered estimate's misfit, which the
    root-find pinned to the level's quantile.  For the non-negative variant
    ``weights`` still records the diagonal filter at the final ``gamma``;
    the active-set corrections live in ``x_reg`` itself.
    """

    gamma: float
    weights: FilterWeights
    p_reg: PrincipalComponents
    x_reg: np.ndarray
    achieved_misfit: float
    alpha: float


def tikhonov_weights(lam: np.ndarray, gamma: float) -> FilterWeights:
    """Diagonal filter ``lam / (lam + gamma)``; gamma = 0 recovers the LSE."""
    if gamma < 0.0:
        raise DomainError("gamma must be >= 0")
    lam = np.asarray(lam, dtype=float)
    if np.any(lam <= 0.0):
        raise DomainError("eigenvalues must be positive")
    return FilterWeights(lam / (lam + gamma), "tikhonov")


def discrepancy(mu: float, spec: SpectralModel) -> float:
    """Filtered-misfit as a function of the inverse regularization parameter.

    Strictly decreasing from the projected image power at ``mu = 0`` toward
    zero, which guarantees a unique root for any target strictly between.
    """
    if mu < 0.0:
        raise DomainError("mu must be >= 0")
    v = spec.refined_image / (1.0 + mu * spec.fisher_eigenvalues)
    return float(v @ v)


def lagrangian_value(spec: SpectralModel, p: PrincipalComponents, gamma: float) -> float:
    """Penalized objective: misfit plus ``gamma`` times squared coefficient norm."""
    if gamma < 0.0:
        raise DomainError("gamma must be >= 0")
    if len(p) != spec.effective_rank:
        raise DimensionMismatch("coefficient length does not match effective rank")
    resid = spec.refined_image - spec.singular_values * p.coeffs
    return float(resid @ resid + gamma * (p.coeffs @ p.coeffs))


def _misfit_target(spec: SpectralModel, alpha: float) -> float:
    t = chi2_quantile(1.0 - alpha, spec.effective_rank)
    if t <= 0.0:
        raise DegenerateTarget("misfit target must be positive")
    power = float(spec.refined_image @ spec.refined_image)
    if t >= power:
        raise NoRoot(
            f"target {t:.6g} is not below the image power {power:.6g}; "
            "relax alpha (the data are too noisy for this level)"
        )
    return t


def solve_gamma(spec: SpectralModel, alpha: float) -> TikhonovSolution:
    """Regularized estimate whose misfit equals the level-``alpha`` quantile.

    Root-finds the discrepancy in ``mu = 1/gamma`` (monotone, cleanly
    bracketed by doubling) to a relative residual of 1e-10, then assembles
    the filtered estimate.
    """
    t = _misfit_target(spec, alpha)

    def f(mu: float) -> float:
        return discrepancy(mu, spec) - t

    hi0 = 1.0 / float(spec.fisher_eigenvalues[0])
    lo, hi, f_lo, f_hi = expand_bracket(f, 0.0, hi0)
    mu = find_root(f, lo, hi, f_lo=f_lo, f_hi=f_hi, ftol=1e-11 * t, xtol_rel=1e-15)
    gamma = 1.0 / mu
    w = tikhonov_weights(spec.fisher_eigenvalues, gamma)
    p_reg, x_reg = apply_filter(spec, w, lse(spec))
    resid = (1.0 - w.weights) * spec.refined_image
    return TikhonovSolution(
        gamma=gamma,
        weights=w,
        p_reg=p_reg,
        x_reg=x_reg,
        achieved_misfit=float(resid @ resid),
        alpha=alpha,
    )


def _nnls_at(B: np.ndarray, phi: np.ndarray, gamma: float) -> np.ndarray:
    """Non-negative minimizer of ||phi - B x||^2 + gamma ||x||^2."""
    n = B.shape[1]
    A_aug = np.vstack([B, np.sqrt(gamma) * np.eye(n)])
    b_aug = np.concatenate([phi, np.zeros(n)])
    try:
        x, _ = optimize.nnls(A_aug, b_aug, maxiter=50 * n)
    except RuntimeError as exc:
        raise NotConverged(f"inner non-negative least squares failed: {exc}") from exc
    return x


def _kkt_residual(B: np.ndarray, phi: np.ndarray, gamma: float, x: np.ndarray) -> float:
    """Scaled stationarity violation of the non-negative quadratic program."""
    grad = 2.0 * (B.T @ (B @ x - phi) + gamma * x)
    scale = max(1.0, 2.0 * float(np.max(np.abs(B.T @ phi), initial=0.0)))
    active = x <= 0.0
    free_v = float(np.max(np.abs(grad[~active]), initial=0.0))
    act_v = float(np.max(-grad[active], initial=0.0))
    return max(free_v, act_v) / scale


def solve_nonneg(spec: SpectralModel, alpha: float, qp_tol: float = 1e-8) -> TikhonovSolution:
    """Minimum-power estimate with a misfit equality and a non-negative object.

    Follows the same inverse-parameter path as :func:`solve_gamma`, but each
    evaluation solves a non-negative least squares problem on the stacked
    system in object space; the root-find drives the achieved misfit to the
    level quantile.  The returned object satisfies ``min(x) >= -qp_tol`` and a
    gradient-scaled KKT residual of at most ``qp_tol``.
    """
    t = _misfit_target(spec, alpha)
    B = spec.singular_values[:, None] * spec.eigen_basis.T
    phi = spec.refined_image

    def mis(mu: float) -> float:
        x = _nnls_at(B, phi, 1.0 / mu)
        r = phi - B @ x
        return float(r @ r)

    def g(mu: float) -> float:
        return mis(mu) - t

    # Bracket in mu: misfit falls from ||phi||^2 toward the constrained
    # least-squares floor; if that floor is above the target there is no root.
    mu_lo = 1e-8 / float(spec.fisher_eigenvalues[0])
    while g(mu_lo) < 0.0:
        mu_lo *= 1e-3
        if mu_lo < 1e-300:
            raise NoRoot("misfit already below target at vanishing regularization")
    mu_hi = max(1.0 / float(spec.fisher_eigenvalues[-1]), mu_lo * 10.0)
    growth = 0
    while g(mu_hi) > 0.0:
        mu_hi *= 10.0
        growth += 1
        if growth > 60:
            raise NoRoot(
                "non-negative fit cannot reach the requested misfit level; "
                "relax alpha"
            )
    mu = find_root(g, mu_lo, mu_hi, ftol=1e-7 * t, xtol_rel=1e-13)
    gamma = 1.0 / mu
    x = _nnls_at(B, phi, gamma)
    if float(np.min(x, initial=0.0)) < -qp_tol:
        raise NotConverged("negative component beyond tolerance", best=x)
    res = _kkt_residual(B, phi, gamma, x)
    if res > qp_tol:
        raise NotConverged(f"KKT residual {res:.3e} exceeds qp_tol", best=x)
    r = phi - B @ x
    return TikhonovSolution(
        gamma=gamma,
        weights=tikhonov_weights(spec.fisher_eigenvalues, gamma),
        p_reg=PrincipalComponents(spec.eigen_basis.T @ x, "filtered"),
        x_reg=x,
        achieved_misfit=float(r @ r),
        alpha=alpha,
    )
