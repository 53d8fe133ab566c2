"""Chi-square machinery, the misfit functional and feasible-region geometry.

An estimate is judged by its misfit, the squared distance between the
projected image and the image its coefficients predict.  At the true object
the misfit follows a chi-square law with one degree of freedom per retained
component, which turns quantiles of that law into acceptance bands for
candidate restorations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special

from ._rootfind import expand_bracket, find_root
from .errors import DimensionMismatch, DomainError, InvalidDof
from .model_core import PrincipalComponents, SpectralModel, analyze


@dataclass(frozen=True)
class FeasibilitySpec:
    """Two-sided significance band (alpha_low <= alpha_high) at ``dof`` components."""

    alpha_low: float
    alpha_high: float
    dof: int

    def __post_init__(self):
        if not (0.0 <= self.alpha_low <= self.alpha_high <= 1.0):
            raise DomainError("need 0 <= alpha_low <= alpha_high <= 1")
        if int(self.dof) < 1 or self.dof != int(self.dof):
            raise InvalidDof(f"dof must be a positive integer, got {self.dof!r}")

    def band(self) -> tuple[float, float]:
        """Misfit interval [t_low, t_high] induced by the band.

        Degenerate levels map to the natural bounds: alpha_high = 1 gives a
        lower bound of 0, alpha_low = 0 an upper bound of +inf.
        """
        t_low = 0.0 if self.alpha_high >= 1.0 else chi2_quantile(1.0 - self.alpha_high, self.dof)
        t_high = math.inf if self.alpha_low <= 0.0 else chi2_quantile(1.0 - self.alpha_low, self.dof)
        return t_low, t_high


@dataclass(frozen=True)
class FisherSpectrum:
    """Spectrum of the information matrix and the induced ellipsoid geometry."""

    eigenvalues: np.ndarray
    eigen_basis: np.ndarray
    condition_number: float
    semi_axes: np.ndarray

    def __post_init__(self):
        lam = np.asarray(self.eigenvalues, dtype=float)
        if lam.size and (np.any(lam <= 0.0) or np.any(np.diff(lam) > 0.0)):
            raise DomainError("eigenvalues must be positive and non-increasing")


def chi2_cdf(t: float, n: int) -> float:
    """Chi-square CDF with ``n`` degrees of freedom, via the regularized
    lower incomplete gamma function."""
    if int(n) < 1 or n != int(n):
        raise InvalidDof(f"dof must be a positive integer, got {n!r}")
    if t < 0.0:
        raise DomainError("chi2_cdf requires t >= 0")
    return float(special.gammainc(0.5 * n, 0.5 * t))


def chi2_quantile(gamma: float, n: int) -> float:
    """Root ``t`` of ``chi2_cdf(t, n) = gamma`` by bracketed root finding.

    ``gamma`` must lie strictly inside (0, 1); the endpoints correspond to the
    degenerate bounds 0 and +inf and are rejected.
    """
    if int(n) < 1 or n != int(n):
        raise InvalidDof(f"dof must be a positive integer, got {n!r}")
    if not 0.0 < gamma < 1.0:
        raise DomainError(f"quantile level must be in (0, 1), got {gamma!r}")

    def f(t: float) -> float:
        return float(special.gammainc(0.5 * n, 0.5 * t)) - gamma

    # Wilson-Hilferty gives the scale; expansion secures the bracket.
    z = special.ndtri(gamma)
    guess = n * (1.0 - 2.0 / (9.0 * n) + z * math.sqrt(2.0 / (9.0 * n))) ** 3
    hi = max(guess, 1e-8)
    lo, hi, f_lo, f_hi = expand_bracket(f, 0.0, hi)
    return find_root(f, lo, hi, f_lo=f_lo, f_hi=f_hi, xtol_rel=1e-14)


def misfit(spec: SpectralModel, p: PrincipalComponents) -> float:
    """Squared residual between the projected image and the trial prediction."""
    if len(p) != spec.effective_rank:
        raise DimensionMismatch("coefficient length does not match effective rank")
    resid = spec.refined_image - spec.singular_values * p.coeffs
    return float(resid @ resid)


def is_feasible(theta: float, fs: FeasibilitySpec) -> bool:
    """True when the misfit lies inside the band's quantile interval (inclusive)."""
    if theta < 0.0:
        raise DomainError("misfit must be >= 0")
    t_low, t_high = fs.band()
    return t_low <= theta <= t_high


def significance_of(theta: float, n: int) -> float:
    """Upper significance level at which ``theta`` sits exactly on the band edge."""
    if int(n) < 1 or n != int(n):
        raise InvalidDof(f"dof must be a positive integer, got {n!r}")
    if theta < 0.0:
        raise DomainError("misfit must be >= 0")
    return float(special.gammaincc(0.5 * n, 0.5 * theta))


def fisher_spectrum(spec: SpectralModel, fs: FeasibilitySpec, alpha: float) -> FisherSpectrum:
    """Information-matrix spectrum and ellipsoid semi-axes at level ``alpha``.

    Eigenvalues are the squared singular values; the k-th semi-axis is
    ``sqrt(t / eigenvalue_k)`` with ``t`` the band-edge quantile at ``alpha``.
    The condition number is reported on the truncated spectrum.
    """
    if not 0.0 < alpha < 1.0:
        raise DomainError("alpha must be in (0, 1)")
    lam = spec.fisher_eigenvalues
    t = chi2_quantile(1.0 - alpha, fs.dof)
    return FisherSpectrum(
        eigenvalues=lam,
        eigen_basis=spec.eigen_basis,
        condition_number=float(lam[0] / lam[-1]) if lam.size else math.nan,
        semi_axes=np.sqrt(t / lam),
    )


def ellipsoid_quadratic(spec: SpectralModel, x: np.ndarray, x_star: np.ndarray) -> float:
    """Quadratic form of the feasible-region ellipsoid centred at ``x_star``.

    Equals the misfit of ``x`` whenever ``x_star`` is the least-squares
    estimate; the two representations cross-check each other.
    """
    x = np.asarray(x, dtype=float)
    x_star = np.asarray(x_star, dtype=float)
    if x.shape != (spec.object_dim,) or x_star.shape != (spec.object_dim,):
        raise DimensionMismatch(f"vectors must have length {spec.object_dim}")
    d = analyze(spec, x - x_star).coeffs
    v = spec.singular_values * d
    return float(v @ v)
