"""Least squares and linear filtered estimation in the spectral basis.

Every linear filtered estimate reweights the least-squares coefficients
componentwise; the Wiener filter is the error-minimizing weight choice and
requires the true object, which makes it an oracle usable only in simulation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, DomainError
from .model_core import PrincipalComponents, SpectralModel, synthesize

KINDS = ("wiener", "quasi_optimal", "tikhonov", "truncated", "custom")

#: Kinds whose defining formulas are ratios in [0, 1]; clamped on construction
#: to absorb floating-point spill.
_ANALYTIC_KINDS = ("wiener", "quasi_optimal", "tikhonov")


@dataclass(frozen=True)
class FilterWeights:
    """Diagonal componentwise weights applied to the LSE coefficients.

    Analytic kinds are clamped to [0, 1]; ``truncated`` must be 0/1-valued;
    ``custom`` accepts anything but flags out-of-range entries via
    ``out_of_range``.
    """

    weights: np.ndarray
    kind: str

    def __post_init__(self):
        if self.kind not in KINDS:
            raise DomainError(f"kind must be one of {KINDS}, got {self.kind!r}")
        w = np.array(self.weights, dtype=float)
        out_of_range = bool(np.any(w < 0.0) or np.any(w > 1.0))
        if self.kind in _ANALYTIC_KINDS:
            w = np.clip(w, 0.0, 1.0)
            out_of_range = False
        elif self.kind == "truncated":
            if not np.all((w == 0.0) | (w == 1.0)):
                raise DomainError("truncated weights must be exactly 0 or 1")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "out_of_range", out_of_range)

    def __len__(self) -> int:
        return self.weights.shape[0]


def lse(spec: SpectralModel) -> PrincipalComponents:
    """Least-squares coefficients: projected image over singular values.

    Minimum-variance unbiased, and typically wildly unstable whenever the
    spectrum spans many orders of magnitude.
    """
    return PrincipalComponents(spec.refined_image / spec.singular_values, "lse")


def lse_covariance(spec: SpectralModel) -> np.ndarray:
    """Per-component variances of the LSE coefficients (inverse spectrum)."""
    return 1.0 / spec.fisher_eigenvalues


def apply_filter(
    spec: SpectralModel,
    w: FilterWeights,
    p_star: PrincipalComponents,
) -> tuple[PrincipalComponents, np.ndarray]:
    """Filtered coefficients and the corresponding object estimate."""
    if len(w) != len(p_star) or len(p_star) != spec.effective_rank:
        raise DimensionMismatch("weights/coefficients do not match effective rank")
    p_w = PrincipalComponents(w.weights * p_star.coeffs, "filtered")
    return p_w, synthesize(spec, p_w)


def filtered_error(w: FilterWeights, lam: np.ndarray, p0: PrincipalComponents) -> float:
    """Expected squared error of a filtered estimate given the true coefficients.

    Variance term ``w^2 / lam`` plus bias term ``(1 - w)^2 p0^2``, summed.
    """
    lam = np.asarray(lam, dtype=float)
    if np.any(lam <= 0.0):
        raise DomainError("eigenvalues must be positive")
    if len(w) != lam.shape[0] or len(p0) != lam.shape[0]:
        raise DimensionMismatch("length mismatch")
    ww = w.weights
    return float(np.sum(ww * ww / lam + (1.0 - ww) ** 2 * p0.coeffs ** 2))


def wiener_weights(lam: np.ndarray, p0_true: PrincipalComponents) -> FilterWeights:
    """Error-minimizing weights; needs the TRUE coefficients ``p0_true``.

    This is an oracle: on real data the true object is unknown, so the filter
    exists only inside simulations (the quasi-optimal filter is the practical
    surrogate).
    """
    lam = np.asarray(lam, dtype=float)
    if np.any(lam <= 0.0):
        raise DomainError("eigenvalues must be positive")
    if len(p0_true) != lam.shape[0]:
        raise DimensionMismatch("length mismatch")
    s = lam * p0_true.coeffs ** 2
    return FilterWeights(s / (1.0 + s), "wiener")


def truncated_weights(r: int, n_keep: int) -> FilterWeights:
    """Keep the first ``n_keep`` components, zero the rest."""
    if not 0 <= n_keep <= r:
        raise DomainError(f"n_keep must be in [0, {r}]")
    w = np.zeros(r)
    w[:n_keep] = 1.0
    return FilterWeights(w, "truncated")


def filtered_misfit(spec: SpectralModel, w: FilterWeights) -> float:
    """Misfit of the filtered estimate, written directly in the weights.

    Algebraically identical to ``misfit(spec, W p_*)`` because the diagonal
    operator commutes through the singular values.
    """
    if len(w) != spec.effective_rank:
        raise DimensionMismatch("weights do not match effective rank")
    resid = (1.0 - w.weights) * spec.refined_image
    return float(resid @ resid)
