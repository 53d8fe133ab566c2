"""Data-formation models and their deterministic reductions.

The pipeline reduces an observation model in three steps: a general linear
model (known blur operator, noise mean and covariance) is whitened into a
standard model with unit white noise, which is then collapsed by SVD into an
uncoupled spectral form where every later estimator is diagonal.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, DomainError, NotPositiveDefinite, ZeroMatrix

ROLES = ("object", "lse", "trial", "filtered")

#: Relative eigenvalue floor below which a covariance is rejected rather than
#: repaired; silent repair would corrupt significance levels downstream.
PD_RTOL = 1e-12

#: Default relative singular-value cutoff for rank truncation.
RANK_RTOL = 1e-12


def _frozen(a) -> np.ndarray:
    out = np.array(a, dtype=float)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class GeneralLinearModel:
    """Observation model: image = psf_matrix @ object + noise.

    The noise has known mean ``noise_mean`` and positive-definite covariance
    ``noise_cov``.  Requires at least as many image samples as object samples.
    """

    psf_matrix: np.ndarray
    noise_mean: np.ndarray
    noise_cov: np.ndarray

    def __post_init__(self):
        H = _frozen(self.psf_matrix)
        a = _frozen(self.noise_mean)
        C = _frozen(self.noise_cov)
        if H.ndim != 2:
            raise DimensionMismatch("psf_matrix must be 2-D")
        m, n = H.shape
        if m < n:
            raise DimensionMismatch(f"need m >= n, got {m} x {n}")
        if a.shape != (m,):
            raise DimensionMismatch(f"noise_mean must have length {m}")
        if C.shape != (m, m):
            raise DimensionMismatch(f"noise_cov must be {m} x {m}")
        scale = np.max(np.abs(C)) if C.size else 0.0
        if np.max(np.abs(C - C.T)) > 1e-12 * scale:
            raise NotPositiveDefinite("noise covariance is not symmetric")
        object.__setattr__(self, "psf_matrix", H)
        object.__setattr__(self, "noise_mean", a)
        object.__setattr__(self, "noise_cov", C)

    @property
    def dims(self) -> tuple[int, int]:
        return self.psf_matrix.shape


@dataclass(frozen=True)
class StandardModel:
    """Whitened model: the noise on ``whitened_psf @ object`` is unit white.

    Construct via :func:`whiten`; the identity-covariance contract is checked
    statistically by the simulation harness.
    """

    whitened_psf: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "whitened_psf", _frozen(self.whitened_psf))

    @property
    def dims(self) -> tuple[int, int]:
        return self.whitened_psf.shape


@dataclass(frozen=True)
class SpectralModel:
    """SVD form of a whitened model together with the projected image.

    ``left_factor`` (m x r) and ``eigen_basis`` (n x r) are column-orthogonal,
    ``singular_values`` (r,) are positive and non-increasing, and
    ``refined_image`` (r,) is the image projected onto the retained left
    singular vectors.  ``truncated_values`` reports singular values dropped by
    the rank cutoff rather than discarding them silently.
    """

    left_factor: np.ndarray
    singular_values: np.ndarray
    eigen_basis: np.ndarray
    refined_image: np.ndarray
    effective_rank: int
    truncated_values: np.ndarray

    def __post_init__(self):
        for f in ("left_factor", "singular_values", "eigen_basis",
                  "refined_image", "truncated_values"):
            object.__setattr__(self, f, _frozen(getattr(self, f)))
        r = self.effective_rank
        if self.singular_values.shape != (r,) or self.refined_image.shape != (r,):
            raise DimensionMismatch("factor shapes inconsistent with effective_rank")
        if r and not (np.all(self.singular_values > 0.0)
                      and np.all(np.diff(self.singular_values) <= 0.0)):
            raise DomainError("singular values must be positive and non-increasing")

    @property
    def object_dim(self) -> int:
        return self.eigen_basis.shape[0]

    @property
    def fisher_eigenvalues(self) -> np.ndarray:
        """Squared singular values: the spectrum governing conditioning."""
        return self.singular_values ** 2


@dataclass(frozen=True)
class PrincipalComponents:
    """Coefficient vector in the right-singular-vector basis, tagged by role."""

    coeffs: np.ndarray
    role: str

    def __post_init__(self):
        if self.role not in ROLES:
            raise DomainError(f"role must be one of {ROLES}, got {self.role!r}")
        object.__setattr__(self, "coeffs", _frozen(self.coeffs))

    def __len__(self) -> int:
        return self.coeffs.shape[0]


def matrix_inverse_sqrt(cov: np.ndarray) -> np.ndarray:
    """Symmetric inverse square root of a symmetric positive-definite matrix.

    Uses a symmetric eigendecomposition (not Cholesky): the whitening
    transform requires the symmetric root.  Raises
    :class:`NotPositiveDefinite` if any eigenvalue falls at or below
    ``PD_RTOL`` times the largest one.
    """
    C = np.asarray(cov, dtype=float)
    if C.ndim != 2 or C.shape[0] != C.shape[1]:
        raise DimensionMismatch("covariance must be square")
    scale = np.max(np.abs(C)) if C.size else 0.0
    if np.max(np.abs(C - C.T)) > 1e-12 * scale:
        raise NotPositiveDefinite("covariance is not symmetric")
    evals, evecs = np.linalg.eigh(C)
    if evals[-1] <= 0.0 or evals[0] <= PD_RTOL * evals[-1]:
        raise NotPositiveDefinite(
            f"eigenvalue {evals[0]:.3e} below tolerance {PD_RTOL * evals[-1]:.3e}"
        )
    S = (evecs / np.sqrt(evals)) @ evecs.T
    return 0.5 * (S + S.T)


def whiten(model: GeneralLinearModel, image: np.ndarray) -> tuple[StandardModel, np.ndarray]:
    """Whitening transform: subtract the noise mean and equalize the noise.

    Returns the standard model and the whitened image
    ``C^{-1/2} (image - mean)``.
    """
    y = np.asarray(image, dtype=float)
    m, _ = model.dims
    if y.shape != (m,):
        raise DimensionMismatch(f"image must have length {m}")
    S = matrix_inverse_sqrt(model.noise_cov)
    return StandardModel(S @ model.psf_matrix), S @ (y - model.noise_mean)


def decompose(
    std: StandardModel,
    whitened_image: np.ndarray,
    rank_rel_tol: float = RANK_RTOL,
) -> SpectralModel:
    """SVD reduction of a standard model to its uncoupled spectral form.

    Singular values below ``rank_rel_tol`` times the largest are truncated
    (they carry no usable information and would destabilize every inverse
    that follows); the retained count becomes ``effective_rank``.
    """
    A = std.whitened_psf
    m, _ = A.shape
    z = np.asarray(whitened_image, dtype=float)
    if z.shape != (m,):
        raise DimensionMismatch(f"whitened image must have length {m}")
    if not np.any(A):
        raise ZeroMatrix("whitened operator is identically zero")
    U, s, Vt = np.linalg.svd(A, full_matrices=False)
    keep = s > max(rank_rel_tol, 0.0) * s[0]
    r = int(np.count_nonzero(keep))
    return SpectralModel(
        left_factor=U[:, :r],
        singular_values=s[:r],
        eigen_basis=Vt[:r].T,
        refined_image=U[:, :r].T @ z,
        effective_rank=r,
        truncated_values=s[r:],
    )


def with_image(spec: SpectralModel, whitened_image: np.ndarray) -> SpectralModel:
    """Same spectral factors, new projected image.

    Lets Monte Carlo loops reuse one SVD across noise realizations.
    """
    z = np.asarray(whitened_image, dtype=float)
    if z.shape != (spec.left_factor.shape[0],):
        raise DimensionMismatch("whitened image has wrong length")
    return dataclasses.replace(spec, refined_image=spec.left_factor.T @ z)


def synthesize(spec: SpectralModel, p: PrincipalComponents) -> np.ndarray:
    """Object vector for a coefficient vector: expand in the eigenbasis."""
    if len(p) != spec.effective_rank:
        raise DimensionMismatch("coefficient length does not match effective rank")
    return spec.eigen_basis @ p.coeffs


def analyze(spec: SpectralModel, x: np.ndarray, role: str = "trial") -> PrincipalComponents:
    """Coefficients of an object vector in the eigenbasis (inverse of synthesize)."""
    x = np.asarray(x, dtype=float)
    if x.shape != (spec.object_dim,):
        raise DimensionMismatch(f"object must have length {spec.object_dim}")
    return PrincipalComponents(spec.eigen_basis.T @ x, role)
