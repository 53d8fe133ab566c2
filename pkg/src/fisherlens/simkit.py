"""Model-case generation and Monte Carlo verification.

Builds the two bundled restoration scenarios (a sinc-squared blur of a
sinusoid and a Gaussian blur of a sharp-plus-smooth profile), draws seeded
noise, runs the estimator pipeline per method, and aggregates restoration
metrics across trials.  Everything is reproducible bit-for-bit from the base
seed; trials may run on a thread pool (capped by ``FISHERLENS_THREADS``)
with an order-independent reduction, so the aggregate never depends on
scheduling.
"""

from __future__ import annotations

import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import special

from . import estimators, model_core, quasiopt, stats, tikhonov
from .errors import DomainError, InvalidRadius, InvalidSigma

METHODS = (
    "lse",
    "truncated",
    "tikhonov",
    "tikhonov_nonneg",
    "wiener_oracle",
    "quasi_optimal",
)

OBJECT_KINDS = ("sinusoid", "sharp_smooth")


@dataclass(frozen=True)
class PsfSpec:
    """Blur-kernel description: an analytic family or an explicit kernel.

    ``support`` (odd) truncates the kernel to a window; by default the kernel
    extends across the whole row.  Rows are sampled at integer pixel offsets
    with plain truncation at the boundaries (no wrap-around).
    """

    kind: str
    radius: float | None = None
    sigma_psf: float | None = None
    support: int | None = None
    kernel: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.kind not in ("sinc2", "gaussian", "custom_kernel"):
            raise DomainError(f"unknown PSF kind {self.kind!r}")
        if self.kind == "sinc2" and (self.radius is None or self.radius <= 0.0):
            raise InvalidRadius("sinc2 PSF needs radius > 0")
        if self.kind == "gaussian" and (self.sigma_psf is None or self.sigma_psf <= 0.0):
            raise InvalidSigma("gaussian PSF needs sigma_psf > 0")
        if self.kind == "custom_kernel" and not self.kernel:
            raise DomainError("custom_kernel PSF needs a kernel")
        if self.support is not None and (self.support < 1 or self.support % 2 == 0):
            raise DomainError("support must be a positive odd integer")

    def build_matrix(self, n: int, m: int | None = None) -> np.ndarray:
        if self.kind == "sinc2":
            return make_sinc2_psf(n, self.radius, m=m, support=self.support)
        if self.kind == "gaussian":
            return make_gaussian_psf(n, self.sigma_psf, m=m, support=self.support)
        return make_kernel_psf(n, np.asarray(self.kernel, dtype=float), m=m)


@dataclass(frozen=True)
class NoiseSpec:
    """Additive Gaussian noise: mean level, standard deviation, RNG seed."""

    mean: float = 0.0
    sigma: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.sigma < 0.0:
            raise DomainError("sigma must be >= 0")


@dataclass(frozen=True)
class SimulationCase:
    """One model case: object, blur, noise level and estimator settings.

    ``quasi_level`` chooses the constraint level for the quasi-optimal
    method: ``"match_wiener"`` puts it on the significance contour realized
    by the Wiener oracle in the same trial (the protocol used for the
    bundled cases, where the two filters are compared at equal levels), and
    ``"alpha"`` uses the case's fixed ``alpha``.
    """

    name: str
    n: int
    psf: PsfSpec
    object_kind: str
    amplitude: float
    noise_mean: float = 0.0
    noise_sigma: float = 100.0
    m: int | None = None
    alpha: float = 0.5
    alpha_band: tuple[float, float] = (0.01, 0.99)
    rank_rel_tol: float = model_core.RANK_RTOL
    quasi_level: str = "match_wiener"

    def __post_init__(self):
        if self.object_kind not in OBJECT_KINDS:
            raise DomainError(f"unknown object kind {self.object_kind!r}")
        if not 0.0 < self.alpha < 1.0:
            raise DomainError("alpha must be in (0, 1)")
        if self.quasi_level not in ("match_wiener", "alpha"):
            raise DomainError("quasi_level must be 'match_wiener' or 'alpha'")


@dataclass(frozen=True)
class TrialReport:
    """Per-trial restoration metrics, one entry per requested method."""

    seed: int
    rms_error: dict[str, float]
    misfit: dict[str, float]
    significance: dict[str, float]
    errors: dict[str, str]
    misfit_true: float
    runtime: float


@dataclass(frozen=True)
class AggregateReport:
    """Monte Carlo summary over independent trials."""

    case: str
    n_trials: int
    base_seed: int
    dof: int
    methods: tuple[str, ...]
    rms_mean: dict[str, float]
    rms_std: dict[str, float]
    rms_values: dict[str, list[float]]
    misfit_true_mean: float
    misfit_true_var: float
    ks_statistic: float
    lse_bias_z_max: float | None
    significance_values: dict[str, list[float]]
    failure_counts: dict[str, int]
    runtime: float

    def to_dict(self) -> dict:
        def num(x):
            return None if x != x else x  # JSON has no NaN

        return {
            "schema_version": 1,
            "case": self.case,
            "n_trials": self.n_trials,
            "base_seed": self.base_seed,
            "dof": self.dof,
            "methods": list(self.methods),
            "rms_mean": {k: num(v) for k, v in self.rms_mean.items()},
            "rms_std": {k: num(v) for k, v in self.rms_std.items()},
            "rms_values": self.rms_values,
            "misfit_true_mean": self.misfit_true_mean,
            "misfit_true_var": self.misfit_true_var,
            "ks_statistic": self.ks_statistic,
            "lse_bias_z_max": self.lse_bias_z_max,
            "significance_values": self.significance_values,
            "failure_counts": self.failure_counts,
            "runtime": self.runtime,
        }


def fig2_case(**overrides) -> SimulationCase:
    """Low-frequency case: one-period sinusoid of amplitude 1000 under a
    sinc-squared blur of characteristic radius 9 px, noise sigma 100."""
    base = dict(
        name="fig2",
        n=200,
        psf=PsfSpec(kind="sinc2", radius=9.0),
        object_kind="sinusoid",
        amplitude=1000.0,
        noise_sigma=100.0,
    )
    base.update(overrides)
    return SimulationCase(**base)


def fig3_case(**overrides) -> SimulationCase:
    """Sharp-plus-smooth case: broad bump with two single-pixel spikes under
    a Gaussian blur of sigma 3 px, noise sigma 100."""
    base = dict(
        name="fig3",
        n=200,
        psf=PsfSpec(kind="gaussian", sigma_psf=3.0),
        object_kind="sharp_smooth",
        amplitude=1000.0,
        noise_sigma=100.0,
    )
    base.update(overrides)
    return SimulationCase(**base)


def _offsets(n: int, m: int) -> np.ndarray:
    # image rows sample an extended grid centred on the object grid
    rows = np.arange(m) - (m - n) // 2
    return rows[:, None] - np.arange(n)[None, :]


def _apply_support(off: np.ndarray, kernel: np.ndarray, support: int | None) -> np.ndarray:
    if support is None:
        return kernel
    half = (support - 1) // 2
    return np.where(np.abs(off) <= half, kernel, 0.0)


def make_sinc2_psf(
    n: int, radius: float, m: int | None = None, support: int | None = None
) -> np.ndarray:
    """Convolution matrix of the squared-sinc kernel ``sinc((d)/R)^2 / R``.

    The kernel peaks at ``1/R`` and vanishes at integer multiples of ``R``;
    rows are exact samples of the analytic kernel (no renormalization).
    """
    if radius is None or radius <= 0.0:
        raise InvalidRadius("radius must be > 0")
    if n < 2 * radius:
        raise InvalidRadius(f"grid n={n} too small for radius {radius}")
    m = n if m is None else m
    off = _offsets(n, m)
    k = np.sinc(off / radius) ** 2 / radius
    return _apply_support(off, k, support)


def make_gaussian_psf(
    n: int, sigma_psf: float, m: int | None = None, support: int | None = None
) -> np.ndarray:
    """Convolution matrix of a discretized Gaussian, rows normalized to unit sum."""
    if sigma_psf is None or sigma_psf <= 0.0:
        raise InvalidSigma("sigma_psf must be > 0")
    m = n if m is None else m
    off = _offsets(n, m)
    k = np.exp(-0.5 * (off / sigma_psf) ** 2)
    k = _apply_support(off, k, support)
    return k / k.sum(axis=1, keepdims=True)


def make_kernel_psf(n: int, kernel: np.ndarray, m: int | None = None) -> np.ndarray:
    """Convolution matrix from an explicit odd-length kernel."""
    kernel = np.asarray(kernel, dtype=float)
    if kernel.ndim != 1 or kernel.size % 2 == 0:
        raise DomainError("kernel must be 1-D with odd length")
    m = n if m is None else m
    off = _offsets(n, m)
    half = (kernel.size - 1) // 2
    idx = np.clip(off + half, 0, kernel.size - 1)
    return np.where(np.abs(off) <= half, kernel[idx], 0.0)


def make_object(kind: str, n: int, amplitude: float) -> np.ndarray:
    """Test objects: one-period sinusoid, or a broad Gaussian bump plus two
    single-pixel spikes (spike height matched to the bump peak)."""
    if kind not in OBJECT_KINDS:
        raise DomainError(f"unknown object kind {kind!r}")
    if n < 16:
        raise DomainError("object grid must have n >= 16")
    t = np.arange(n, dtype=float)
    if kind == "sinusoid":
        return amplitude * np.sin(2.0 * np.pi * t / n)
    x = amplitude * np.exp(-0.5 * ((t - n / 2.0) / (n / 10.0)) ** 2)
    x[n // 4] += amplitude
    x[3 * n // 4] += amplitude
    return x


def draw_noise(spec: NoiseSpec, m: int) -> np.ndarray:
    """Seeded i.i.d. Gaussian noise; identical output for identical seeds."""
    rng = np.random.Generator(np.random.PCG64(spec.seed))
    return spec.mean + spec.sigma * rng.standard_normal(m)


@dataclass(frozen=True)
class _Prepared:
    """Noise-independent precomputation shared across trials of one case."""

    case: SimulationCase
    x0: np.ndarray
    H: np.ndarray
    Hx0: np.ndarray
    inv_sigma: float
    spec0: model_core.SpectralModel
    p0: np.ndarray
    wiener: estimators.FilterWeights
    t_alpha: float


def prepare_case(case: SimulationCase) -> _Prepared:
    x0 = make_object(case.object_kind, case.n, case.amplitude)
    H = case.psf.build_matrix(case.n, case.m)
    if case.noise_sigma > 0.0:
        inv_sigma = 1.0 / case.noise_sigma
    else:
        inv_sigma = 1.0  # noiseless runs keep the raw scale
    A = H * inv_sigma
    std = model_core.StandardModel(A)
    spec0 = model_core.decompose(std, np.zeros(H.shape[0]), case.rank_rel_tol)
    p0 = spec0.eigen_basis.T @ x0
    wiener = estimators.wiener_weights(
        spec0.fisher_eigenvalues, model_core.PrincipalComponents(p0, "object")
    )
    t_alpha = stats.chi2_quantile(1.0 - case.alpha, spec0.effective_rank)
    return _Prepared(
        case=case,
        x0=x0,
        H=H,
        Hx0=H @ x0,
        inv_sigma=inv_sigma,
        spec0=spec0,
        p0=p0,
        wiener=wiener,
        t_alpha=t_alpha,
    )


def _truncation_count(spec: model_core.SpectralModel, t: float) -> int:
    """Smallest prefix length whose discarded tail power is at most ``t``."""
    phi2 = spec.refined_image ** 2
    tails = np.concatenate([np.cumsum(phi2[::-1])[::-1], [0.0]])
    return min(int(np.searchsorted(-tails, -t)), spec.effective_rank)


def run_trial(
    case: SimulationCase,
    methods: tuple[str, ...] | list[str],
    seed: int,
    prepared: _Prepared | None = None,
) -> TrialReport:
    """One synthetic observation and the full restoration pipeline per method.

    A method failure is recorded in ``errors`` and never aborts the trial.
    """
    t_start = time.perf_counter()
    prep = prepare_case(case) if prepared is None else prepared
    for meth in methods:
        if meth not in METHODS:
            raise DomainError(f"unknown method {meth!r}")

    noise = draw_noise(
        NoiseSpec(mean=case.noise_mean, sigma=case.noise_sigma, seed=seed),
        prep.H.shape[0],
    )
    y0 = prep.Hx0 + noise
    z0 = (y0 - case.noise_mean) * prep.inv_sigma
    spec = model_core.with_image(prep.spec0, z0)
    r = spec.effective_rank
    p_star = estimators.lse(spec)
    misfit_true = stats.misfit(
        spec, model_core.PrincipalComponents(prep.p0, "object")
    )

    rms_error: dict[str, float] = {}
    misfits: dict[str, float] = {}
    signif: dict[str, float] = {}
    errors: dict[str, str] = {}
    sqrt_n = np.sqrt(case.n)

    def record(meth: str, x_hat: np.ndarray, theta: float) -> None:
        rms_error[meth] = float(np.linalg.norm(x_hat - prep.x0) / sqrt_n)
        misfits[meth] = theta
        signif[meth] = stats.significance_of(theta, r)

    for meth in methods:
        try:
            if meth == "lse":
                x_hat = model_core.synthesize(spec, p_star)
                record(meth, x_hat, stats.misfit(spec, p_star))
            elif meth == "truncated":
                w = estimators.truncated_weights(r, _truncation_count(spec, prep.t_alpha))
                _, x_hat = estimators.apply_filter(spec, w, p_star)
                record(meth, x_hat, estimators.filtered_misfit(spec, w))
            elif meth == "tikhonov":
                sol = tikhonov.solve_gamma(spec, case.alpha)
                record(meth, sol.x_reg, sol.achieved_misfit)
            elif meth == "tikhonov_nonneg":
                sol = tikhonov.solve_nonneg(spec, case.alpha)
                record(meth, sol.x_reg, sol.achieved_misfit)
            elif meth == "wiener_oracle":
                _, x_hat = estimators.apply_filter(spec, prep.wiener, p_star)
                record(meth, x_hat, estimators.filtered_misfit(spec, prep.wiener))
            elif meth == "quasi_optimal":
                target = None
                if case.quasi_level == "match_wiener":
                    target = estimators.filtered_misfit(spec, prep.wiener)
                sol = quasiopt.solve(
                    spec, quasiopt.QuasiOptConfig(alpha=case.alpha), target_misfit=target
                )
                theta = estimators.filtered_misfit(spec, sol.weights)
                record(meth, sol.x_filtered, theta)
        except Exception as exc:  # recorded per-method, trial continues
            errors[meth] = f"{type(exc).__name__}: {exc}"

    return TrialReport(
        seed=seed,
        rms_error=rms_error,
        misfit=misfits,
        significance=signif,
        errors=errors,
        misfit_true=misfit_true,
        runtime=time.perf_counter() - t_start,
    )


def _thread_count(n_trials: int) -> int:
    raw = os.environ.get("FISHERLENS_THREADS", "1")
    try:
        k = int(raw)
    except ValueError:
        k = 1
    return max(1, min(k, n_trials))


def run_monte_carlo(
    case: SimulationCase,
    methods: tuple[str, ...] | list[str],
    n_trials: int,
    base_seed: int,
) -> AggregateReport:
    """Independent trials with seeds ``base_seed + i`` and pooled metrics.

    Also accumulates, regardless of the method list, the misfit at the true
    object (mean, variance and the Kolmogorov-Smirnov distance to the
    chi-square law) and the standardized bias of the LSE coefficients.
    """
    t_start = time.perf_counter()
    prep = prepare_case(case)
    r = prep.spec0.effective_rank
    seeds = [base_seed + i for i in range(n_trials)]

    workers = _thread_count(n_trials)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            reports = list(pool.map(lambda s: run_trial(case, methods, s, prep), seeds))
    else:
        reports = [run_trial(case, methods, s, prep) for s in seeds]

    rms_values = {m: [] for m in methods}
    sig_values = {m: [] for m in methods}
    failures = {m: 0 for m in methods}
    for rep in reports:
        for m in methods:
            if m in rep.rms_error:
                rms_values[m].append(rep.rms_error[m])
                sig_values[m].append(rep.significance[m])
            else:
                failures[m] += 1

    thetas = np.array([rep.misfit_true for rep in reports])
    ks = _ks_statistic(thetas, r)

    lse_bias_z = None
    if "lse" in methods:
        # standardized per-component bias of the LSE coefficients
        acc = np.zeros(r)
        count = 0
        for s in seeds:
            noise = draw_noise(
                NoiseSpec(mean=case.noise_mean, sigma=case.noise_sigma, seed=s),
                prep.H.shape[0],
            )
            z0 = (prep.Hx0 + noise - case.noise_mean) * prep.inv_sigma
            acc += (prep.spec0.left_factor.T @ z0) / prep.spec0.singular_values
            count += 1
        mean_p = acc / count
        se = np.sqrt(1.0 / prep.spec0.fisher_eigenvalues / count)
        lse_bias_z = float(np.max(np.abs(mean_p - prep.p0) / se))

    return AggregateReport(
        case=case.name,
        n_trials=n_trials,
        base_seed=base_seed,
        dof=r,
        methods=tuple(methods),
        rms_mean={m: float(np.mean(v)) if v else float("nan") for m, v in rms_values.items()},
        rms_std={m: float(np.std(v)) if v else float("nan") for m, v in rms_values.items()},
        rms_values={m: [float(x) for x in v] for m, v in rms_values.items()},
        misfit_true_mean=float(np.mean(thetas)),
        misfit_true_var=float(np.var(thetas, ddof=1)) if n_trials > 1 else 0.0,
        ks_statistic=ks,
        lse_bias_z_max=lse_bias_z,
        significance_values={m: [float(x) for x in v] for m, v in sig_values.items()},
        failure_counts=failures,
        runtime=time.perf_counter() - t_start,
    )


def _ks_statistic(samples: np.ndarray, dof: int) -> float:
    """Kolmogorov-Smirnov distance of the samples to the chi-square CDF."""
    xs = np.sort(samples)
    cdf = special.gammainc(0.5 * dof, 0.5 * xs)
    n = xs.size
    hi = np.max(np.arange(1, n + 1) / n - cdf)
    lo = np.max(cdf - np.arange(0, n) / n)
    return float(max(hi, lo))


def trial_curves(case: SimulationCase, seed: int) -> dict[str, np.ndarray]:
    """Plot-ready curves for one trial: the four standard panels.

    Returns the object and its (noiseless and observed) image, the weight
    profiles of the Wiener, quasi-optimal and regularized filters, the true
    and quasi-optimally filtered principal components, and the three object
    estimates.
    """
    prep = prepare_case(case)
    noise = draw_noise(
        NoiseSpec(mean=case.noise_mean, sigma=case.noise_sigma, seed=seed),
        prep.H.shape[0],
    )
    y0 = prep.Hx0 + noise
    z0 = (y0 - case.noise_mean) * prep.inv_sigma
    spec = model_core.with_image(prep.spec0, z0)
    p_star = estimators.lse(spec)

    target = None
    if case.quasi_level == "match_wiener":
        target = estimators.filtered_misfit(spec, prep.wiener)
    qsol = quasiopt.solve(spec, quasiopt.QuasiOptConfig(alpha=case.alpha),
                          target_misfit=target)
    tsol = tikhonov.solve_gamma(spec, case.alpha)
    _, x_wiener = estimators.apply_filter(spec, prep.wiener, p_star)

    return {
        "pixel": np.arange(case.n, dtype=float),
        "object": prep.x0,
        "blurred": prep.Hx0,
        "image": y0,
        "component": np.arange(spec.effective_rank, dtype=float),
        "weights_wiener": prep.wiener.weights,
        "weights_quasi_optimal": qsol.weights.weights,
        "weights_tikhonov": tsol.weights.weights,
        "components_object": prep.p0,
        "components_quasi_optimal": qsol.p_filtered.coeffs,
        "estimate_wiener": x_wiener,
        "estimate_quasi_optimal": qsol.x_filtered,
        "estimate_tikhonov": tsol.x_reg,
    }
