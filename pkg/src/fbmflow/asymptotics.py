"""Short-time density pipelines and exponent-series fitting.

The on-diagonal pipeline estimates p(t, a, a) t^{nH} over a geometric
time grid and fits it against powers t^{nu H} drawn from the third
exponent lattice.  The off-diagonal pipeline first shifts the driver by
the energy minimizer, which moves the endpoint mass next to the target
point, so the kernel estimate stays usable even when the raw density is
exponentially small; the Gaussian factor and the drift correction
exp(-E/(2 t^{2H}) + beta / t^{2H-1}) t^{-nH} are divided out before
fitting over the fourth lattice.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .fbm import GridPath, HurstParam, sample_paths
from .young import VectorFieldSystem, solve_ode
from .expansion import build_lattice, phi_hierarchy
from .cameron_martin import (
    MinimizerSolution,
    base_flow,
    first_order_weights,
    minimize_energy,
    phi1_endpoint,
)
from .malliavin import (
    _cell_weights,
    kde_point,
    silverman_bandwidth,
)
from scipy.stats import multivariate_normal


@dataclass
class SeriesFit:
    exponents: list                  # lattice elements
    coefficients: np.ndarray
    std_errors: np.ndarray
    covariance: np.ndarray
    peeled: np.ndarray               # sequential single-term fits
    t: np.ndarray
    values: np.ndarray
    value_errors: np.ndarray
    predictions: np.ndarray
    hurst: float
    residual_norm: float = 0.0
    condition_number: float = 0.0

    def coefficient(self, nu_value: float) -> tuple:
        """(coefficient, std error) of the exponent with the given value."""
        for i, e in enumerate(self.exponents):
            if abs(e.value - nu_value) < 1e-9:
                return float(self.coefficients[i]), float(self.std_errors[i])
        raise KeyError(f"exponent {nu_value} not in fit")


def fit_series(t, values, std_errors, exponents, hurst: HurstParam) -> SeriesFit:
    """Weighted least squares of values(t) on the powers t^{nu H}.

    Weights are inverse squared standard errors.  Both the joint WLS
    solution (with its covariance) and a sequential peel (fit leading
    term, subtract, fit next) are reported.
    """
    h = hurst.value if isinstance(hurst, HurstParam) else float(hurst)
    t = np.asarray(t, dtype=float)
    values = np.asarray(values, dtype=float)
    se = np.asarray(std_errors, dtype=float)
    exponents = sorted(exponents, key=lambda e: e.value)
    if t.shape[0] < len(exponents) + 2:
        raise ValueError(
            f"need at least {len(exponents) + 2} grid times for "
            f"{len(exponents)} exponents"
        )
    X = np.column_stack([t ** (e.value * h) for e in exponents])
    wgt = 1.0 / se**2
    A = X.T * wgt
    N = A @ X
    cov = np.linalg.inv(N)
    coef = cov @ (A @ values)
    pred = X @ coef

    resid = values.copy()
    peeled = np.empty(len(exponents))
    for j in range(len(exponents)):
        col = X[:, j]
        peeled[j] = np.sum(wgt * col * resid) / np.sum(wgt * col * col)
        resid = resid - peeled[j] * col

    return SeriesFit(
        exponents=list(exponents),
        coefficients=coef,
        std_errors=np.sqrt(np.diag(cov)),
        covariance=cov,
        peeled=peeled,
        t=t,
        values=values,
        value_errors=se,
        predictions=pred,
        hurst=h,
        residual_norm=float(np.sqrt(np.sum(wgt * (values - pred) ** 2))),
        condition_number=float(np.linalg.cond(X * np.sqrt(wgt)[:, None])),
    )


def geometric_grid(t_min: float, t_max: float, n: int) -> np.ndarray:
    return np.geomspace(t_min, t_max, n)


def _default_exponents(lattice, t_grid, cutoff, max_cols=6):
    """Exponents used in a pipeline fit.

    With an explicit cutoff every lattice element is used; otherwise the
    smallest exponents are kept, up to max_cols and at least two fewer
    than the number of grid times.  Too few columns leave series
    truncation bias in the low-order coefficients; too many make the
    power-law design so collinear that value errors blow up in the fit.
    """
    elems = sorted(lattice, key=lambda e: e.value)
    if cutoff is not None:
        return elems
    return elems[: min(len(elems), max_cols, max(3, len(t_grid) - 2))]


def _richardson_point(samples, point, bandwidth, control_mean_fn,
                      weights=None, control_samples=None):
    """Bandwidth-extrapolated KDE value at one point.

    Evaluates the (control-variate) estimator at bandwidths h, h/2 and
    h/4, forms the two Richardson extrapolants that cancel the h^2
    smoothing bias, and returns the finer one together with its
    statistical error and a systematic error taken as the spread of the
    two extrapolants.  Returns (value, stat_se, sys_err, v_h, v_h2).
    """
    ests = []
    for k in range(3):
        width = bandwidth / 2**k
        v, s, _ = kde_point(samples, point, width, weights=weights,
                            control_samples=control_samples,
                            control_mean=control_mean_fn(width))
        ests.append((v, s))
    (v1, s1), (v2, s2), (v3, s3) = ests
    r1 = (4.0 * v2 - v1) / 3.0
    r2 = (4.0 * v3 - v2) / 3.0
    stat = np.sqrt(16.0 * s3**2 + s2**2) / 3.0
    return r2, stat, abs(r2 - r1), v1, v2


def _gaussian_kernel_mean(point, mean, cov, bandwidth) -> float:
    """Exact E[K_h(G - point)] for Gaussian G: the convolved normal pdf."""
    S = np.atleast_2d(cov) + np.diag(np.asarray(bandwidth) ** 2)
    return float(multivariate_normal.pdf(np.asarray(point), mean=mean, cov=S))


# ---------------------------------------------------------------------------
# on-diagonal


def on_diagonal_pipeline(
    vf: VectorFieldSystem,
    base_point,
    hurst: HurstParam,
    t_grid=None,
    n_paths: int = 100_000,
    n_steps: int = 64,
    seed: int = 0,
    cutoff: float | None = None,
) -> dict:
    """Estimate p(t, a, a) t^{nH} along t_grid and fit the lattice series.

    Each t gets an independent driver ensemble (seed offset by index),
    the density is read off at the base point with the full-Silverman
    bandwidth, and the half-bandwidth value is carried along as a bias
    probe.  Coefficients beyond the third lattice exponent are reported
    but should not be relied on.
    """
    h = hurst.value
    a = np.asarray(base_point, dtype=float)
    if t_grid is None:
        t_grid = geometric_grid(0.05, 0.8, 8)
    t_grid = np.asarray(t_grid, dtype=float)

    sig_a = np.atleast_2d(vf.sigma(a))           # (n, d)
    b_a = np.atleast_1d(vf.b(a))                 # (n,)
    sig_cov = sig_a @ sig_a.T

    rows = []
    vals = np.empty(t_grid.shape[0])
    errs = np.empty(t_grid.shape[0])
    for i, t in enumerate(t_grid):
        eps = t**h
        ens = sample_paths(hurst, n_steps, n_paths, seed + i, dim=vf.d)
        sol = solve_ode(
            vf, eps * ens.values, a, clock_scale=eps ** (1.0 / h),
            times=ens.times, with_jacobian=False,
        )
        endpoints = sol.endpoint                  # (M, n)
        bw = silverman_bandwidth(endpoints)
        if np.any(bw <= 0.0):
            raise ValueError("degenerate endpoint spread")
        # first-order Gaussian surrogate of the endpoint: its kernel
        # expectation is exact, so the difference estimator strips the
        # Gaussian bulk of the KDE noise
        w1 = ens.values[:, :, -1]                 # (M, d), i.i.d. N(0, 1)
        proxy = a + eps * w1 @ sig_a.T + t * b_a

        def cm(width):
            return _gaussian_kernel_mean(a, a + t * b_a, eps**2 * sig_cov, width)

        v4, s4, sys_err, v, vh = _richardson_point(
            endpoints, a, bw, cm, control_samples=proxy
        )
        scale = t ** (vf.n * h)
        vals[i] = v4 * scale
        errs[i] = np.sqrt(s4**2 + sys_err**2) * scale
        rows.append(
            {
                "t": float(t),
                "eps": float(eps),
                "raw": float(v4),
                "std_error": float(np.sqrt(s4**2 + sys_err**2)),
                "raw_full_bw": float(v),
                "raw_half_bw": float(vh),
                "stat_error": float(s4),
                "scaled": float(vals[i]),
            }
        )

    lattice = build_lattice("lambda3", hurst, 2.0 / h if cutoff is None else cutoff)
    exps = _default_exponents(lattice, t_grid, cutoff)
    fit = fit_series(t_grid, vals, errs, exps, hurst)
    for row, pred in zip(rows, fit.predictions):
        row["prediction"] = float(pred)
    return {"rows": rows, "fit": fit, "lattice": lattice, "t_grid": t_grid}


# ---------------------------------------------------------------------------
# off-diagonal


@dataclass
class OffDiagonalReport:
    minimizer: MinimizerSolution
    energy: float
    nu_bar: np.ndarray
    beta: float
    fit: SeriesFit
    rows: list = field(default_factory=list)

    @property
    def leading_coeff(self) -> float:
        """Fitted coefficient of the smallest lattice exponent."""
        return float(self.fit.coefficients[0])


def off_diagonal_pipeline(
    vf: VectorFieldSystem,
    base_point,
    target,
    hurst: HurstParam,
    t_grid=None,
    n_paths: int = 100_000,
    n_steps: int = 64,
    seed: int = 0,
    cutoff: float | None = None,
    minimizer: MinimizerSolution | None = None,
) -> OffDiagonalReport:
    """Density asymptotics at a distant target point.

    Pipeline: find the energy minimizer gamma-bar with its multiplier,
    take beta = <nu_bar, phi^{1/H}_1> from the deterministic hierarchy,
    then for every t estimate the density with the driver shifted by
    gamma-bar — the change of measure contributes the exact weight
    exp(-<nu_bar, phi^1_1(w)> / eps) per sample — and divide out the
    exponential prefactor before the lattice fit.  The reported energy
    is the minimizer's own value (same object, no recomputation).
    """
    h = hurst.value
    a = np.asarray(base_point, dtype=float)
    a_prime = np.asarray(target, dtype=float)
    if minimizer is None:
        minimizer = minimize_energy(vf, a, a_prime, hurst)
    energy = minimizer.energy
    nu_bar = np.asarray(minimizer.nu_bar, dtype=float)

    if t_grid is None:
        t_grid = geometric_grid(0.2, 0.8, 8)
    # drop times where the Gaussian prefactor underflows entirely
    t_grid = np.asarray(
        [t for t in np.asarray(t_grid, dtype=float)
         if -energy / (2.0 * t ** (2.0 * h)) > np.log(1e-300)]
    )
    times = np.linspace(0.0, 1.0, n_steps + 1)
    gamma = minimizer.gamma_bar.path(times)
    hier = phi_hierarchy(vf, gamma, None, hurst, 1.0 / h + 1e-9, a)
    beta = float(nu_bar @ hier.endpoint(1.0 / h))
    sol0 = base_flow(vf, gamma, a)
    w1 = first_order_weights(vf, sol0)
    phi0_end = sol0.endpoint
    phiH_end = hier.endpoint(1.0 / h)

    # exact Gaussian law of the first-order endpoint phi^1_1(w): used both
    # for the importance weight and as the variance-reduction surrogate
    cell_w = _cell_weights(hurst, times)
    sigma_g = h * (2.0 * h - 1.0) * np.einsum("idk,kl,jdl->ij", w1, cell_w, w1)
    sigma_gs = sigma_g @ nu_bar
    var_s = float(nu_bar @ sigma_gs)

    rows = []
    vals = np.empty(t_grid.shape[0])
    errs = np.empty(t_grid.shape[0])
    for i, t in enumerate(t_grid):
        eps = t**h
        ens = sample_paths(hurst, n_steps, n_paths, seed + i, dim=vf.d)
        driver = eps * ens.values + gamma.values
        sol = solve_ode(
            vf, driver, a, clock_scale=eps ** (1.0 / h),
            times=times, with_jacobian=False,
        )
        z = (sol.endpoint - a_prime) / eps
        g = phi1_endpoint(w1, ens.values)         # (M, n)
        shift = g @ nu_bar
        weights = np.exp(-shift / eps)
        bw = silverman_bandwidth(z)
        if np.any(bw <= 0):
            raise ValueError("degenerate endpoint spread")
        offset = (phi0_end + eps ** (1.0 / h) * phiH_end - a_prime) / eps
        proxy = g + offset
        zero = np.zeros(vf.n)

        def control_mean(width):
            # E[ e^{-<nu, g>/eps} K_width(g + offset) ] in closed form
            return np.exp(0.5 * var_s / eps**2) * _gaussian_kernel_mean(
                zero, offset - sigma_gs / eps, sigma_g, width
            )

        # kv4 estimates E[exp(-<nu, phi^1(w)>/eps) delta_0((y - a') / eps)];
        # the series value divides out the remaining drift factor
        kv4, ks4, sys_err, kv, kvh = _richardson_point(
            z, zero, bw, control_mean, weights=weights, control_samples=proxy
        )
        drift = np.exp(-beta * t ** (1.0 - 2.0 * h))
        vals[i] = kv4 * drift
        errs[i] = np.sqrt(ks4**2 + sys_err**2) * drift
        log_pref = -energy / (2.0 * t ** (2.0 * h))
        raw = kv4 * np.exp(log_pref) * eps ** (-vf.n)
        raw_se = errs[i] / drift * np.exp(log_pref) * eps ** (-vf.n)
        rows.append(
            {
                "t": float(t),
                "eps": float(eps),
                "raw": float(raw),
                "std_error": float(raw_se),
                "scaled": float(vals[i]),
                "scaled_full_bw": float(kv * drift),
                "scaled_half_bw": float(kvh * drift),
                "stat_error": float(ks4 * drift),
            }
        )

    lattice = build_lattice("lambda4", hurst, 2.0 / h if cutoff is None else cutoff)
    # the off-diagonal grid is narrow (floored away from 0), so fewer
    # power columns stay resolvable than on the diagonal
    exps = _default_exponents(lattice, t_grid, cutoff, max_cols=4)
    fit = fit_series(t_grid, vals, errs, exps, hurst)
    for row, pred in zip(rows, fit.predictions):
        pref = np.exp(-energy / (2.0 * row["t"] ** (2.0 * h))
                      + beta * row["t"] ** (1.0 - 2.0 * h))
        row["prediction"] = float(pred * pref * row["t"] ** (-vf.n * h))
    return OffDiagonalReport(
        minimizer=minimizer,
        energy=energy,
        nu_bar=nu_bar,
        beta=beta,
        fit=fit,
        rows=rows,
    )


def write_pipeline_csv(fh, rows) -> None:
    """t, raw estimate, standard error, and fitted model prediction."""
    fh.write("t,raw,std_error,prediction\n")
    for row in rows:
        fh.write(
            f"{row['t']:.17g},{row['raw']:.17g},{row['std_error']:.17g},"
            f"{row.get('prediction', float('nan')):.17g}\n"
        )
