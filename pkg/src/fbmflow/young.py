"""Young integration and controlled ODEs driven by Hölder paths.

Everything here works on uniform grids.  Norms are grid surrogates of
their continuum definitions; the solver is a Heun (predictor-corrector)
scheme that propagates the state, its Jacobian with respect to the
initial condition, and the inverse Jacobian in one sweep.

Batched evaluation is used throughout: driver values may carry leading
ensemble axes, e.g. shape (M, d, N+1), and all vector-field callables
must accept inputs of shape (..., n).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .fbm import GridPath


@dataclass
class VectorFieldSystem:
    """A diffusion frame sigma (n x d) together with a drift b (n).

    sigma(y) -> (..., n, d); b(y) -> (..., n).  Derivatives of order k
    append k state axes: sigma_deriv(y, k) -> (..., n, d, n, ..., n)
    with entry [i, j, m1, ..., mk] = d^k sigma^i_j / dy^{m1}..dy^{mk},
    and b_deriv(y, k) -> (..., n, n, ..., n).

    max_order is the highest derivative order available (analytically or
    via the finite-difference fallback).
    """

    n: int
    d: int
    sigma_fn: Callable
    b_fn: Callable
    sigma_derivs: dict = field(default_factory=dict)
    b_derivs: dict = field(default_factory=dict)
    max_order: int = 1
    fd_step: float = 1e-5
    name: str = ""

    def sigma(self, y):
        return self.sigma_fn(np.asarray(y, dtype=float))

    def b(self, y):
        return self.b_fn(np.asarray(y, dtype=float))

    def sigma_deriv(self, y, k: int):
        if k == 0:
            return self.sigma(y)
        if k in self.sigma_derivs:
            return self.sigma_derivs[k](np.asarray(y, dtype=float))
        return self._fd(lambda z: self.sigma_deriv(z, k - 1), y)

    def b_deriv(self, y, k: int):
        if k == 0:
            return self.b(y)
        if k in self.b_derivs:
            return self.b_derivs[k](np.asarray(y, dtype=float))
        return self._fd(lambda z: self.b_deriv(z, k - 1), y)

    def _fd(self, fn, y):
        # central difference in each coordinate, appended as a new axis
        y = np.asarray(y, dtype=float)
        cols = []
        for m in range(self.n):
            e = np.zeros(self.n)
            e[m] = self.fd_step
            cols.append((fn(y + e) - fn(y - e)) / (2.0 * self.fd_step))
        return np.stack(cols, axis=-1)

    # per-field access: field 0 is the drift, fields 1..d the columns of sigma
    def eval(self, i: int, y):
        if i == 0:
            return self.b(y)
        return self.sigma(y)[..., :, i - 1]

    def deriv(self, i: int, y, k: int):
        if i == 0:
            return self.b_deriv(y, k)
        sd = self.sigma_deriv(y, k)  # (..., n, d, n^k); channel axis sits at -k-1
        return np.take(sd, i - 1, axis=-(k + 1))


@dataclass
class YoungSolution:
    """State, Jacobian and inverse-Jacobian paths of a driven ODE."""

    times: np.ndarray
    state: np.ndarray          # (..., n, N+1)
    jacobian: np.ndarray       # (..., n, n, N+1)
    jacobian_inv: np.ndarray   # (..., n, n, N+1)
    clock_scale: float = 1.0

    @property
    def endpoint(self) -> np.ndarray:
        return self.state[..., -1]

    def state_path(self, index=()) -> GridPath:
        return GridPath(self.times, self.state[index])


# ---------------------------------------------------------------------------
# norms


def holder_seminorm(times, values, alpha: float, chunk: int = 64) -> np.ndarray:
    """sup over grid pairs of |x_t - x_s| / (t - s)^alpha.

    values: (..., n, N+1) or (..., N+1); vector increments are measured
    in the Euclidean norm.  All O(N^2) pairs are inspected.
    """
    values = np.asarray(values, dtype=float)
    if values.ndim == 1:
        values = values[None, :]
    times = np.asarray(times, dtype=float)
    npts = times.shape[0]
    iu, ju = np.triu_indices(npts, k=1)
    denom = (times[ju] - times[iu]) ** alpha

    flat = values.reshape(-1, values.shape[-2], npts)
    out = np.empty(flat.shape[0])
    for start in range(0, flat.shape[0], chunk):
        block = flat[start:start + chunk]
        diffs = block[:, :, ju] - block[:, :, iu]
        mags = np.sqrt(np.einsum("bnp,bnp->bp", diffs, diffs))
        out[start:start + chunk] = (mags / denom).max(axis=-1)
    return out.reshape(values.shape[:-2]) if values.ndim > 2 else float(out[0])


def holder_norm(path: GridPath, alpha: float) -> float:
    """|x_0| + the alpha-Hölder seminorm over all grid pairs."""
    x0 = float(np.linalg.norm(path.values[:, 0]))
    return x0 + float(holder_seminorm(path.times, path.values, alpha))


def besov_norm(path: GridPath, m: float, theta: float) -> float:
    """Grid surrogate of the (m, theta)-Besov norm.

    (integral over s < t of |x_t - x_s|^m / (t-s)^{2 + m theta})^{1/m},
    evaluated as a double Riemann sum over distinct grid cells.
    """
    t = path.times
    v = path.values
    npts = t.shape[0]
    iu, ju = np.triu_indices(npts, k=1)
    diffs = v[:, ju] - v[:, iu]
    mags = np.sqrt(np.einsum("np,np->p", diffs, diffs))
    dt = np.diff(t).mean()
    integrand = mags**m / (t[ju] - t[iu]) ** (2.0 + m * theta)
    return float((integrand.sum() * dt * dt) ** (1.0 / m))


# ---------------------------------------------------------------------------
# integration


def _cumtrapz_against(f: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Cumulative trapezoidal Riemann-Stieltjes integral of f against x.

    f: (..., N+1), x: (..., N+1) broadcastable; returns (..., N+1).
    """
    dx = np.diff(x, axis=-1)
    avg = 0.5 * (f[..., 1:] + f[..., :-1])
    out = np.zeros(np.broadcast_shapes(f.shape, x.shape))
    np.cumsum(avg * dx, axis=-1, out=out[..., 1:])
    return out


def contracted_integral(fvals: np.ndarray, xvals: np.ndarray) -> np.ndarray:
    """Running integral of a matrix-valued integrand against a vector driver.

    fvals: (..., n, d, N+1), xvals: (..., d, N+1); returns the cumulative
    path of integral sum_j f[:, j] dx^j with shape (..., n, N+1).
    """
    dx = np.diff(xvals, axis=-1)
    avg = 0.5 * (fvals[..., 1:] + fvals[..., :-1])
    incr = np.einsum("...ndk,...dk->...nk", avg, dx)
    out = np.zeros(fvals.shape[:-2] + (fvals.shape[-1],))
    np.cumsum(incr, axis=-1, out=out[..., 1:])
    return out


def young_integral(integrand: GridPath, driver: GridPath) -> GridPath:
    """Running trapezoidal Riemann-Stieltjes integral of f against x.

    Componentwise: the j-th output component is the cumulative path of
    integral f^j dx^j.  Linear in both arguments and additive over
    subintervals by construction.
    """
    if integrand.dim != driver.dim:
        raise ValueError(
            f"integrand dimension {integrand.dim} != driver dimension {driver.dim}"
        )
    if not np.allclose(integrand.times, driver.times):
        raise ValueError("integrand and driver live on different grids")
    running = _cumtrapz_against(integrand.values, driver.values)
    return GridPath(integrand.times.copy(), running)


# ---------------------------------------------------------------------------
# the solver


def _step_matrices(vf: VectorFieldSystem, y, dx, dtc):
    """Drift f(y) and linearization A(y) for one grid cell."""
    f = np.einsum("...nd,...d->...n", vf.sigma(y), dx)
    A = np.einsum("...ndm,...d->...nm", vf.sigma_deriv(y, 1), dx)
    if dtc != 0.0:
        f = f + vf.b(y) * dtc
        A = A + vf.b_deriv(y, 1) * dtc
    return f, A


def solve_ode(
    vf: VectorFieldSystem,
    driver,
    y0,
    clock_scale: float = 1.0,
    times=None,
    with_jacobian: bool = True,
) -> YoungSolution:
    """Heun scheme for dy = sigma(y) dx + b(y) * clock_scale * dt.

    driver may be a GridPath or an array of shape (..., d, N+1) with
    `times` supplied.  Alongside the state the Jacobian J with respect
    to y0 (dJ = grad sigma(y)<J, dx> + clock_scale * grad b(y)<J> dt,
    J_0 = Id) and its inverse (dJinv = -Jinv dM) are advanced by the
    same predictor-corrector sweep.
    """
    if isinstance(driver, GridPath):
        xvals = driver.values
        times = driver.times
    else:
        xvals = np.asarray(driver, dtype=float)
        if times is None:
            raise ValueError("array drivers need an explicit time grid")
        times = np.asarray(times, dtype=float)
    if xvals.shape[-2] != vf.d:
        raise ValueError(
            f"driver has {xvals.shape[-2]} components, vector field wants {vf.d}"
        )

    nsteps = times.shape[0] - 1
    batch = xvals.shape[:-2]
    y0 = np.broadcast_to(np.asarray(y0, dtype=float), batch + (vf.n,)).copy()

    y = np.empty(batch + (vf.n, nsteps + 1))
    y[..., 0] = y0
    if with_jacobian:
        eye = np.broadcast_to(np.eye(vf.n), batch + (vf.n, vf.n)).copy()
        J = np.empty(batch + (vf.n, vf.n, nsteps + 1))
        K = np.empty_like(J)
        J[..., 0] = eye
        K[..., 0] = eye
    else:
        J = K = None

    cur = y0
    dt = np.diff(times)
    dxs = np.diff(xvals, axis=-1)
    for i in range(nsteps):
        dx = dxs[..., i]
        dtc = clock_scale * dt[i]
        f0, A0 = _step_matrices(vf, cur, dx, dtc)
        pred = cur + f0
        f1, A1 = _step_matrices(vf, pred, dx, dtc)
        nxt = cur + 0.5 * (f0 + f1)
        y[..., i + 1] = nxt
        if with_jacobian:
            Jc = J[..., i]
            Jp = Jc + A0 @ Jc
            J[..., i + 1] = Jc + 0.5 * (A0 @ Jc + A1 @ Jp)
            Kc = K[..., i]
            Kp = Kc - Kc @ A0
            K[..., i + 1] = Kc - 0.5 * (Kc @ A0 + Kp @ A1)
        cur = nxt

    return YoungSolution(times, y, J, K, clock_scale=clock_scale)


def jacobian_series(
    solution: YoungSolution,
    driver,
    vf: VectorFieldSystem,
    order: int,
    s: float = None,
    t: float = None,
) -> np.ndarray:
    """Neumann-series approximation of the window Jacobian J_t Jinv_s.

    Id + sum over k <= order of the k-fold iterated integral over [s, t] of
    the linearization one-form dM = grad sigma(y) dx + grad b(y) clock dt
    along the solution, each layer obtained from the previous by one more
    running trapezoidal integral.  s and t default to the grid endpoints and
    must lie on the grid.
    """
    times = solution.times
    clock_scale = solution.clock_scale
    if isinstance(driver, GridPath):
        xvals = driver.values
    else:
        xvals = np.asarray(driver, dtype=float)
    i0 = 0 if s is None else int(np.argmin(np.abs(times - s)))
    i1 = times.shape[0] - 1 if t is None else int(np.argmin(np.abs(times - t)))
    if s is not None and abs(times[i0] - s) > 1e-12:
        raise ValueError("s must be a grid point")
    if t is not None and abs(times[i1] - t) > 1e-12:
        raise ValueError("t must be a grid point")
    if i0 >= i1:
        raise ValueError("window requires s < t")
    times = times[i0 : i1 + 1]
    xvals = xvals[..., i0 : i1 + 1]
    ypath = solution.state[..., i0 : i1 + 1]  # (..., n, N+1)

    # linearization coefficients along the path, per driver channel
    moved = np.moveaxis(ypath, -1, 0)  # (N+1, ..., n)
    G = np.moveaxis(vf.sigma_deriv(moved, 1), 0, -1)   # (..., n, d, n, N+1)
    Gb = np.moveaxis(vf.b_deriv(moved, 1), 0, -1)      # (..., n, n, N+1)

    batch = ypath.shape[:-2]
    n = vf.n
    npts = times.shape[0]
    total = np.broadcast_to(np.eye(n)[..., None], batch + (n, n, npts)).copy()
    layer = total.copy()
    dx = np.diff(xvals, axis=-1)
    dtv = np.diff(times) * clock_scale
    for _ in range(order):
        # integrand of dM layer: sum_j G[:, j, :] layer dx^j + Gb layer dt
        vals = np.einsum("...idjk,...jmk->...idmk", G, layer)
        incr = np.einsum("...idmk,...dk->...imk", 0.5 * (vals[..., 1:] + vals[..., :-1]), dx)
        if clock_scale != 0.0:
            bvals = np.einsum("...ijk,...jmk->...imk", Gb, layer)
            incr = incr + 0.5 * (bvals[..., 1:] + bvals[..., :-1]) * dtv
        nxt = np.zeros_like(layer)
        np.cumsum(incr, axis=-1, out=nxt[..., 1:])
        layer = nxt
        total = total + layer
    return total[..., -1]


# ---------------------------------------------------------------------------
# reporting and serialization


def moment_summary(samples, orders=(1, 2, 4, 8)) -> dict:
    """E[|X|^q]^{1/q} with delta-method standard errors, per order q."""
    x = np.abs(np.asarray(samples, dtype=float))
    m = x.shape[0]
    out = {}
    for q in orders:
        pw = x**q
        mean = pw.mean()
        se_mean = pw.std(ddof=1) / np.sqrt(m)
        root = mean ** (1.0 / q)
        se_root = se_mean * root / (q * mean) if mean > 0 else float("nan")
        out[q] = {"value": float(root), "std_error": float(se_root)}
    return out


def moment_report(
    hurst,
    vf: VectorFieldSystem,
    alpha: float,
    n_steps: int,
    n_paths: int,
    seed: int,
    base_point=None,
    orders=(1, 2, 4, 8),
    quantiles=(0.5, 0.9, 0.99),
) -> dict:
    """Empirical L^q norms of the alpha-Hölder norms of J and Jinv.

    Drives the system with n_paths fractional Brownian sample paths and
    reports, for each of the two Jacobian processes, E[‖·‖^q]^{1/q} for
    the requested orders plus tail quantiles of the norm distribution.
    """
    from .fbm import HurstParam, sample_paths

    hurst = hurst if isinstance(hurst, HurstParam) else HurstParam(hurst)
    if alpha >= hurst.value:
        raise ValueError(f"alpha {alpha} must be below H {hurst.value}")
    a = np.zeros(vf.n) if base_point is None else np.asarray(base_point, dtype=float)
    ens = sample_paths(hurst, n_steps, n_paths, seed, dim=vf.d)
    sol = solve_ode(vf, ens.values, a, times=ens.times, with_jacobian=True)
    report = {"alpha": alpha, "n_steps": n_steps, "n_paths": n_paths, "seed": seed}
    for tag, mats in (("jacobian", sol.jacobian), ("jacobian_inv", sol.jacobian_inv)):
        flat = mats.reshape(mats.shape[0], -1, mats.shape[-1])  # (M, n*n, N+1)
        norms = holder_seminorm(ens.times, flat, alpha)
        norms = norms + np.linalg.norm(flat[..., 0], axis=-1)
        report[tag] = {
            "moments": moment_summary(norms, orders),
            "quantiles": {
                float(p): float(np.quantile(norms, p)) for p in quantiles
            },
        }
    return report


_SERIES_TAGS = ("state", "jacobian", "jacobian_inv")


def write_solution_csv(fh, sol: YoungSolution) -> None:
    """Flat CSV with a `series` tag distinguishing state from Jacobians."""
    if sol.state.ndim != 2:
        raise ValueError("serialization expects a single (unbatched) solution")
    fh.write("series,t,i,j,value\n")
    for ti, t in enumerate(sol.times):
        for i in range(sol.state.shape[0]):
            fh.write(f"state,{t:.17g},{i},0,{sol.state[i, ti]:.17g}\n")
        for tag, arr in (("jacobian", sol.jacobian), ("jacobian_inv", sol.jacobian_inv)):
            if arr is None:
                continue
            for i in range(arr.shape[0]):
                for j in range(arr.shape[1]):
                    fh.write(f"{tag},{t:.17g},{i},{j},{arr[i, j, ti]:.17g}\n")


def read_solution_csv(fh) -> YoungSolution:
    header = fh.readline().strip()
    if header != "series,t,i,j,value":
        raise ValueError(f"unexpected solution CSV header: {header!r}")
    cells = {tag: {} for tag in _SERIES_TAGS}
    times = []
    for line in fh:
        line = line.strip()
        if not line:
            continue
        tag, t_s, i_s, j_s, v_s = line.split(",")
        if tag not in cells:
            raise ValueError(f"unknown series tag {tag!r}")
        t = float(t_s)
        if not times or t != times[-1]:
            if t not in times:
                times.append(t)
        cells[tag][(times.index(t), int(i_s), int(j_s))] = float(v_s)
    times = np.asarray(times)
    npts = times.shape[0]
    n = 1 + max(k[1] for k in cells["state"])
    state = np.empty((n, npts))
    for (ti, i, _), v in cells["state"].items():
        state[i, ti] = v
    jac = jinv = None
    if cells["jacobian"]:
        jac = np.empty((n, n, npts))
        for (ti, i, j), v in cells["jacobian"].items():
            jac[i, j, ti] = v
    if cells["jacobian_inv"]:
        jinv = np.empty((n, n, npts))
        for (ti, i, j), v in cells["jacobian_inv"].items():
            jinv[i, j, ti] = v
    return YoungSolution(times, state, jac, jinv)
