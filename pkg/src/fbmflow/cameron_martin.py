"""Cameron-Martin space of fBm: Volterra kernel, energy minimization,
kernel projection and the second-order endpoint form.

Elements of the space are handled in the reproducing basis
{R(., t_i)} at a fixed set of interior Chebyshev-Lobatto nodes, so that
inner products reduce to Gram-matrix arithmetic and never require
evaluating the singular Volterra kernel.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.special import roots_jacobi
from numpy.polynomial.legendre import leggauss

from .fbm import GridPath, HurstParam, covariance
from .young import VectorFieldSystem, solve_ode
from .expansion import variation_of_constants


# ---------------------------------------------------------------------------
# Volterra kernel


def _jacobi01(n: int, beta: float):
    """Nodes/weights for integral over [0,1] of u^beta g(u) du."""
    x, w = roots_jacobi(n, 0.0, beta)
    u = 0.5 * (1.0 + x)
    return u, w * 2.0 ** (-(beta + 1.0))


def _leg01(n: int):
    x, w = leggauss(n)
    return 0.5 * (1.0 + x), 0.5 * w


class VolterraKernel:
    """Square-root kernel K_H of the fBm covariance.

    K_H(t, s) = c_H s^{1/2-H} * integral from s to t of
    (u-s)^{H-3/2} u^{H-1/2} du for s < t.  The constant is calibrated
    numerically from the variance identity: integral over [0,1] of
    K_H(1, s)^2 ds = R(1, 1) = 1.

    The inner integral is evaluated after the substitution u = s + r^2;
    the transformed integrand keeps an r^{2H-2} factor, which is folded
    into a Gauss-Jacobi rule near zero and a log-spaced Gauss-Legendre
    rule on the remainder so the factorization identity holds to well
    below 1e-3.
    """

    def __init__(self, hurst: HurstParam, n_quad: int = 64):
        self.hurst = hurst
        self.n_quad = n_quad
        h = hurst.value
        self._uj, self._wj = _jacobi01(n_quad, 2.0 * h - 2.0)   # r-integral core
        self._ul, self._wl = _leg01(n_quad)                     # log-tail rule
        self._us, self._ws = _jacobi01(n_quad, 1.0 - 2.0 * h)   # s-integrals
        self._uk, self._wk = _jacobi01(n_quad, 0.5 - h)         # k_transform
        self.c = 1.0
        self.c = 1.0 / np.sqrt(self._fact_raw(np.array(1.0), np.array(1.0)))

    def _inner_integral(self, s, t):
        """integral from s to t of (u-s)^{H-3/2} u^{H-1/2} du, elementwise s < t."""
        h = self.hurst.value
        s = np.asarray(s, dtype=float)
        t = np.asarray(t, dtype=float)
        R = np.sqrt(np.maximum(t - s, 0.0))
        r0 = np.minimum(np.sqrt(s), R)
        # head: r in [0, r0], Gauss-Jacobi absorbing r^{2H-2}
        ss = s[..., None]
        rr = r0[..., None] * self._uj
        head = 2.0 * r0 ** (2.0 * h - 1.0) * np.sum(
            self._wj * (ss + rr**2) ** (h - 0.5), axis=-1
        )
        # tail: r in [r0, R] on a log scale
        with np.errstate(divide="ignore", invalid="ignore"):
            span = np.log(R) - np.log(r0)
        tail_mask = (R > r0) & (r0 > 0.0)
        span = np.where(tail_mask, span, 0.0)
        lr = np.log(np.where(r0 > 0, r0, 1.0))[..., None] + span[..., None] * self._ul
        rt = np.exp(lr)
        tail = 2.0 * span * np.sum(
            self._wl * rt ** (2.0 * h - 1.0) * (ss + rt**2) ** (h - 0.5), axis=-1
        )
        tail = np.where(tail_mask, tail, 0.0)
        # degenerate s = 0 column has the closed form (t-s)^{2H-1} / (2H-1)
        out = np.where(r0 > 0.0, head + tail, R ** (4.0 * h - 2.0) / (2.0 * h - 1.0))
        return out

    def kernel_eval(self, t, s):
        """K_H(t, s); zero when s >= t (Volterra support)."""
        h = self.hurst.value
        t = np.asarray(t, dtype=float)
        s = np.asarray(s, dtype=float)
        t_b, s_b = np.broadcast_arrays(t, s)
        mask = s_b < t_b
        safe_s = np.where(mask, s_b, 0.5)
        safe_t = np.where(mask, t_b, 1.0)
        val = self.c * safe_s ** (0.5 - h) * self._inner_integral(safe_s, safe_t)
        return np.where(mask, val, 0.0)

    def _fact_raw(self, t, T):
        """integral over [0, min(t,T)] of K(t,s) K(T,s) ds, up to c^2."""
        h = self.hurst.value
        m = np.minimum(t, T)
        sm = m[..., None] * self._us
        f = self._inner_integral(sm, np.asarray(t)[..., None]) * self._inner_integral(
            sm, np.asarray(T)[..., None]
        )
        return m ** (2.0 - 2.0 * h) * np.sum(self._ws * f, axis=-1)

    def factorization(self, t, T):
        """Quadrature value of integral of K(t,s) K(T,s) ds (should equal R(t,T))."""
        t = np.asarray(t, dtype=float)
        T = np.asarray(T, dtype=float)
        return self.c**2 * self._fact_raw(*np.broadcast_arrays(t, T))

    def factorization_residual(self, t_grid) -> float:
        """Max abs deviation of the factorization from the covariance."""
        t = np.asarray(t_grid, dtype=float)
        tt, TT = np.meshgrid(t, t)
        return float(
            np.max(np.abs(self.factorization(tt, TT) - covariance(self.hurst, tt, TT)))
        )

    def k_transform(self, h_fn, t_grid) -> np.ndarray:
        """(K_H h)(t) = integral from 0 to t of K_H(t, s) h(s) ds.

        h_fn may be a callable or a GridPath (linearly interpolated,
        first component).
        """
        if isinstance(h_fn, GridPath):
            path = h_fn
            h_fn = lambda s: np.interp(s, path.times, path.values[0])
        hv = self.hurst.value
        t = np.asarray(t_grid, dtype=float)
        sm = t[..., None] * self._uk
        f = self._inner_integral(sm, t[..., None]) * h_fn(sm)
        return self.c * t ** (1.5 - hv) * np.sum(self._wk * f, axis=-1)


# ---------------------------------------------------------------------------
# reproducing-basis elements


def lobatto_nodes(k: int) -> np.ndarray:
    """k Chebyshev-Lobatto nodes on (0, 1], densest near the ends, t=1 included."""
    j = np.arange(1, k + 1)
    return 0.5 * (1.0 - np.cos(np.pi * j / k))


@dataclass
class CameronMartinElement:
    """gamma(t) = sum_i coeffs[:, i] R(t, nodes[i]), one copy per component."""

    hurst: HurstParam
    nodes: np.ndarray            # (k,)
    coeffs: np.ndarray           # (d, k)

    def __post_init__(self):
        self.nodes = np.asarray(self.nodes, dtype=float)
        self.coeffs = np.atleast_2d(np.asarray(self.coeffs, dtype=float))

    @property
    def dim(self) -> int:
        return self.coeffs.shape[0]

    def gram(self) -> np.ndarray:
        return covariance(self.hurst, self.nodes[:, None], self.nodes[None, :])

    def values(self, t_grid) -> np.ndarray:
        basis = covariance(self.hurst, np.asarray(t_grid)[:, None], self.nodes[None, :])
        return self.coeffs @ basis.T

    def path(self, t_grid) -> GridPath:
        return GridPath(np.asarray(t_grid, dtype=float), self.values(t_grid))


def h_inner(x: CameronMartinElement, y: CameronMartinElement) -> float:
    """RKHS inner product via the covariance Gram form."""
    if abs(x.hurst.value - y.hurst.value) > 1e-12:
        raise ValueError("elements live in different Cameron-Martin spaces")
    if x.dim != y.dim:
        raise ValueError("component count mismatch")
    G = covariance(x.hurst, x.nodes[:, None], y.nodes[None, :])
    return float(np.einsum("di,ij,dj->", x.coeffs, G, y.coeffs))


def h_norm_sq(x: CameronMartinElement) -> float:
    return h_inner(x, x)


def evaluate_element(x: CameronMartinElement, t) -> np.ndarray:
    """Pointwise values, which by reproduction equal <R(., t), x>_H per component."""
    return x.values(np.atleast_1d(np.asarray(t, dtype=float)))


# ---------------------------------------------------------------------------
# base flow helpers


def base_flow(vf: VectorFieldSystem, gamma: GridPath, base_point):
    """phi^0 along gamma with its Jacobian pair (clock switched off)."""
    return solve_ode(vf, gamma, np.asarray(base_point, dtype=float), clock_scale=0.0)


def first_order_weights(vf: VectorFieldSystem, sol) -> np.ndarray:
    """Per-cell weights of the linear endpoint functional phi^1_1.

    Returns W of shape (n, d, N) with phi^1_1(w) = sum W[n, d, t] dw[d, t];
    W collapses Jt_1 Jt_u^{-1} sigma(phi0_u) under the trapezoidal rule.
    """
    phi0, Jt, Jti = sol.state, sol.jacobian, sol.jacobian_inv
    sig = np.moveaxis(vf.sigma(np.moveaxis(phi0, -1, 0)), 0, -1)  # (n, d, N+1)
    F = np.einsum("nm,mlt,ldt->ndt", Jt[..., -1], Jti, sig)
    return 0.5 * (F[..., 1:] + F[..., :-1])


def phi1_endpoint(weights: np.ndarray, wvals: np.ndarray) -> np.ndarray:
    """Apply the first-order functional to (batched) driver values (..., d, N+1)."""
    return np.einsum("ndt,...dt->...n", weights, np.diff(wvals, axis=-1))


# ---------------------------------------------------------------------------
# energy minimization


@dataclass
class MinimizerSolution:
    gamma_bar: CameronMartinElement
    gamma_path: GridPath
    nu_bar: np.ndarray
    energy: float
    endpoint: np.ndarray
    endpoint_residual: float
    stationarity_residual: float
    iterations: int
    converged: bool
    trace: list = field(default_factory=list)


def _jittered_solve(G, rhs):
    jit = 1e-12 * np.trace(G) / G.shape[0]
    return np.linalg.solve(G + jit * np.eye(G.shape[0]), rhs)


def minimize_energy(
    vf: VectorFieldSystem,
    base_point,
    target,
    hurst: HurstParam,
    n_nodes: int = 32,
    n_steps: int = 256,
    tol: float = 1e-6,
    max_iter: int = 100,
) -> MinimizerSolution:
    """Gauss-Newton minimization of the Cameron-Martin energy.

    Minimizes |gamma|_H^2 subject to the deterministic flow hitting the
    target at time 1.  gamma is parametrized in the reproducing basis at
    Chebyshev-Lobatto nodes; each step solves the equality-constrained
    least-norm problem for the linearized endpoint map, with step
    halving on the endpoint residual.
    """
    a = np.asarray(base_point, dtype=float)
    a_prime = np.asarray(target, dtype=float)
    nodes = lobatto_nodes(n_nodes)
    t_grid = np.linspace(0.0, 1.0, n_steps + 1)
    basis = covariance(hurst, t_grid[:, None], nodes[None, :])     # (N+1, k)
    dbasis = np.diff(basis, axis=0)                                 # (N, k)
    G = covariance(hurst, nodes[:, None], nodes[None, :])

    coeffs = np.zeros((vf.d, n_nodes))

    def endpoint_of(c):
        gvals = c @ basis.T
        sol = solve_ode(vf, gvals, a, clock_scale=0.0, times=t_grid)
        return sol, sol.endpoint

    sol, e = endpoint_of(coeffs)
    res = float(np.linalg.norm(e - a_prime))
    nu = np.zeros(vf.n)
    trace = [res]
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        W = first_order_weights(vf, sol)                 # (n, d, N)
        B = np.einsum("ndt,tk->ndk", W, dbasis)          # sensitivity d e / d coeffs
        # least-norm step: coeffs_j = G^{-1} B_j^T nu with the multiplier
        # chosen so the linearized endpoint hits the target
        X = np.stack([_jittered_solve(G, B[:, j, :].T) for j in range(vf.d)])  # (d, k, n)
        S = sum(B[:, j, :] @ X[j] for j in range(vf.d))
        rhs = (a_prime - e) + np.einsum("ndk,dk->n", B, coeffs)
        nu = np.linalg.solve(S, rhs)
        target_c = np.stack([X[j] @ nu for j in range(vf.d)])

        lam = 1.0
        best = None
        for _ in range(12):
            cand = coeffs + lam * (target_c - coeffs)
            sol_c, e_c = endpoint_of(cand)
            res_c = float(np.linalg.norm(e_c - a_prime))
            if res_c <= res or lam < 1e-3:
                best = (cand, sol_c, e_c, res_c)
                break
            if best is None or res_c < best[3]:
                best = (cand, sol_c, e_c, res_c)
            lam *= 0.5
        coeffs, sol, e, new_res = best
        trace.append(new_res)
        if new_res < tol and abs(new_res - res) < tol:
            res = new_res
            converged = True
            break
        res = new_res

    # stationarity: G c_j - B_j^T nu should vanish in the dual norm
    W = first_order_weights(vf, sol)
    B = np.einsum("ndt,tk->ndk", W, dbasis)
    stat = 0.0
    for j in range(vf.d):
        g = G @ coeffs[j] - B[:, j, :].T @ nu
        stat += float(g @ _jittered_solve(G, g))
    stat = float(np.sqrt(max(stat, 0.0)))

    element = CameronMartinElement(hurst, nodes, coeffs)
    energy = float(np.einsum("di,ij,dj->", coeffs, G, coeffs))
    return MinimizerSolution(
        gamma_bar=element,
        gamma_path=GridPath(t_grid, coeffs @ basis.T),
        nu_bar=nu,
        energy=energy,
        endpoint=e,
        endpoint_residual=res,
        stationarity_residual=stat,
        iterations=it,
        converged=converged,
        trace=trace,
    )


def geodesic_minimizer(
    vf: VectorFieldSystem,
    base_point,
    target,
    hurst: HurstParam,
    n_steps: int = 512,
    tol: float = 1e-10,
    max_iter: int = 60,
) -> MinimizerSolution:
    """Shooting solver for the time-changed geodesic gamma_t = v R(t, 1).

    Under a commuting (condition-H) frame the minimizer runs along the
    kernel section R(., 1); the flow then only sees the reparametrized
    clock tau = R(t, 1), so shooting reduces to a d-dimensional Newton
    solve for the direction v.  Energy = |v|^2 R(1,1).
    """
    a = np.asarray(base_point, dtype=float)
    a_prime = np.asarray(target, dtype=float)
    tau = np.linspace(0.0, covariance(hurst, 1.0, 1.0), n_steps + 1)

    def shoot(v):
        driver = v[:, None] * tau[None, :]
        sol = solve_ode(vf, driver, a, clock_scale=0.0, times=tau)
        return sol, sol.endpoint

    v = (a_prime - a).astype(float)
    if v.shape != (vf.d,):
        v = np.zeros(vf.d)
    res = np.inf
    it = 0
    for it in range(1, max_iter + 1):
        sol, e = shoot(v)
        res = float(np.linalg.norm(e - a_prime))
        if res < tol:
            break
        # finite-difference Jacobian of the shot endpoint in v
        J = np.empty((vf.n, vf.d))
        h = 1e-6 * max(1.0, np.linalg.norm(v))
        for j in range(vf.d):
            dv = np.zeros(vf.d)
            dv[j] = h
            J[:, j] = (shoot(v + dv)[1] - shoot(v - dv)[1]) / (2.0 * h)
        v = v + np.linalg.solve(J, a_prime - e)

    element = CameronMartinElement(hurst, np.array([1.0]), v[:, None])
    t_grid = np.linspace(0.0, 1.0, n_steps + 1)
    r1 = float(covariance(hurst, 1.0, 1.0))
    return MinimizerSolution(
        gamma_bar=element,
        gamma_path=element.path(t_grid),
        nu_bar=v.copy(),
        energy=float(v @ v) * r1,
        endpoint=e,
        endpoint_residual=res,
        stationarity_residual=float("nan"),
        iterations=it,
        converged=res < max(tol, 1e-8),
    )


# ---------------------------------------------------------------------------
# projection onto the annihilator of the first-order functionals


@dataclass
class ProjectedPath:
    """w minus its component along the representers of phi^1_1.

    Keeps the original grid path and the representer coefficients so a
    second projection can evaluate the functionals exactly in Gram
    arithmetic instead of re-integrating the rendered grid values.
    """

    grid: GridPath
    base: GridPath
    alpha: np.ndarray  # (n,) loadings on the representers


class KernelProjector:
    """pi w = w - sum over j, j' of phi^{1,j}_1(w) D_{jj'} rep_{j'}.

    The representers rep_j of the endpoint functionals phi^{1,j}_1 are
    fitted in the reproducing basis; C is their Gram matrix, D its
    inverse.  Functional evaluations on basis elements use the same
    Gram arithmetic, which makes the projection exactly idempotent.
    """

    def __init__(self, vf: VectorFieldSystem, gamma: GridPath, base_point,
                 hurst: HurstParam, n_nodes: int = 32):
        self.vf = vf
        self.hurst = hurst
        self.gamma = gamma
        sol = base_flow(vf, gamma, base_point)
        self.weights = first_order_weights(vf, sol)     # (n, d, N)
        nodes = lobatto_nodes(n_nodes)
        self.nodes = nodes
        basis = covariance(hurst, gamma.times[:, None], nodes[None, :])
        dbasis = np.diff(basis, axis=0)
        self._basis = basis
        # beta[j, d, k] = phi^{1,j}_1 applied to the basis path R(., t_k) e_d
        self.beta = np.einsum("ndt,tk->ndk", self.weights, dbasis)
        G = covariance(hurst, nodes[:, None], nodes[None, :])
        # representer coefficients per driver component
        self.rep_coeffs = np.stack(
            [_jittered_solve(G, self.beta[j].T).T for j in range(vf.n)]
        )  # (n, d, k)
        self.C = np.einsum("jdk,mdk->jm", self.beta, self.rep_coeffs)
        self.D = np.linalg.inv(self.C)

    def functionals(self, w) -> np.ndarray:
        """phi^1_1(w) componentwise; exact Gram form for projected paths."""
        if isinstance(w, ProjectedPath):
            return self.functionals(w.base) - self.C @ w.alpha
        wv = w.values if isinstance(w, GridPath) else np.asarray(w, dtype=float)
        return phi1_endpoint(self.weights, wv)

    def representer(self, j: int) -> CameronMartinElement:
        return CameronMartinElement(self.hurst, self.nodes, self.rep_coeffs[j])

    def project(self, w) -> ProjectedPath:
        vals = self.functionals(w)
        alpha = self.D @ vals
        corr = np.einsum("jdk,tk,j->dt", self.rep_coeffs, self._basis, alpha)
        if isinstance(w, ProjectedPath):
            grid = GridPath(w.grid.times, w.grid.values - corr)
            return ProjectedPath(grid, w.base, w.alpha + alpha)
        grid = GridPath(w.times, w.values - corr)
        return ProjectedPath(grid, w, alpha)


def project_kernel(vf, gamma: GridPath, base_point, hurst: HurstParam, w,
                   n_nodes: int = 32) -> ProjectedPath:
    return KernelProjector(vf, gamma, base_point, hurst, n_nodes).project(w)


# ---------------------------------------------------------------------------
# second-order endpoint form


def second_order_form(
    vf: VectorFieldSystem,
    gamma: GridPath,
    base_point,
    w,
    w2=None,
) -> np.ndarray:
    """The symmetric bilinear endpoint form psi(w, w').

    psi(w, w') = 1/2 Jt_1 int Jt^{-1} [ grad sigma(phi0)<phi^1(w'), dw>
               + grad sigma(phi0)<phi^1(w), dw'> ]
               + 1/2 Jt_1 int Jt^{-1} grad^2 sigma(phi0)<phi^1(w), phi^1(w'), dgamma>.

    On the diagonal this reproduces the endpoint of the kappa = 2
    correction; the quadrature composition matches phi_hierarchy cell
    for cell.
    """
    sol = base_flow(vf, gamma, base_point)
    phi0, Jt, Jti = sol.state, sol.jacobian, sol.jacobian_inv
    wv = w.values if isinstance(w, GridPath) else np.asarray(w, dtype=float)
    w2v = wv if w2 is None else (
        w2.values if isinstance(w2, GridPath) else np.asarray(w2, dtype=float)
    )

    sig = np.moveaxis(vf.sigma(np.moveaxis(phi0, -1, 0)), 0, -1)
    sig1 = np.moveaxis(vf.sigma_deriv(np.moveaxis(phi0, -1, 0), 1), 0, -1)
    sig2 = np.moveaxis(vf.sigma_deriv(np.moveaxis(phi0, -1, 0), 2), 0, -1)

    def phi1_path(xv):
        src = np.einsum("ndt,...dt->...nt", 0.5 * (sig[..., 1:] + sig[..., :-1]),
                        np.diff(xv, axis=-1))
        return variation_of_constants(Jt, Jti, src)

    p1 = phi1_path(wv)
    p2 = p1 if w2 is None else phi1_path(w2v)

    t_w = np.einsum("idmt,...mt->...idt", sig1, p2)
    t_w2 = np.einsum("idmt,...mt->...idt", sig1, p1)
    cross = 0.5 * (
        np.einsum("...idt,...dt->...it",
                  0.5 * (t_w[..., 1:] + t_w[..., :-1]), np.diff(wv, axis=-1))
        + np.einsum("...idt,...dt->...it",
                    0.5 * (t_w2[..., 1:] + t_w2[..., :-1]), np.diff(w2v, axis=-1))
    )
    quad = 0.5 * np.einsum("idmpt,...mt,...pt->...idt", sig2, p1, p2)
    quad_inc = np.einsum("...idt,...dt->...it",
                         0.5 * (quad[..., 1:] + quad[..., :-1]),
                         np.diff(gamma.values, axis=-1))
    return variation_of_constants(Jt, Jti, cross + quad_inc)[..., -1]


# ---------------------------------------------------------------------------
# serialization


def minimizer_to_json(sol: MinimizerSolution) -> str:
    payload = {
        "nodes": sol.gamma_bar.nodes.tolist(),
        "coefficients": sol.gamma_bar.coeffs.tolist(),
        "nu_bar": np.asarray(sol.nu_bar).tolist(),
        "energy": sol.energy,
        "endpoint": np.asarray(sol.endpoint).tolist(),
        "endpoint_residual": sol.endpoint_residual,
        "stationarity_residual": sol.stationarity_residual,
        "iterations": sol.iterations,
        "converged": sol.converged,
        "trace": sol.trace,
    }
    return json.dumps(payload, indent=2)
