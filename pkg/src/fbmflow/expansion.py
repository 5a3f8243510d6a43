"""Short-time expansion machinery: exponent lattices and correction paths.

Exponents are numbers p + q / H with integer p, q, kept as exact integer
pairs so that lattice membership and partition sums never accumulate
floating-point drift.  The correction hierarchy phi^kappa solves a chain
of linear ODEs along the deterministic base path phi^0, each resolved by
variation of constants against the base Jacobian.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from math import factorial

import numpy as np

from .fbm import GridPath, HurstParam
from .young import VectorFieldSystem, YoungSolution, solve_ode, _cumtrapz_against

MERGE_TOL = 1e-12


@dataclass(frozen=True)
class LatticeExponent:
    """An exponent p + q / H stored as the exact integer pair (p, q)."""

    p: int
    q: int
    hurst: float

    @property
    def value(self) -> float:
        return self.p + self.q / self.hurst

    def __add__(self, other: "LatticeExponent") -> "LatticeExponent":
        return LatticeExponent(self.p + other.p, self.q + other.q, self.hurst)

    def __lt__(self, other):
        return self.value < other.value - MERGE_TOL

    def __repr__(self):
        return f"LatticeExponent({self.p}, {self.q}, value={self.value:.6g})"


def _merge(pairs, hurst: float, cutoff: float):
    """Dedupe by value (within MERGE_TOL), canonical pair = smallest (q, p)."""
    elems = [LatticeExponent(p, q, hurst) for p, q in set(pairs)]
    elems = [e for e in elems if -MERGE_TOL <= e.value <= cutoff + MERGE_TOL]
    elems.sort(key=lambda e: (e.value, e.q, e.p))
    out = []
    for e in elems:
        if out and abs(e.value - out[-1].value) < MERGE_TOL:
            continue
        out.append(e)
    return out


@dataclass
class ExponentLattice:
    kind: str
    hurst: float
    cutoff: float
    elements: list

    @property
    def values(self) -> np.ndarray:
        return np.array([e.value for e in self.elements])

    def __iter__(self):
        return iter(self.elements)

    def __len__(self):
        return len(self.elements)


_KINDS = ("lambda1", "lambda2", "lambda2-prime", "lambda3", "lambda3-prime", "lambda4")


def _lambda1_pairs(hurst: float, cutoff: float):
    pairs = []
    q = 0
    while q / hurst <= cutoff + MERGE_TOL:
        p = 0
        while p + q / hurst <= cutoff + MERGE_TOL:
            pairs.append((p, q))
            p += 1
        q += 1
    return pairs


def _closure(generator_pairs, hurst: float, cutoff: float):
    """All finite sums of the generators (Minkowski closure), value <= cutoff."""
    gens = [g for g in generator_pairs
            if LatticeExponent(*g, hurst).value > MERGE_TOL]
    seen = {(0, 0)}
    frontier = [(0, 0)]
    while frontier:
        nxt = []
        for base in frontier:
            for g in gens:
                cand = (base[0] + g[0], base[1] + g[1])
                if cand in seen:
                    continue
                if LatticeExponent(*cand, hurst).value <= cutoff + MERGE_TOL:
                    seen.add(cand)
                    nxt.append(cand)
        frontier = nxt
    return list(seen)


def build_lattice(kind: str, hurst: HurstParam, cutoff: float) -> ExponentLattice:
    """Construct one of the six exponent lattices, truncated at `cutoff`.

    lambda1        {n1 + n2 / H}
    lambda2        {k - 1     : k in lambda1, k != 0}
    lambda2-prime  {k - 2     : k in lambda1, k not in {0, 1, 1/H}}
    lambda3        all finite sums of lambda2 elements
    lambda3-prime  all finite sums of lambda2-prime elements
    lambda4        lambda3 + lambda3-prime (pairwise sums)
    """
    h = hurst.value if isinstance(hurst, HurstParam) else float(hurst)
    kind = kind.lower().replace("_", "-").replace("'", "-prime")
    if kind not in _KINDS:
        raise ValueError(f"unknown lattice kind {kind!r}; expected one of {_KINDS}")

    # base pairs are enumerated with a generous cutoff so that shifting by
    # -1 / -2 never loses an element below the requested cutoff
    if kind == "lambda1":
        pairs = _lambda1_pairs(h, cutoff)
    elif kind == "lambda2":
        base = _lambda1_pairs(h, cutoff + 1.0)
        pairs = [(p - 1, q) for p, q in base if (p, q) != (0, 0)]
    elif kind == "lambda2-prime":
        base = _lambda1_pairs(h, cutoff + 2.0)
        pairs = [(p - 2, q) for p, q in base
                 if (p, q) not in ((0, 0), (1, 0), (0, 1))]
    elif kind == "lambda3":
        gens = [e for e in build_lattice("lambda2", hurst, cutoff)]
        pairs = _closure([(e.p, e.q) for e in gens], h, cutoff)
    elif kind == "lambda3-prime":
        gens = [e for e in build_lattice("lambda2-prime", hurst, cutoff)]
        pairs = _closure([(e.p, e.q) for e in gens], h, cutoff)
    else:  # lambda4
        a = build_lattice("lambda3", hurst, cutoff)
        bl = build_lattice("lambda3-prime", hurst, cutoff)
        pairs = [(x.p + y.p, x.q + y.q) for x in a for y in bl]
    return ExponentLattice(kind, h, cutoff, _merge(pairs, h, cutoff))


def lattice_table(lattices) -> str:
    """Render one or more lattices as a delimited table."""
    if isinstance(lattices, ExponentLattice):
        lattices = [lattices]
    lines = ["kind,p,q,value"]
    for lat in lattices:
        for e in lat:
            lines.append(f"{lat.kind},{e.p},{e.q},{e.value:.12g}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# partitions of an exponent into nonzero lattice parts


def _partitions(parts, target_value: float, max_len: int = 12):
    """Multisets (as index tuples, nondecreasing) of `parts` summing to target.

    parts must be sorted ascending by value and all strictly positive.
    Matching is by value within MERGE_TOL rather than by integer-pair
    equality: at rational H distinct pairs can share a value (4 = 3 x 4/3
    at H = 3/4) and such partitions are legitimate.  With at most max_len
    parts the accumulated float error stays orders of magnitude below the
    tolerance.
    """
    out = []
    nparts = len(parts)

    def rec(start, remaining, acc):
        if abs(remaining) < MERGE_TOL * max(1.0, len(acc)):
            if acc:
                out.append(tuple(acc))
            return
        if remaining < -MERGE_TOL or len(acc) >= max_len:
            return
        for i in range(start, nparts):
            v = parts[i].value
            if v > remaining + MERGE_TOL:
                break
            acc.append(i)
            rec(i, remaining - v, acc)
            acc.pop()

    rec(0, target_value, [])
    return out


def _multiset_weight(indices) -> float:
    """1 / prod(multiplicity!) — the ordered-tuple count divided by k!."""
    w = 1.0
    for _, grp in itertools.groupby(indices):
        w /= factorial(len(list(grp)))
    return w


# ---------------------------------------------------------------------------
# the correction hierarchy


@dataclass
class ExpansionHierarchy:
    """phi^0 and the correction paths phi^kappa for kappa in the first lattice.

    phi maps LatticeExponent -> array (..., n, N+1); corrections sourced
    by the random driver w carry whatever batch axes w had, the
    w-independent ones (pure gamma / clock corrections) do not.
    """

    hurst: float
    times: np.ndarray
    base_point: np.ndarray
    gamma: GridPath
    kappas: list
    phi0: np.ndarray
    jacobian: np.ndarray
    jacobian_inv: np.ndarray
    phi: dict = field(default_factory=dict)

    def endpoint(self, kappa) -> np.ndarray:
        return self.phi[self._key(kappa)][..., -1]

    def path(self, kappa) -> np.ndarray:
        return self.phi[self._key(kappa)]

    def _key(self, kappa):
        if isinstance(kappa, LatticeExponent):
            return kappa
        for k in self.kappas:
            if abs(k.value - float(kappa)) < 1e-9:
                return k
        raise KeyError(f"no hierarchy exponent with value {kappa}")


def _derivs_along(fn, path_states, k):
    """Evaluate a derivative callable along a path, time axis moved last.

    path_states: (n, N+1) -> result (n, d, n^k, N+1) (or without the d
    axis for drift derivatives).
    """
    moved = np.moveaxis(path_states, -1, 0)  # (N+1, n)
    vals = fn(moved, k)
    return np.moveaxis(vals, 0, -1)


_SIG_SUBS = {
    0: None,
    1: "idmt,...mt->...idt",
    2: "idmpt,...mt,...pt->...idt",
    3: "idmpqt,...mt,...pt,...qt->...idt",
}
_B_SUBS = {
    1: "imt,...mt->...it",
    2: "impt,...mt,...pt->...it",
    3: "impqt,...mt,...pt,...qt->...it",
}


def _contract(subs, tensor, phis):
    if subs is None:
        raise ValueError("contraction order exceeds supported depth")
    return np.einsum(subs, tensor, *phis)


def variation_of_constants(Jt, Jti, dq) -> np.ndarray:
    """Resolve a linear source against the base Jacobian.

    dq: per-cell source increments, shape (..., n, N); returns the path
    J_t * cumulative integral of J^{-1} dQ, shape (..., n, N+1).
    """
    npts = Jt.shape[-1]
    jiavg = 0.5 * (Jti[..., 1:] + Jti[..., :-1])
    incr = np.einsum("...imt,...mt->...it", jiavg, dq)
    integral = np.zeros(incr.shape[:-1] + (npts,))
    np.cumsum(incr, axis=-1, out=integral[..., 1:])
    return np.einsum("...imt,...mt->...it", Jt, integral)


def phi_hierarchy(
    vf: VectorFieldSystem,
    gamma: GridPath,
    w,
    hurst: HurstParam,
    kappa_max: float,
    base_point,
) -> ExpansionHierarchy:
    """Solve the chain of correction ODEs up to exponent kappa_max.

    gamma is the deterministic (Cameron-Martin) driver, w the random
    driver (GridPath, array (..., d, N+1), or None for the
    w-independent sub-hierarchy).  Corrections are resolved in
    increasing exponent order; the source of phi^kappa combines
    derivative contractions of earlier corrections against dw, dgamma
    and dt, where the participating exponent multisets are found by
    exact pair arithmetic.
    """
    h = hurst.value
    times = gamma.times
    a = np.asarray(base_point, dtype=float)

    sol0 = solve_ode(vf, gamma, a, clock_scale=0.0)
    phi0, Jt, Jti = sol0.state, sol0.jacobian, sol0.jacobian_inv

    if w is None:
        wvals = np.zeros_like(gamma.values)
    elif isinstance(w, GridPath):
        wvals = w.values
    else:
        wvals = np.asarray(w, dtype=float)

    lam1 = build_lattice("lambda1", hurst, kappa_max + MERGE_TOL)
    kappas = [e for e in lam1 if e.value > MERGE_TOL]

    sig_cache, b_cache = {}, {}

    def check_order(k):
        if k > vf.max_order:
            raise ValueError(
                f"hierarchy needs derivative order {k}, vector field "
                f"provides max_order={vf.max_order}"
            )

    def sig_d(k):
        if k not in sig_cache:
            check_order(k)
            sig_cache[k] = _derivs_along(vf.sigma_deriv, phi0, k)
        return sig_cache[k]

    def b_d(k):
        if k not in b_cache:
            check_order(k)
            b_cache[k] = _derivs_along(vf.b_deriv, phi0, k)
        return b_cache[k]

    dgamma = np.diff(gamma.values, axis=-1)
    dw = np.diff(wvals, axis=-1)
    dt = np.diff(times)

    phi = {}
    done = []  # exponents already solved, ascending

    def source_terms(target_value, driver_tag):
        """Sum of derivative contractions for one driver channel."""
        if target_value < -MERGE_TOL:
            return None
        k_min = 2 if driver_tag == "gamma" else 0
        if abs(target_value) < MERGE_TOL:
            if k_min > 0:
                return None
            # empty partition: the bare coefficient
            if driver_tag == "w":
                return sig_d(0)
            return b_d(0)
        total = None
        for idxs in _partitions(done, target_value):
            k = len(idxs)
            if k < max(k_min, 1):
                continue
            phis = [phi[done[i]] for i in idxs]
            weight = _multiset_weight(idxs)
            if driver_tag in ("w", "gamma"):
                term = weight * _contract(_SIG_SUBS.get(k), sig_d(k), phis)
            else:
                term = weight * _contract(_B_SUBS.get(k), b_d(k), phis)
            total = term if total is None else total + term
        return total

    for kappa in kappas:
        pieces = []
        Aw = source_terms(kappa.value - 1.0, "w")
        if Aw is not None:
            avg = 0.5 * (Aw[..., 1:] + Aw[..., :-1])
            pieces.append(np.einsum("...idt,...dt->...it", avg, dw))
        Bg = source_terms(kappa.value, "gamma")
        if Bg is not None:
            avg = 0.5 * (Bg[..., 1:] + Bg[..., :-1])
            pieces.append(np.einsum("...idt,...dt->...it", avg, dgamma))
        Ct = source_terms(kappa.value - 1.0 / h, "clock")
        if Ct is not None:
            avg = 0.5 * (Ct[..., 1:] + Ct[..., :-1])
            pieces.append(avg * dt)

        if not pieces:
            phi[kappa] = np.zeros_like(phi0)
            done.append(kappa)
            done.sort(key=lambda e: e.value)
            continue

        dq = pieces[0]
        for extra in pieces[1:]:
            dq = dq + extra
        phi[kappa] = variation_of_constants(Jt, Jti, dq)
        done.append(kappa)
        done.sort(key=lambda e: e.value)

    return ExpansionHierarchy(
        hurst=h, times=times, base_point=a, gamma=gamma,
        kappas=kappas, phi0=phi0, jacobian=Jt, jacobian_inv=Jti, phi=phi,
    )


def scaled_solution(
    vf: VectorFieldSystem,
    eps: float,
    w,
    gamma: GridPath,
    base_point,
    hurst: HurstParam,
) -> YoungSolution:
    """Solve dy = sigma(y)(eps dw + dgamma) + b(y) eps^{1/H} dt from base_point."""
    wvals = w.values if isinstance(w, GridPath) else np.asarray(w, dtype=float)
    driver = eps * wvals + gamma.values
    return solve_ode(vf, driver, base_point,
                     clock_scale=eps ** (1.0 / hurst.value), times=gamma.times)


def remainder(
    vf: VectorFieldSystem,
    eps: float,
    w,
    gamma: GridPath,
    base_point,
    hierarchy: ExpansionHierarchy,
    up_to: float,
) -> np.ndarray:
    """The scaled solution minus all corrections with exponent <= up_to.

    Returns the remainder paths, shape (..., n, N+1); its Hölder norm is
    expected to scale like eps to the next lattice exponent.
    """
    hp = HurstParam(hierarchy.hurst)
    sol = scaled_solution(vf, eps, w, gamma, base_point, hp)
    total = sol.state - hierarchy.phi0
    for kappa in hierarchy.kappas:
        if kappa.value <= up_to + MERGE_TOL:
            total = total - eps**kappa.value * hierarchy.phi[kappa]
    return total


def next_exponent(hurst: HurstParam, up_to: float) -> float:
    """Smallest lattice exponent strictly above up_to."""
    lat = build_lattice("lambda1", hurst, up_to + 2.0)
    for e in lat:
        if e.value > up_to + 1e-9:
            return e.value
    raise ValueError("cutoff too small")


# ---------------------------------------------------------------------------
# chaos expansion


@dataclass(frozen=True)
class ChaosTerm:
    word: tuple          # letters in {0..d}, 0 = the clock channel
    weight: LatticeExponent
    coefficient: np.ndarray


_FD_STEPS = (1e-6, 3e-5, 1e-3, 5e-3, 2e-2)


def _dir_deriv(vf: VectorFieldSystem, fn, channel: int, depth: int):
    step = _FD_STEPS[min(depth, len(_FD_STEPS) - 1)]

    def out(y):
        v = vf.eval(channel, y)
        nv = np.linalg.norm(v)
        if nv == 0.0:
            return np.zeros_like(fn(y))
        e = step * v / nv
        return nv * (fn(y + e) - fn(y - e)) / (2.0 * step)

    return out


def chaos_coefficients(
    vf: VectorFieldSystem,
    base_point,
    hurst: HurstParam,
    cutoff: float,
) -> list:
    """All words with weight #zeros / H + #nonzeros <= cutoff.

    The coefficient of a word (j1, ..., jm) is the chain
    Vhat_{jm} ... Vhat_{j2} V_{j1} evaluated at the base point, where
    Vhat_i acts as the directional derivative along V_i (nested central
    finite differences, with step widening as layers accumulate noise).
    """
    a = np.asarray(base_point, dtype=float)
    h = hurst.value
    terms = []
    max_len = int(cutoff) + 1
    for m in range(1, max_len + 1):
        for word in itertools.product(range(vf.d + 1), repeat=m):
            zeros = sum(1 for c in word if c == 0)
            nonzeros = m - zeros
            weight = LatticeExponent(nonzeros, zeros, h)
            if weight.value > cutoff + MERGE_TOL:
                continue
            fn = lambda y, c=word[0]: vf.eval(c, y)
            for depth, ch in enumerate(word[1:]):
                fn = _dir_deriv(vf, fn, ch, depth)
            terms.append(ChaosTerm(word, weight, np.asarray(fn(a), dtype=float)))
    terms.sort(key=lambda t: (t.weight.value, t.word))
    return terms


def iterated_integral(times, values, word) -> np.ndarray:
    """Iterated trapezoidal integral of the word's channels over [0, T].

    values: (..., d, N+1); letter 0 denotes the clock channel w^0_t = t,
    letters 1..d the driver components.  The last letter of the word is
    the innermost integration variable.
    """
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    batch = values.shape[:-2]
    run = np.ones(batch + times.shape)
    for letter in reversed(word):
        if letter == 0:
            chan = np.broadcast_to(times, batch + times.shape)
        else:
            chan = values[..., letter - 1, :]
        run = _cumtrapz_against(run, chan)
    return run[..., -1]


def chaos_sum(terms, times, values, eps: float) -> np.ndarray:
    """Truncated chaos expansion of y^eps_1 - a for clock-augmented words."""
    out = None
    for term in terms:
        contrib = (
            eps**term.weight.value
            * iterated_integral(times, values, term.word)[..., None]
            * term.coefficient
        )
        out = contrib if out is None else out + contrib
    return out


# ---------------------------------------------------------------------------
# serialization


def write_hierarchy_csv(fh, hierarchy: ExpansionHierarchy) -> None:
    """Long CSV of all correction paths keyed by exponent pair."""
    fh.write("kappa_p,kappa_q,t,component,value\n")
    times = hierarchy.times
    for ti, t in enumerate(times):
        for i in range(hierarchy.phi0.shape[0]):
            fh.write(f"0,0,{t:.17g},{i},{hierarchy.phi0[i, ti]:.17g}\n")
    for kappa in hierarchy.kappas:
        arr = hierarchy.phi[kappa]
        if arr.ndim != 2:
            arr = arr.reshape(-1, arr.shape[-2], arr.shape[-1])[0]
        for ti, t in enumerate(times):
            for i in range(arr.shape[0]):
                fh.write(f"{kappa.p},{kappa.q},{t:.17g},{i},{arr[i, ti]:.17g}\n")
