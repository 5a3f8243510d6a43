"""Tests for exponent lattices, correction hierarchies and chaos terms."""

import fractions

import numpy as np
import pytest

from fbmflow import (
    GridPath,
    HurstParam,
    build_lattice,
    chaos_coefficients,
    chaos_sum,
    get_model,
    iterated_integral,
    lattice_table,
    next_exponent,
    phi_hierarchy,
    remainder,
    sample_paths,
    scaled_solution,
)

H = HurstParam(0.75)


def _zero_gamma(n_steps, d=1):
    t = np.linspace(0.0, 1.0, n_steps + 1)
    return GridPath(t, np.zeros((d, n_steps + 1)))


def _line_gamma(n_steps, slope=1.0, d=1):
    t = np.linspace(0.0, 1.0, n_steps + 1)
    return GridPath(t, np.broadcast_to(slope * t, (d, n_steps + 1)).copy())


def brute_force_values(kind, h, cutoff, tol=1e-12):
    """Independent enumeration of each lattice via exact rational arithmetic."""
    hq = fractions.Fraction(h).limit_denominator(10**6)

    def lam1_upto(top):
        return sorted({
            fractions.Fraction(p) + q / hq
            for p in range(int(top) + 3) for q in range(int(top) + 3)
            if p + q / hq <= top + fractions.Fraction(1, 10**9)
        })

    lam1 = lam1_upto(cutoff + 2)
    if kind == "lambda1":
        vals = lam1_upto(cutoff)
    elif kind == "lambda2":
        vals = {k - 1 for k in lam1 if k != 0}
    elif kind == "lambda2-prime":
        vals = {k - 2 for k in lam1 if k not in (0, 1, 1 / hq)}
    elif kind in ("lambda3", "lambda3-prime"):
        gen_kind = "lambda2" if kind == "lambda3" else "lambda2-prime"
        gens = [g for g in brute_force_values(gen_kind, h, cutoff) if g > 0]
        vals = {fractions.Fraction(0)}
        frontier = [fractions.Fraction(0)]
        while frontier:
            nxt = []
            for base in frontier:
                for g in gens:
                    c = base + g
                    if c <= cutoff and c not in vals:
                        vals.add(c)
                        nxt.append(c)
            frontier = nxt
    elif kind == "lambda4":
        a = brute_force_values("lambda3", h, cutoff)
        b = brute_force_values("lambda3-prime", h, cutoff)
        vals = {x + y for x in a for y in b}
    vals = sorted(v for v in vals if v <= cutoff + fractions.Fraction(1, 10**9))
    # deduplicate to the merge tolerance used by the library
    out = []
    for v in vals:
        if not out or float(v - out[-1]) > tol:
            out.append(v)
    return out


ALL_KINDS = ("lambda1", "lambda2", "lambda2-prime",
             "lambda3", "lambda3-prime", "lambda4")


class TestLattices:
    def test_frozen_lambda1(self):
        # H = 3/4, cutoff 3: {p + 4q/3} = {0, 1, 4/3, 2, 7/3, 8/3, 3}
        lat = build_lattice("lambda1", H, 3.0)
        expect = [0.0, 1.0, 4.0 / 3.0, 2.0, 7.0 / 3.0, 8.0 / 3.0, 3.0]
        assert np.allclose([e.value for e in lat], expect, atol=1e-12)

    def test_value_collision_merged(self):
        # at H = 3/4 the pairs (1, 0)+(0, 3) and (4, 0)+... share value 4
        lat = build_lattice("lambda1", H, 4.0)
        vals = [e.value for e in lat]
        assert vals.count(4.0) == 1

    @pytest.mark.parametrize("kind", ALL_KINDS)
    @pytest.mark.parametrize("h", [0.6, 0.75, 0.9])
    def test_brute_force_agreement(self, kind, h):
        lat = build_lattice(kind, HurstParam(h), 4.0)
        expect = brute_force_values(kind, h, 4.0)
        got = [e.value for e in lat]
        assert len(got) == len(expect)
        assert np.allclose(got, [float(v) for v in expect], atol=1e-9)

    def test_unknown_kind_rejected(self):
        with pytest.raises(ValueError):
            build_lattice("lambda9", H, 2.0)

    def test_next_exponent(self):
        assert next_exponent(H, 1.0) == pytest.approx(4.0 / 3.0, abs=1e-12)
        assert next_exponent(H, 0.0) == pytest.approx(1.0, abs=1e-12)

    def test_table_rendering(self):
        text = lattice_table(build_lattice("lambda1", H, 1.0))
        lines = text.strip().splitlines()
        assert lines[0] == "kind,p,q,value"
        assert lines[1].startswith("lambda1,0,0,0")


class TestPhiHierarchy:
    def test_affine_first_correction_is_the_driver(self):
        vf = get_model("affine")
        gamma = _zero_gamma(64)
        ens = sample_paths(H, 64, 3, seed=0)
        hier = phi_hierarchy(vf, gamma, ens.values, H, 2.0 + 1e-9, np.zeros(1))
        assert np.max(np.abs(hier.path(1.0) - ens.values)) < 1e-12

    def test_affine_higher_corrections_vanish(self):
        vf = get_model("affine")
        gamma = _line_gamma(64)
        ens = sample_paths(H, 64, 2, seed=1)
        hier = phi_hierarchy(vf, gamma, ens.values, H, 7.0 / 3.0 + 1e-9, np.zeros(1))
        assert np.max(np.abs(hier.path(2.0))) < 1e-12
        assert np.max(np.abs(hier.path(7.0 / 3.0))) < 1e-12

    def test_clock_exponent_carries_the_drift(self):
        # the kappa = 1/H channel integrates b along the base flow
        vf = get_model("affine")  # b = 0.5
        gamma = _zero_gamma(64)
        hier = phi_hierarchy(vf, gamma, None, H, 4.0 / 3.0 + 1e-9, np.zeros(1))
        assert hier.endpoint(4.0 / 3.0)[0] == pytest.approx(0.5, abs=1e-12)

    def test_base_flow_is_deterministic_solution(self):
        vf = get_model("1d-sin")
        gamma = _line_gamma(128)
        hier = phi_hierarchy(vf, gamma, None, H, 1.0 + 1e-9, np.zeros(1))
        from fbmflow import solve_ode
        sol = solve_ode(vf, gamma, np.zeros(1), clock_scale=0.0)
        assert np.allclose(hier.phi0, sol.state, atol=1e-14)

    def test_unknown_exponent_lookup_raises(self):
        vf = get_model("affine")
        hier = phi_hierarchy(vf, _zero_gamma(16), None, H, 1.0 + 1e-9, np.zeros(1))
        with pytest.raises(KeyError):
            hier.endpoint(0.123)

    def test_derivative_order_guard(self):
        # max_order = 1 cannot support second-order source terms
        from fbmflow import from_table
        vf = from_table(lambda y: [[np.sin(y[0]) + 2.0]], n=1, d=1)
        vf = type(vf)(n=1, d=1, sigma_fn=vf.sigma_fn, b_fn=vf.b_fn,
                      max_order=1, name="shallow")
        with pytest.raises(ValueError, match="derivative order"):
            phi_hierarchy(vf, _line_gamma(32), None, H, 2.0 + 1e-9, np.zeros(1))


class TestRemainder:
    def test_affine_remainder_is_machine_zero(self):
        vf = get_model("affine")
        gamma = _line_gamma(64)
        ens = sample_paths(H, 64, 2, seed=2)
        hier = phi_hierarchy(vf, gamma, ens.values, H, 4.0 / 3.0 + 1e-9, np.zeros(1))
        rem = remainder(vf, 0.25, ens.values, gamma, np.zeros(1), hier, 4.0 / 3.0)
        assert np.max(np.abs(rem)) < 1e-13

    def test_remainder_order_after_first_correction(self):
        # sigma = sin + 2: dropping corrections above kappa = 1 leaves O(eps^{1/H})
        vf = get_model("1d-sin")
        gamma = _line_gamma(128)
        ens = sample_paths(H, 128, 32, seed=3)
        hier = phi_hierarchy(vf, gamma, ens.values, H, 1.0 + 1e-9, np.zeros(1))
        norms = []
        eps_grid = [0.1, 0.05, 0.025]
        for eps in eps_grid:
            rem = remainder(vf, eps, ens.values, gamma, np.zeros(1), hier, 1.0)
            norms.append(np.sqrt(np.mean(rem[..., -1] ** 2)))
        slope = np.polyfit(np.log(eps_grid), np.log(norms), 1)[0]
        assert slope == pytest.approx(4.0 / 3.0, abs=0.15)


class TestChaos:
    def test_iterated_integral_oracles(self):
        t = np.linspace(0.0, 1.0, 257)
        vals = t[None, :].copy()  # driver w_t = t
        # int dw = 1; int int dw dw = 1/2; clock letter integrates dt
        assert iterated_integral(t, vals, (1,)) == pytest.approx(1.0, abs=1e-12)
        assert iterated_integral(t, vals, (1, 1)) == pytest.approx(0.5, abs=1e-6)
        assert iterated_integral(t, vals, (0,)) == pytest.approx(1.0, abs=1e-12)

    def test_affine_coefficients(self):
        vf = get_model("affine")
        terms = chaos_coefficients(vf, np.zeros(1), H, cutoff=2.0)
        by_word = {t.word: t.coefficient for t in terms}
        assert by_word[(1,)][0] == pytest.approx(1.0, abs=1e-8)
        assert by_word[(0,)][0] == pytest.approx(0.5, abs=1e-8)
        # sigma' == 0 kills every second-level word
        for word, coeff in by_word.items():
            if len(word) == 2:
                assert abs(coeff[0]) < 1e-4

    def test_chaos_sum_matches_endpoint(self):
        vf = get_model("1d-sin")
        ens = sample_paths(H, 128, 16, seed=4)
        terms = chaos_coefficients(vf, np.zeros(1), H, cutoff=2.0 + 1e-9)
        eps = 0.05
        approx = chaos_sum(terms, ens.times, ens.values, eps)
        gamma = _zero_gamma(128)
        sol = scaled_solution(vf, eps, ens.values, gamma, np.zeros(1), H)
        err = np.max(np.abs(approx[:, 0] - (sol.endpoint[:, 0] - 0.0)))
        # truncation error is O(eps^{7/3}) ~ 9e-4 at eps = 0.05
        assert err < 5e-3
