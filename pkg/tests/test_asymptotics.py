"""Tests for series fitting and the density-expansion pipelines."""

import io
import math

import numpy as np
import pytest

from fbmflow import (
    HurstParam,
    build_lattice,
    fit_series,
    geometric_grid,
    get_model,
    off_diagonal_pipeline,
    on_diagonal_pipeline,
)
from fbmflow.asymptotics import _default_exponents, write_pipeline_csv

H = HurstParam(0.75)


def _exponents(kind, cutoff):
    return list(build_lattice(kind, H, cutoff))


class TestGeometricGrid:
    def test_endpoints_and_ratio(self):
        g = geometric_grid(0.05, 0.8, 8)
        assert g[0] == pytest.approx(0.05, abs=1e-15)
        assert g[-1] == pytest.approx(0.8, abs=1e-15)
        ratios = g[1:] / g[:-1]
        assert np.allclose(ratios, ratios[0])


class TestFitSeries:
    def test_recovers_exact_series(self):
        # exact data c0 + c1 t^{nu1 H} + c2 t^{nu2 H} with tiny errors
        exps = _exponents("lambda3", 2.0 / H.value)[:3]
        t = geometric_grid(0.05, 0.8, 10)
        coeffs = np.array([0.4, -0.03, 0.12])
        vals = sum(c * t ** (e.value * H.value) for c, e in zip(coeffs, exps))
        fit = fit_series(t, vals, np.full_like(t, 1e-8), exps, H)
        assert np.allclose(fit.coefficients, coeffs, atol=1e-7)
        # residual norm is reported in units of the standard errors
        assert fit.residual_norm < 1e-3

    def test_coefficient_lookup(self):
        exps = _exponents("lambda3", 2.0 / H.value)[:3]
        t = geometric_grid(0.1, 0.8, 8)
        vals = 0.25 * np.ones_like(t)
        fit = fit_series(t, vals, np.full_like(t, 1e-6), exps, H)
        c, se = fit.coefficient(0.0)
        assert c == pytest.approx(0.25, abs=1e-5)
        with pytest.raises(KeyError):
            fit.coefficient(42.0)

    def test_errors_propagate_into_std_errors(self):
        exps = _exponents("lambda3", 2.0 / H.value)[:2]
        t = geometric_grid(0.1, 0.8, 12)
        fit_tight = fit_series(t, np.ones_like(t), np.full_like(t, 1e-6),
                               exps, H)
        fit_loose = fit_series(t, np.ones_like(t), np.full_like(t, 1e-2),
                               exps, H)
        assert np.all(fit_loose.std_errors > 100.0 * fit_tight.std_errors)

    def test_underdetermined_grid_rejected(self):
        exps = _exponents("lambda3", 2.0 / H.value)[:4]
        t = geometric_grid(0.1, 0.8, 5)
        with pytest.raises(ValueError):
            fit_series(t, np.ones_like(t), np.ones_like(t), exps, H)

    def test_default_exponent_selection(self):
        lat = build_lattice("lambda3", H, 4.0)
        t = geometric_grid(0.05, 0.8, 8)
        picked = _default_exponents(lat, t, cutoff=None)
        assert len(picked) == 6          # capped for collinearity control
        explicit = _default_exponents(lat, t, cutoff=4.0)
        assert len(explicit) == len(lat)
        short = _default_exponents(lat, geometric_grid(0.1, 0.8, 6), None)
        assert len(short) == 4           # never more than len(t) - 2


class TestOnDiagonalPipeline:
    def test_affine_leading_coefficient(self):
        # the density of the affine model at its own start point scales to
        # the standard Gaussian peak value (2 pi)^{-1/2}
        vf = get_model("affine")
        res = on_diagonal_pipeline(vf, np.zeros(1), H, n_paths=4000,
                                   n_steps=32, seed=0)
        target = (2.0 * math.pi) ** -0.5
        c0 = float(res["fit"].coefficients[0])
        assert c0 == pytest.approx(target, rel=0.05)

    def test_rows_structure(self):
        vf = get_model("affine")
        res = on_diagonal_pipeline(vf, np.zeros(1), H,
                                   t_grid=geometric_grid(0.1, 0.8, 6),
                                   n_paths=2000, n_steps=32, seed=1)
        rows = res["rows"]
        assert len(rows) == 6
        for row in rows:
            assert {"t", "raw", "std_error", "scaled",
                    "prediction"} <= set(row)
            assert row["std_error"] >= 0.0


class TestOffDiagonalPipeline:
    def test_affine_report(self):
        # moving 0 -> 1 with sigma == 1: energy 1, multiplier 1, and the
        # drift contributes beta = <nu, b> = 0.5
        vf = get_model("affine")
        rep = off_diagonal_pipeline(vf, np.zeros(1), np.ones(1), H,
                                    n_paths=4000, n_steps=32, seed=2)
        assert rep.energy == pytest.approx(1.0, abs=1e-6)
        assert float(np.asarray(rep.nu_bar)[0]) == pytest.approx(1.0, abs=1e-6)
        assert rep.beta == pytest.approx(0.5, abs=1e-6)
        target = (2.0 * math.pi) ** -0.5
        assert rep.leading_coeff == pytest.approx(target, rel=0.10)

    def test_reuses_supplied_minimizer(self):
        from fbmflow import minimize_energy
        vf = get_model("affine")
        sol = minimize_energy(vf, np.zeros(1), np.ones(1), H)
        rep = off_diagonal_pipeline(vf, np.zeros(1), np.ones(1), H,
                                    n_paths=1000, n_steps=32, seed=3,
                                    minimizer=sol)
        assert rep.minimizer is sol
        assert rep.energy == sol.energy


class TestPipelineCsv:
    def test_column_layout(self):
        rows = [
            {"t": 0.1, "raw": 1.5, "std_error": 0.01, "prediction": 1.49},
            {"t": 0.2, "raw": 1.2, "std_error": 0.02, "prediction": 1.21},
        ]
        buf = io.StringIO()
        write_pipeline_csv(buf, rows)
        lines = buf.getvalue().strip().splitlines()
        assert lines[0] == "t,raw,std_error,prediction"
        assert len(lines) == 3
        assert float(lines[1].split(",")[1]) == pytest.approx(1.5)
