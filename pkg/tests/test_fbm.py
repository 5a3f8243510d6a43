"""Tests for fractional Brownian path sampling and its covariance law."""

import io

import numpy as np
import pytest

from fbmflow import (
    GridPath,
    HurstParam,
    PathEnsemble,
    covariance,
    covariance_scaling_residual,
    empirical_covariance,
    fgn_autocovariance,
    sample_paths,
    self_similarity_check,
)
from fbmflow.fbm import read_binary, read_csv, write_binary, write_csv

H = HurstParam(0.75)


class TestHurstParam:
    @pytest.mark.parametrize("bad", [0.5, 1.0, 0.3, 1.2, -0.75])
    def test_rejects_outside_open_interval(self, bad):
        with pytest.raises(ValueError):
            HurstParam(bad)

    def test_inverse(self):
        assert HurstParam(0.8).inverse == pytest.approx(1.25, abs=1e-15)


class TestCovariance:
    def test_frozen_values(self):
        # R(s,t) = (s^{2H} + t^{2H} - |t-s|^{2H}) / 2 evaluated by hand:
        # H=0.75: R(0.5, 1.0) = (0.5^1.5 + 1 - 0.5^1.5)/2 = 0.5
        assert covariance(H, 0.5, 1.0) == pytest.approx(0.5, abs=1e-15)
        assert covariance(H, 1.0, 1.0) == pytest.approx(1.0, abs=1e-15)
        # 2^-1.5 = 0.35355339059327373 -> R(0.25,0.75) = (0.25^1.5+0.75^1.5-0.5^1.5)/2
        assert covariance(H, 0.25, 0.75) == pytest.approx(
            0.5 * (0.25**1.5 + 0.75**1.5 - 0.5**1.5), abs=1e-15
        )

    def test_symmetry_and_diagonal(self):
        s = np.linspace(0.1, 1.0, 7)
        R = covariance(H, s[:, None], s[None, :])
        assert np.allclose(R, R.T)
        assert np.allclose(np.diag(R), s ** 1.5)

    def test_self_similarity_identity(self):
        grid = np.linspace(0.05, 1.0, 12)
        assert covariance_scaling_residual(H, 0.37, grid, grid) < 1e-14

    def test_positive_definite(self):
        t = np.linspace(1.0 / 64, 1.0, 64)
        R = covariance(H, t[:, None], t[None, :])
        assert np.linalg.eigvalsh(R).min() > 0.0


class TestFgnAutocovariance:
    def test_lag_zero_is_unit_variance(self):
        assert fgn_autocovariance(H, 0)[0] == pytest.approx(1.0, abs=1e-15)

    def test_partial_sums_telescope_to_variance(self):
        # sum of rho(|i-j|) over an n x n block equals Var(w_n) = n^{2H}
        rho = fgn_autocovariance(H, 16)
        for n in (1, 4, 16):
            idx = np.arange(n)
            block = rho[np.abs(idx[:, None] - idx[None, :])]
            assert block.sum() == pytest.approx(float(n) ** 1.5, rel=1e-13)

    def test_positive_correlation_above_half(self):
        assert np.all(fgn_autocovariance(H, 10)[1:] > 0.0)


class TestSamplePaths:
    def test_deterministic_rerun(self):
        a = sample_paths(H, 64, 8, seed=7)
        b = sample_paths(H, 64, 8, seed=7)
        assert np.array_equal(a.values, b.values)

    def test_paths_keyed_independently_of_ensemble_size(self):
        # path i depends only on (seed, i), so growing M keeps old paths
        small = sample_paths(H, 32, 2, seed=5)
        large = sample_paths(H, 32, 6, seed=5)
        assert np.array_equal(small.values, large.values[:2])

    def test_seed_changes_output(self):
        a = sample_paths(H, 32, 2, seed=0)
        b = sample_paths(H, 32, 2, seed=1)
        assert not np.allclose(a.values, b.values)

    def test_starts_at_zero(self):
        ens = sample_paths(H, 16, 3, seed=2, dim=2)
        assert np.all(ens.values[:, :, 0] == 0.0)
        assert ens.values.shape == (3, 2, 17)

    def test_cholesky_and_circulant_agree_in_law(self):
        # same marginal variance at T under either factorization
        var = []
        for method in ("cholesky", "circulant"):
            ens = sample_paths(H, 64, 4000, seed=11, method=method)
            var.append(ens.values[:, 0, -1].var())
        assert var[0] == pytest.approx(1.0, abs=0.08)
        assert var[1] == pytest.approx(1.0, abs=0.08)

    def test_empirical_covariance_matches_law(self):
        ens = sample_paths(H, 32, 4000, seed=3)
        for i, j in [(8, 8), (8, 24), (16, 32)]:
            emp, se = empirical_covariance(ens, i, j)
            exact = float(covariance(H, ens.times[i], ens.times[j]))
            assert abs(emp - exact) < 3.0 * se

    def test_horizon_scaling(self):
        ens = sample_paths(H, 32, 1500, seed=9, horizon=2.0)
        emp, se = empirical_covariance(ens, 32, 32)
        assert abs(emp - 2.0 ** 1.5) < 3.0 * se


class TestSelfSimilarityCheck:
    def test_sampled_ensemble_is_scale_invariant(self):
        ens = sample_paths(H, 128, 3000, seed=4)
        report = self_similarity_check(ens, 0.5)
        assert report["n_paths"] == 3000
        assert report["max_standardized"] < 4.0

    def test_requires_enough_matched_grid_points(self):
        ens = sample_paths(H, 8, 200, seed=0)
        with pytest.raises(ValueError):
            self_similarity_check(ens, 0.03)


class TestGridPath:
    def test_arithmetic(self):
        t = np.linspace(0.0, 1.0, 5)
        a = GridPath(t, np.arange(5.0)[None, :])
        b = a * 2.0 + a
        assert np.allclose(b.values, 3.0 * a.values)
        assert np.allclose((b - a).values, 2.0 * a.values)

    def test_increments(self):
        t = np.linspace(0.0, 1.0, 5)
        p = GridPath(t, (t ** 2)[None, :])
        assert np.allclose(p.increments(), np.diff(t ** 2))


class TestSerialization:
    def test_csv_round_trip(self):
        ens = sample_paths(H, 16, 3, seed=1, dim=2)
        buf = io.StringIO()
        write_csv(buf, ens)
        buf.seek(0)
        back = read_csv(buf)
        assert np.allclose(back.values, ens.values, atol=1e-15)
        assert np.allclose(back.times, ens.times, atol=1e-15)

    def test_binary_round_trip_is_exact(self):
        ens = sample_paths(H, 16, 3, seed=1, dim=2)
        buf = io.BytesIO()
        write_binary(buf, ens)
        buf.seek(0)
        back = read_binary(buf)
        assert np.array_equal(back.values, ens.values)
        assert back.hurst.value == ens.hurst.value
        assert back.seed == ens.seed

    def test_binary_rejects_garbage(self):
        with pytest.raises(ValueError):
            read_binary(io.BytesIO(b"NOPE" + b"\0" * 64))
