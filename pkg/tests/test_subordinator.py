import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from subsde import (
    big_jump_rate,
    check_con2,
    make_custom_spec,
    make_stable_spec,
    phi,
    sample_big_jump_displacement,
    sample_path,
    truncated_first_moment,
)
from subsde.subordinator import (
    SubordinatorPath,
    chunk_streams,
    sample_clock_totals,
    spec_from_config,
    spec_to_config,
)

# (1/2) int_1^inf exp(-s |z|^2 / 2) s^{-3/2} ds, computed with mpmath at 30 digits
BIG_JUMP_CF = {1.0: 0.208840914289281975569221512866, 2.0: 0.0212830352508285953410817511101}


class TestSpec:
    def test_half_stable_density(self, half_stable):
        u = np.array([0.25, 1.0, 4.0])
        np.testing.assert_allclose(half_stable.levy_density(u), u**-1.5)

    def test_near_one_accepted(self):
        assert make_stable_spec(0.99, 1.0).beta == 0.99

    @pytest.mark.parametrize("beta,c", [(1.2, 1.0), (0.0, 1.0), (1.0, 1.0), (0.5, 0.0), (0.5, -1.0)])
    def test_rejected(self, beta, c):
        with pytest.raises(ValueError):
            make_stable_spec(beta, c)

    def test_custom_matches_stable(self, half_stable):
        custom = make_custom_spec(lambda u: np.asarray(u, float) ** -1.5)
        assert truncated_first_moment(custom, 0.25) == pytest.approx(1.0, rel=1e-8)
        assert big_jump_rate(custom) == pytest.approx(2.0, rel=1e-8)
        assert custom.truncated_second_moment(0.01) == pytest.approx(half_stable.truncated_second_moment(0.01), rel=1e-8)

    @pytest.mark.parametrize("dens", [lambda u: np.asarray(u, float) ** -2.2, lambda u: 1.0 / np.asarray(u, float)])
    def test_custom_not_subordinator(self, dens):
        # the first diverges at zero, the second has infinite mass on [1, inf)
        with pytest.raises(ValueError):
            make_custom_spec(dens)

    def test_config_roundtrip(self, half_stable):
        spec, eps = spec_from_config(spec_to_config(half_stable, 1e-3))
        assert spec == half_stable and eps == 1e-3

    def test_config_missing_field(self):
        with pytest.raises(ValueError, match="beta"):
            spec_from_config("kind=stable\nc=1\n")


class TestFunctionals:
    def test_first_moment_examples(self, half_stable):
        assert truncated_first_moment(half_stable, 0.25) == pytest.approx(1.0, rel=1e-14)
        assert truncated_first_moment(half_stable, 1e-300) < 1e-140
        assert truncated_first_moment(make_stable_spec(0.9, 2.0), 1.0) == pytest.approx(20.0, rel=1e-12)

    def test_con2_converges_to_two(self, half_stable):
        rep = check_con2(half_stable, 0.25, 10.0 ** -np.arange(1, 7))
        assert rep.converged
        assert rep.limit == pytest.approx(2.0, rel=1e-12)
        np.testing.assert_allclose(rep.ratios, 2.0, rtol=1e-12)

    def test_con2_wrong_exponent(self, half_stable):
        rep = check_con2(half_stable, 0.4, 10.0 ** -np.arange(1, 7))
        assert not rep.converged
        assert np.all(np.diff(rep.ratios) < 0) and rep.ratios[-1] < 0.1

    def test_con2_single_point(self, half_stable):
        rep = check_con2(half_stable, 0.25, [0.1])
        assert rep.ratios.size == 1 and not rep.converged

    def test_con2_bad_grid(self, half_stable):
        with pytest.raises(ValueError):
            check_con2(half_stable, 0.25, [0.1, 0.2])

    @given(beta=st.floats(0.05, 0.95), c=st.floats(0.1, 10.0), eps=st.floats(1e-8, 1.0))
    def test_con2_constant_at_matching_exponent(self, beta, c, eps):
        spec = make_stable_spec(beta, c)
        rep = check_con2(spec, beta / 2.0, [eps, eps / 3.0, eps / 9.0])
        np.testing.assert_allclose(rep.ratios, c / (1.0 - beta), rtol=1e-10)
        assert rep.converged

    def test_phi_examples(self, half_stable):
        ln2 = math.log(2.0)
        assert phi(half_stable, ln2) == pytest.approx(ln2, rel=1e-14)
        assert phi(half_stable, 4 * ln2) == pytest.approx(2 * ln2, rel=1e-14)
        assert phi(half_stable, 1e-12) < 1e-5

    @given(beta=st.floats(0.05, 0.95), l1=st.floats(1e-6, 1e6), l2=st.floats(1e-6, 1e6))
    def test_phi_monotone(self, beta, l1, l2):
        spec = make_stable_spec(beta, 1.0)
        lo, hi = sorted([l1, l2])
        assert phi(spec, lo) <= phi(spec, hi) * (1 + 1e-12)

    @pytest.mark.parametrize("beta,c,rate", [(0.5, 1.0, 2.0), (0.5, 3.0, 6.0), (0.25, 1.0, 4.0)])
    def test_big_jump_rate(self, beta, c, rate):
        assert big_jump_rate(make_stable_spec(beta, c)) == pytest.approx(rate, rel=1e-14)


class TestSampling:
    def test_jump_count_mean(self, half_stable):
        rng = np.random.default_rng(1)
        counts = np.array([sample_path(half_stable, 1.0, 0.01, rng).jump_times.size for _ in range(10_000)])
        assert abs(counts.mean() - 20.0) <= 3 * math.sqrt(20.0 / counts.size)

    def test_jump_count_poisson_chi_square(self, half_stable):
        # counts of jumps >= eps over [0, T] follow Poisson(T nu_S([eps, inf)))
        rng = np.random.default_rng(2)
        T, eps = 0.5, 0.04
        mean = T * half_stable.tail_mass(eps)
        counts = np.array([sample_path(half_stable, T, eps, rng).jump_times.size for _ in range(10_000)])
        edges = np.arange(0, 12)
        obs = np.array([np.sum(counts == k) for k in edges[:-1]] + [np.sum(counts >= edges[-1])])
        probs = np.append(stats.poisson.pmf(edges[:-1], mean), stats.poisson.sf(edges[-1] - 1, mean))
        assert stats.chisquare(obs, probs * counts.size).pvalue > 0.01

    def test_path_invariants(self, half_stable):
        p = sample_path(half_stable, 2.0, 0.01, 3)
        assert np.all(np.diff(p.jump_times) > 0)
        assert np.all(p.jump_sizes >= 0.01)
        assert p.drift_rate == truncated_first_moment(half_stable, 0.01)
        grid = np.linspace(0, 2, 1001)
        assert p.value(0.0) == 0.0
        assert np.all(np.diff(p.value(grid)) > 0)
        assert p.dropped_variance == pytest.approx(2.0 * half_stable.truncated_second_moment(0.01))

    def test_zero_horizon(self, half_stable):
        p = sample_path(half_stable, 0.0, 0.01, 0)
        assert p.jump_times.size == 0 and p.value(0.0) == 0.0

    def test_deterministic(self, half_stable):
        a = sample_path(half_stable, 1.0, 0.01, 42)
        b = sample_path(half_stable, 1.0, 0.01, 42)
        np.testing.assert_array_equal(a.jump_times, b.jump_times)
        np.testing.assert_array_equal(a.jump_sizes, b.jump_sizes)

    @pytest.mark.parametrize("eps", [0.0, 1.0, -0.1, 2.0])
    def test_eps_rejected(self, half_stable, eps):
        with pytest.raises(ValueError):
            sample_path(half_stable, 1.0, eps, 0)

    def test_invalid_path_rejected(self):
        with pytest.raises(ValueError):
            SubordinatorPath(1.0, np.array([0.5, 0.2]), np.array([1.0, 1.0]), 0.1, 0.01)
        with pytest.raises(ValueError):
            SubordinatorPath(1.0, np.array([0.5]), np.array([0.001]), 0.1, 0.01)

    def test_csv(self, half_stable):
        p = sample_path(half_stable, 1.0, 0.1, 5)
        lines = p.to_csv().splitlines()
        assert lines[0] == "time,jump_size" and len(lines) == p.jump_times.size + 1

    def test_jump_size_law(self, half_stable):
        # sizes in [eps, inf) normalized: P(size > x) = sqrt(eps / x)
        from subsde.subordinator import sample_jump_sizes

        x = sample_jump_sizes(half_stable, 50_000, 0.01, math.inf, 7)
        ks = stats.kstest(x, lambda v: 1.0 - np.sqrt(0.01 / np.maximum(v, 0.01)))
        assert ks.pvalue > 0.01

    def test_custom_rejection_sampler(self):
        # tempered density: P(size > x) on [0.1, inf) has closed form in terms of erfc
        dens = lambda u: np.exp(-np.asarray(u, float)) * np.asarray(u, float) ** -1.5  # noqa: E731
        spec = make_custom_spec(dens)
        from subsde.subordinator import sample_jump_sizes

        x = sample_jump_sizes(spec, 20_000, 0.1, math.inf, 8)
        tail = lambda v: spec.tail_mass(v) / spec.tail_mass(0.1)  # noqa: E731
        grid = [0.2, 0.5, 1.0, 2.0]
        for g in grid:
            p = tail(g)
            assert abs(np.mean(x > g) - p) <= 4 * math.sqrt(p * (1 - p) / x.size)

    def test_big_jump_cf(self, half_stable):
        N = 100_000
        xi = sample_big_jump_displacement(half_stable, 1, 9, size=N)
        for z, ref in BIG_JUMP_CF.items():
            emp = np.mean(np.cos(z * xi[:, 0]))
            assert abs(emp - ref) <= 4 / math.sqrt(N)
        assert np.mean(np.exp(0j * xi[:, 0])) == 1.0

    def test_big_jump_centered(self, half_stable):
        xi = sample_big_jump_displacement(half_stable, 3, 10, size=100_000)
        # the mixture has infinite variance for beta = 1/2; use a robust location check
        assert np.all(np.abs(np.median(xi, axis=0)) <= 4 * 1.2533 * np.median(np.abs(xi), axis=0) / math.sqrt(1e5) * 1.5)
        assert sample_big_jump_displacement(half_stable, 2, 0).shape == (2,)

    def test_clock_totals_half_stable_cdf(self, half_stable):
        from scipy.special import erfc

        S = sample_clock_totals(half_stable, 1.0, 100_000, np.random.default_rng(11))
        for x in [0.5, 1.0, 3.0, 10.0]:
            p = erfc(math.sqrt(math.pi) / math.sqrt(x))
            assert abs(np.mean(S <= x) - p) <= 4 * math.sqrt(p * (1 - p) / S.size)

    def test_chunk_streams_partition(self):
        streams = chunk_streams(5, 20_000, 8192)
        assert [s for s, _ in streams] == [8192, 8192, 3616]
        again = chunk_streams(5, 20_000, 8192)
        assert streams[2][1].random() == again[2][1].random()
