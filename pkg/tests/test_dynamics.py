import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from oracles import contraction_by_enumeration, dense_level_kernel, lam
from vwergm import rng
from vwergm.analysis import critical_point, max_update_slope
from vwergm.dynamics import (
    BudgetExceeded,
    ChainState,
    burn_in_time,
    burn_in_times,
    coupled_step,
    coupling_time,
    coupling_times,
    drift_estimate,
    empirical_contraction,
    mode_escape_time,
    mode_escape_times,
    one_step_contraction_exact,
    path_codes,
    run,
    set_threads,
    step,
    up_prob_table,
)
from vwergm.model import DomainError, ModelParams, SpinConfiguration

HIGH_FP = 0.59539724643542528
LOW_UPPER = 0.93494273801252168
# n * H_n at n = 100 (coupon collector mean)
COUPON_100 = 518.73775176396203


def plus(n, p, a1, a2, s):
    h = a1 / n * s + a2 / n**2 * s * (s - 1) / 2
    return p * math.exp(h) / (p * math.exp(h) + 1 - p)


def batch_mean_sigma(x, batches=50):
    m = len(x) // batches
    means = x[: m * batches].reshape(batches, m).mean(axis=1)
    return means.mean(), means.std(ddof=1) / math.sqrt(batches)


class TestStep:
    def test_single_vertex_no_interaction_is_iid_bernoulli(self):
        p, N = 0.3, 10**6
        traj = run(ModelParams(1, p, 0.0, 0.0), "zeros", N, seed=11)
        x = traj.magnetizations[1:]
        sigma = math.sqrt(p * (1 - p) / N)
        assert abs(x.mean() - p) <= 3 * sigma
        # consecutive states independent: P(1 -> 1) is p as well
        follows = x[1:][x[:-1] == 1]
        assert abs(follows.mean() - p) <= 3 * math.sqrt(p * (1 - p) / follows.size)

    def test_step_mutates_state(self):
        params = ModelParams(10, 0.5, 1.0, 1.0)
        state = ChainState.new(SpinConfiguration.all_ones(10), seed=5)
        for _ in range(100):
            step(state, params)
        assert state.time == 100
        assert state.config.ones_count == int(state.config.spins.sum())

    def test_matches_run(self):
        params = ModelParams(12, 0.4, 2.0, 3.0)
        state = ChainState.new(SpinConfiguration.all_zeros(12), seed=99)
        levels = [state.config.ones_count]
        for _ in range(500):
            levels.append(step(state, params).config.ones_count)
        traj = run(params, "zeros", 500, seed=99)
        assert np.array_equal(np.round(traj.magnetizations * 12).astype(int), levels)

    def test_table_is_update_rule(self):
        params = ModelParams(20, 0.2, 3.0, 2.0)
        table = up_prob_table(params)
        assert table.shape == (20,)
        for s in range(20):
            assert table[s] == pytest.approx(plus(20, 0.2, 3.0, 2.0, s), abs=1e-15)
        with pytest.raises(ValueError):
            table[0] = 0.5


class TestRun:
    def test_zero_steps(self):
        traj = run(ModelParams(10, 0.5, 0.0, 0.0), "ones", 0)
        assert traj.magnetizations.tolist() == [1.0] and traj.steps.tolist() == [0]

    def test_stride_and_grid(self):
        traj = run(ModelParams(7, 0.5, 1.0, 0.0), 3, 1000, stride=10, seed=2)
        assert traj.magnetizations.size == 101 and traj.steps[-1] == 1000
        k = traj.magnetizations * 7
        assert np.allclose(k, np.round(k), atol=1e-12)
        assert traj.magnetizations[0] == 3 / 7

    def test_reproducible(self):
        params = ModelParams(50, 0.3, 1.0, 1.0)
        a = run(params, "zeros", 10_000, seed=4).magnetizations
        b = run(params, "zeros", 10_000, seed=4).magnetizations
        c = run(params, "zeros", 10_000, seed=5).magnetizations
        assert np.array_equal(a, b) and not np.array_equal(a, c)

    def test_budget(self):
        with pytest.raises(BudgetExceeded):
            run(ModelParams(10, 0.5, 0.0, 0.0), "ones", 10**6, memory_budget=1000)
        with pytest.raises(DomainError):
            run(ModelParams(10, 0.5, 0.0, 0.0), "ones", -1)

    def test_no_interaction_time_average(self):
        p = 0.3
        traj = run(ModelParams(100, p, 0.0, 0.0), "zeros", 10**6, seed=21)
        mean, sigma = batch_mean_sigma(traj.magnetizations[10_000:])
        assert abs(mean - p) <= 3 * sigma

    def test_low_temperature_stays_in_upper_well(self):
        traj = run(ModelParams(500, 0.05, 6.0, 0.0), "ones", 10**6, stride=100, seed=1)
        assert abs(traj.magnetizations[1000:].mean() - LOW_UPPER) <= 0.02
        assert traj.magnetizations.min() > 0.47216185296471422


class TestTransitions:
    @pytest.mark.parametrize("params", [ModelParams(4, 0.3, 2.0, 1.0), ModelParams(6, 0.6, 4.0, 5.0)])
    def test_configuration_transitions_match_rule(self, params):
        n, N = params.n, 10**6
        codes = path_codes(params, "zeros", N, seed=17)
        src, dst = codes[:-1], codes[1:]
        for x in np.unique(src):
            mask = src == x
            visits = int(mask.sum())
            if visits < 2000:
                continue
            bits = [(x >> i) & 1 for i in range(n)]
            ones = sum(bits)
            observed = dst[mask]
            for i in range(n):
                f = plus(n, params.p, params.alpha1, params.alpha2, ones - bits[i])
                q = (1 - f if bits[i] else f) / n
                count = int(np.sum(observed == (x ^ (1 << i))))
                assert abs(count - visits * q) <= 4 * math.sqrt(visits * q * (1 - q)) + 1

    def test_path_code_limit(self):
        with pytest.raises(DomainError):
            path_codes(ModelParams(63, 0.5, 0.0, 0.0), "zeros", 1, 0)

    @pytest.mark.parametrize("params", [ModelParams(20, 0.3, 2.0, 1.0), ModelParams(50, 0.5, 0.5, 0.5)])
    def test_level_chi_square(self, params):
        n = params.n
        traj = run(params, "zeros", 10**6, seed=8)
        k = np.round(traj.magnetizations * n).astype(int)
        P = dense_level_kernel(n, params.p, params.alpha1, params.alpha2)
        chi, dof = 0.0, 0
        for level in np.unique(k[:-1]):
            nxt = k[1:][k[:-1] == level]
            for target in (level - 1, level, level + 1):
                if not 0 <= target <= n:
                    continue
                expected = nxt.size * P[level, target]
                if expected < 5:
                    continue
                chi += (np.sum(nxt == target) - expected) ** 2 / expected
                dof += 1
        assert stats.chi2.sf(chi, dof) > 1e-3


class TestCoupledStep:
    def test_equal_pairs_stay_equal(self):
        params = ModelParams(15, 0.4, 3.0, 2.0)
        cfg = SpinConfiguration.from_level(15, 6)
        top, bot = ChainState.new(cfg, seed=3), ChainState.new(cfg.copy(), seed=3)
        for _ in range(2000):
            coupled_step(top, bot, params)
            assert np.array_equal(top.config.spins, bot.config.spins)

    def test_order_preserved(self):
        params = ModelParams(30, 0.1, 5.0, 3.0)
        top = ChainState.new(SpinConfiguration.all_ones(30), seed=1)
        bot = ChainState.new(SpinConfiguration.all_zeros(30), seed=1)
        for _ in range(5000):
            coupled_step(top, bot, params)
            assert np.all(top.config.spins >= bot.config.spins)
            assert top.config.ones_count == int(top.config.spins.sum())
            assert bot.config.ones_count == int(bot.config.spins.sum())

    def test_unordered_pair_rejected(self):
        params = ModelParams(3, 0.5, 0.0, 0.0)
        top = ChainState.new(SpinConfiguration.from_level(3, 1), seed=1)
        bot = ChainState.new(SpinConfiguration.all_ones(3), seed=1)
        with pytest.raises(AssertionError):
            coupled_step(top, bot, params)


class TestCouplingTime:
    def test_single_vertex(self):
        assert coupling_time(ModelParams(1, 0.4, 0.0, 0.0), seed=0, cap=10).tau == 1

    @pytest.mark.parametrize("seed", [0, 1, 2, 3])
    def test_no_interaction_is_coupon_collector(self, seed):
        # with no interaction both copies take the same value whenever a vertex is
        # chosen, so they meet exactly once every vertex has been chosen
        n = 40
        s = rng.seed_state(seed)
        thr = rng.rejection_threshold(n)
        seen, t = set(), 0
        while len(seen) < n:
            seen.add(int(rng.next_below(s, n, thr)))
            rng.next_double(s)
            t += 1
        assert coupling_time(ModelParams(n, 0.3, 0.0, 0.0), seed=seed, cap=10**6).tau == t

    def test_no_interaction_mean(self):
        runs = coupling_times(ModelParams(100, 0.3, 0.0, 0.0), [rng.derive_seed(1, 100, r) for r in range(200)], 10**7)
        mean = np.mean([r.tau for r in runs])
        assert abs(mean - COUPON_100) <= 0.15 * COUPON_100

    def test_low_temperature_times_out(self):
        run_ = coupling_time(ModelParams(200, 0.05, 6.0, 0.0), seed=1, cap=10**7)
        assert run_.timed_out and run_.tau is None

    def test_checked_runs(self):
        seeds = list(range(20))
        plain = coupling_times(ModelParams(200, 0.5, 0.5, 0.5), seeds, 10**7)
        checked = coupling_times(ModelParams(200, 0.5, 0.5, 0.5), seeds, 10**7, check_every=1)
        assert [r.tau for r in plain] == [r.tau for r in checked]
        assert all(r.tau is not None for r in plain)

    def test_batch_matches_single(self):
        params = ModelParams(60, 0.5, 0.5, 0.5)
        batch = coupling_times(params, [5, 6, 7], 10**6)
        assert [r.tau for r in batch] == [coupling_time(params, s, 10**6).tau for s in (5, 6, 7)]

    def test_thread_count_does_not_change_results(self):
        params = ModelParams(80, 0.5, 0.5, 0.5)
        seeds = [rng.derive_seed(3, 80, r) for r in range(16)]
        set_threads(1)
        one = [r.tau for r in coupling_times(params, seeds, 10**6)]
        set_threads(None)
        many = [r.tau for r in coupling_times(params, seeds, 10**6)]
        assert one == many


class TestContraction:
    def test_no_interaction(self):
        for k in (0, 17, 49):
            assert one_step_contraction_exact(ModelParams(50, 0.3, 0.0, 0.0), k) == pytest.approx(1 - 1 / 50, abs=1e-15)

    def test_high_temperature_margin(self):
        params = ModelParams(100, 0.5, 0.5, 0.5)
        delta = (1 - max_update_slope(params)[0]) / 2
        assert one_step_contraction_exact(params, 50) < 1 - delta / 100

    @pytest.mark.parametrize("n", [2, 5, 10])
    def test_matches_enumeration(self, n):
        for p, a1, a2 in [(0.3, 2.0, 1.0), (0.05, 6.0, 0.0), (0.7, 0.5, 9.0)]:
            for k in range(n):
                exact = one_step_contraction_exact(ModelParams(n, p, a1, a2), k)
                assert exact == pytest.approx(contraction_by_enumeration(n, p, a1, a2, k), abs=1e-12)

    @pytest.mark.parametrize("n,k", [(3, 1), (8, 4), (10, 0), (10, 9)])
    def test_monte_carlo(self, n, k):
        params = ModelParams(n, 0.3, 2.0, 1.0)
        mean, se = empirical_contraction(params, k, 10**6, seed=n * 100 + k)
        assert abs(mean - one_step_contraction_exact(params, k)) <= 4 * se

    @settings(max_examples=200)
    @given(st.integers(1, 200), st.floats(0.01, 0.99), st.floats(0, 10), st.floats(0, 10), st.data())
    def test_bounds(self, n, p, a1, a2, data):
        k = data.draw(st.integers(0, n - 1))
        value = one_step_contraction_exact(ModelParams(n, p, a1, a2), k)
        assert 1 - 1 / n - 1e-15 <= value <= 2.0

    def test_domain(self):
        with pytest.raises(DomainError):
            one_step_contraction_exact(ModelParams(5, 0.5, 0.0, 0.0), 5)


class TestBurnIn:
    def test_start_at_fixed_point(self):
        params = ModelParams(1000, 0.5, 0.5, 0.5)
        assert burn_in_time(params, HIGH_FP, seed=0, cap=10).tau0 == 0

    def test_high_temperature_is_fast(self):
        params = ModelParams(1000, 0.5, 0.5, 0.5)
        results = burn_in_times(params, 0.0, list(range(50)), cap=10**8)
        assert all(r.tau0 is not None for r in results)
        assert results[0].c_star == pytest.approx(HIGH_FP, abs=1e-12)
        assert np.mean([r.tau0 for r in results]) <= 10 * 1000

    def test_refuses_low_temperature(self):
        with pytest.raises(DomainError):
            burn_in_time(ModelParams(100, 0.05, 6.0, 0.0), 1.0, seed=0, cap=10)
        r = burn_in_time(ModelParams(100, 0.05, 6.0, 0.0), 1.0, seed=0, cap=10**6, target=LOW_UPPER)
        assert r.tau0 is not None

    def test_critical_accepted(self):
        params = critical_point(0.55).params(250)
        r = burn_in_time(params, 1.0, seed=0, cap=10**8)
        assert r.tau0 is not None and r.c_star == pytest.approx(0.55, abs=1e-4)

    def test_censoring(self):
        r = burn_in_time(ModelParams(1000, 0.5, 0.5, 0.5), 0.0, seed=0, cap=5)
        assert r.tau0 is None and r.cap == 5


class TestDrift:
    def test_positive_below_fixed_point(self):
        d = drift_estimate(ModelParams(1000, 0.5, 0.5, 0.5), 0.2, 10**6, seed=3)
        assert d.exact_drift > 0 and d.mean_drift > 0
        assert abs(d.mean_drift - d.exact_drift) <= 3 * d.std_err
        assert d.replicas == 10**6

    @pytest.mark.parametrize("n", [100, 1000, 10**4])
    def test_vanishes_at_fixed_point(self, n):
        d = drift_estimate(ModelParams(n, 0.5, 0.5, 0.5), HIGH_FP, 10, seed=0)
        assert abs(d.exact_drift) <= 1.0 / n**2

    def test_exact_matches_oracle_kernel(self):
        params = ModelParams(30, 0.2, 3.0, 4.0)
        P = dense_level_kernel(30, 0.2, 3.0, 4.0)
        for c in (0.0, 0.1, 0.5, 1.0):
            k = math.floor(c * 30)
            expected = ((P[k, k + 1] if k < 30 else 0.0) - (P[k, k - 1] if k > 0 else 0.0)) / 30
            assert drift_estimate(params, c, 10, 0).exact_drift == pytest.approx(expected, abs=1e-15)

    def test_asymptotic_is_update_map(self):
        d = drift_estimate(ModelParams(200, 0.3, 2.0, 1.0), 0.4, 10, 0)
        assert d.asymptotic_drift == pytest.approx((lam(0.3, 2.0, 1.0, 0.4) - 0.4) / 200, abs=1e-15)

    def test_domain(self):
        with pytest.raises(DomainError):
            drift_estimate(ModelParams(10, 0.5, 0.0, 0.0), 1.5, 10, 0)


class TestEscape:
    def test_refuses_high_temperature(self):
        with pytest.raises(DomainError):
            mode_escape_time(ModelParams(30, 0.5, 0.5, 0.5), "lower", 0, 10)

    def test_completes_at_small_n(self):
        r = mode_escape_time(ModelParams(30, 0.05, 6.0, 0.0), "lower", 1, 10**9)
        assert r.time is not None and r.time > 0
        assert r.start_level == math.floor(0.077171899544665444 * 30)
        assert r.repellor == pytest.approx(0.47216185296471422, abs=1e-12)

    def test_escape_crosses_repellor(self):
        params = ModelParams(30, 0.05, 6.0, 0.0)
        r = mode_escape_time(params, "upper", 2, 10**9)
        traj = run(params, r.start_level, r.time, seed=2)
        levels = np.round(traj.magnetizations * 30).astype(int)
        assert levels[-1] < 30 * r.repellor
        assert np.all(levels[:-1] > 30 * r.repellor)

    def test_grows_with_n(self):
        means = []
        for n in (30, 45, 60):
            res = mode_escape_times(ModelParams(n, 0.05, 6.0, 0.0), "lower", list(range(20)), 10**9)
            means.append(np.mean([r.time for r in res]))
        assert means[0] < means[1] < means[2]

    def test_bad_side(self):
        with pytest.raises(DomainError):
            mode_escape_time(ModelParams(30, 0.05, 6.0, 0.0), "middle", 0, 10)
