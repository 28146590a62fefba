"""Controller behavior: startup splits, feedback rules, tabular learning,
forecasting governor, and the estimator API surface."""

import numpy as np
import pytest
from sklearn.base import clone as clone_estimator
from sklearn.exceptions import NotFittedError

from nfsched.env import ChainEnv, FlowSpec, KnobRanges, ResourceAllocation
from nfsched.schedulers import (DdpgScheduler, DesPredictor, EePstateScheduler,
                                HeuristicScheduler, QLearningScheduler, QTable,
                                StaticScheduler, heuristic_adjust,
                                heuristic_initial_allocation)
from nfsched.sla import EnergyEfficiency


def small_env(seed=0, **kwargs):
    flows = kwargs.pop("flows", [FlowSpec(2e6, 1518, 3), FlowSpec(1e6, 512, 2)])
    kwargs.setdefault("sla", EnergyEfficiency())
    return ChainEnv(flows, seed=seed, **kwargs)


class TestHeuristicInit:
    def test_dma_sized_from_cache_slice(self):
        # one flow owns the whole usable cache: 524288 bytes over 512 B
        # packets in batches of 2 -> 512 descriptors
        ranges = KnobRanges(llc_total=524_288, llc_ddio_reserved=0.0)
        env = ChainEnv([FlowSpec(1e6, 512, 3)], ranges=ranges)
        alloc = heuristic_initial_allocation(env)
        assert alloc.dma[0] == 512
        assert alloc.batch[0] == 2
        assert alloc.llc_frac[0] == 1.0

    def test_llc_proportional_to_arrivals(self):
        env = ChainEnv([FlowSpec(13e6, 64, 3), FlowSpec(1e6, 64, 3)])
        alloc = heuristic_initial_allocation(env)
        np.testing.assert_allclose(alloc.llc_frac, [13 / 14, 1 / 14], rtol=1e-12)

    def test_lower_median_frequency(self):
        levels = tuple(1.2e9 + 0.1e9 * i for i in range(9))
        env = ChainEnv([FlowSpec(1e6)], ranges=KnobRanges(freq_levels=levels))
        alloc = heuristic_initial_allocation(env)
        assert alloc.freq_hz[0] == levels[4]

    def test_one_core_each_and_valid(self):
        env = small_env()
        alloc = heuristic_initial_allocation(env)
        np.testing.assert_array_equal(alloc.cores, [1.0, 1.0])
        alloc.validate(env.ranges)

    def test_cores_shrink_when_chains_exceed_budget(self):
        flows = [FlowSpec(1e6) for _ in range(20)]
        env = ChainEnv(flows, ranges=KnobRanges(cores_max=16))
        alloc = heuristic_initial_allocation(env)
        np.testing.assert_allclose(alloc.cores, np.full(20, 0.8))
        alloc.validate(env.ranges)


def reference_adjust(freq_index, batch, lam, best, n_levels, batch_range, f1, f2):
    """Independently written mirror of the feedback rule, kept as an oracle."""
    if lam > best:
        best = lam
    threshold1 = f1 * best
    threshold2 = f2 * best
    if lam < threshold1:
        freq_index = freq_index - 1
        if freq_index < 0:
            freq_index = 0
    else:
        freq_index = freq_index + 1
        if freq_index > n_levels - 1:
            freq_index = n_levels - 1
    if lam < threshold2:
        batch = batch + 1
        if batch > batch_range[1]:
            batch = batch_range[1]
    else:
        batch = batch - 1
        if batch < batch_range[0]:
            batch = batch_range[0]
    return freq_index, batch, best


class TestHeuristicAdjust:
    def test_clamped_at_lowest_frequency(self):
        freq, batch, best = heuristic_adjust(0, 5, 0.1, 100.0, 10, (1, 256), 0.5, 0.75)
        assert freq == 0
        assert batch == 6  # low efficiency also grows the batch

    def test_batch_decrements_when_efficiency_healthy(self):
        freq, batch, best = heuristic_adjust(3, 2, 10.0, 10.0, 10, (1, 256), 0.5, 0.75)
        assert batch == 1
        assert freq == 4

    def test_matches_independent_transcription(self):
        rng = np.random.default_rng(77)
        for _ in range(100):
            n_levels = int(rng.integers(2, 12))
            batch_range = (1, int(rng.integers(2, 300)))
            freq = int(rng.integers(0, n_levels))
            batch = int(rng.integers(batch_range[0], batch_range[1] + 1))
            lam = float(rng.uniform(0, 50))
            best = float(rng.uniform(0, 50))
            f1 = float(rng.uniform(0, 1))
            f2 = float(rng.uniform(0, 1))
            got = heuristic_adjust(freq, batch, lam, best, n_levels, batch_range, f1, f2)
            want = reference_adjust(freq, batch, lam, best, n_levels, batch_range, f1, f2)
            assert got == want

    def test_trajectory_matches_transcription(self):
        rng = np.random.default_rng(78)
        n_levels, batch_range = 10, (1, 64)
        ours = (4, 2, 0.0)
        ref = (4, 2, 0.0)
        for lam in rng.uniform(0, 20, size=100):
            ours = heuristic_adjust(*ours[:2], float(lam), ours[2], n_levels,
                                    batch_range, 0.5, 0.75)
            ref = reference_adjust(*ref[:2], float(lam), ref[2], n_levels,
                                   batch_range, 0.5, 0.75)
            assert ours == ref


class TestHeuristicScheduler:
    def test_only_frequency_and_batch_move(self):
        env = small_env()
        seen = []
        sched = HeuristicScheduler().fit(env, 50, recorder=lambda s, a, o: seen.append(a.copy()))
        assert len(seen) == 50
        init = heuristic_initial_allocation(env)
        for alloc in seen:
            alloc.validate(env.ranges)
            np.testing.assert_array_equal(alloc.cores, init.cores)
            np.testing.assert_array_equal(alloc.llc_frac, init.llc_frac)
            np.testing.assert_array_equal(alloc.dma, init.dma)
        assert sched.best_lambda_ > 0

    def test_feedback_continues_without_learning(self):
        env = small_env()
        sched = HeuristicScheduler().fit(env, 10)
        before = (sched.freq_index_, sched.batch_)
        sched.run(env.clone(), 25, learn=False)
        assert (sched.freq_index_, sched.batch_) != before or sched.best_lambda_ > 0


class TestQTable:
    def test_single_update_arithmetic(self):
        table = QTable(1, (2,), epsilon=0.0, lr=0.5, discount=0.0)
        table.update(0, 0, 1.0, 0)
        assert table.values[0, 0] == pytest.approx(0.5)

    def test_zero_learning_rate_freezes_table(self):
        table = QTable(1, (2,), epsilon=0.0, lr=0.0, discount=0.9)
        table.update(0, 1, 5.0, 0)
        assert np.all(table.values == 0.0)

    def test_greedy_ties_break_low(self):
        table = QTable(1, (3,), epsilon=0.0)
        assert table.greedy(0) == 0

    def test_toy_greedy_matches_brute_force(self):
        # two knobs with three levels each, fixed reward per combination
        rewards = np.array([[0.1, 0.8, 0.3],
                            [0.9, 0.2, 0.5],
                            [0.4, 0.7, 0.6]])
        table = QTable(1, (3, 3), epsilon=0.1, lr=0.1, discount=0.9)
        rng = np.random.default_rng(123)
        for _ in range(100_000):
            action = table.select(0, rng)
            i, j = np.unravel_index(action, (3, 3))
            table.update(0, action, rewards[i, j], 0)
        best = np.unravel_index(table.greedy(0), (3, 3))
        brute = np.unravel_index(np.argmax(rewards), rewards.shape)
        assert best == brute

    def test_validation(self):
        with pytest.raises(ValueError):
            QTable(0, (3,))
        with pytest.raises(ValueError):
            QTable(4, (0, 3))
        with pytest.raises(ValueError):
            QTable(4, (3,), epsilon=1.5)


class TestQLearningScheduler:
    def test_fit_updates_table_and_decays_epsilon(self):
        env = small_env()
        sched = QLearningScheduler(seed=1).fit(env, 200)
        assert np.any(sched.table_.values != 0.0)
        assert sched.table_.epsilon == pytest.approx(0.1 * 0.9995 ** 200, rel=1e-9)

    def test_greedy_run_leaves_table_untouched(self):
        env = small_env()
        sched = QLearningScheduler(seed=1).fit(env, 100)
        frozen = sched.table_.values.copy()
        eps = sched.table_.epsilon
        sched.run(env.clone(), 50, learn=False)
        np.testing.assert_array_equal(sched.table_.values, frozen)
        assert sched.table_.epsilon == eps

    def test_predict_returns_valid_allocation(self):
        env = small_env()
        sched = QLearningScheduler(seed=2).fit(env, 50)
        alloc = sched.predict(env.reset())
        alloc.validate(env.ranges)

    def test_actions_span_grid_extremes(self):
        sched = QLearningScheduler(k_levels=5)
        env = small_env()
        sched.fit(env, 1)
        raw = sched._raw_action(np.array([0, sched.table_.n_actions - 1]))
        assert raw.min() == -1.0 and raw.max() == 1.0


class TestDesPredictor:
    def test_constant_series_is_fixed_point(self):
        p = DesPredictor(0.5, 0.3)
        for _ in range(20):
            forecast = p.update(7.0)
        assert forecast == pytest.approx(7.0, abs=1e-12)
        assert p.trend == pytest.approx(0.0, abs=1e-12)

    def test_zero_beta_reduces_to_single_smoothing(self):
        rng = np.random.default_rng(5)
        series = rng.uniform(0, 10, size=50)
        p = DesPredictor(0.3, 0.0)
        level = None
        for x in series:
            got = p.update(x)
            level = x if level is None else 0.3 * x + 0.7 * level
            assert got == pytest.approx(level, rel=1e-12)
            assert p.trend == 0.0

    def test_ramp_tracking_improves_with_alpha(self):
        def lag(alpha, steps=50):
            p = DesPredictor(alpha, 0.3)
            for t in range(steps):
                forecast = p.update(float(t))
            return abs(forecast - steps)  # error against the next ramp value

        assert lag(0.9) < lag(0.5)
        assert lag(0.5, steps=400) < 0.5  # converges on a perfect ramp

    def test_validation(self):
        with pytest.raises(ValueError):
            DesPredictor(0.0, 0.3)
        with pytest.raises(ValueError):
            DesPredictor(1.0, 0.3)
        with pytest.raises(ValueError):
            DesPredictor(0.5, 1.0)
        DesPredictor(0.5, 0.0)  # trendless variant stays constructible
        with pytest.raises(ValueError):
            DesPredictor(0.5, 0.3).forecast


class TestEePstateScheduler:
    def test_overload_pins_max_frequency(self):
        env = ChainEnv([FlowSpec(50e6, 64, 3)], sla=EnergyEfficiency())
        sched = EePstateScheduler().fit(env, 5)
        assert sched.allocation_.freq_hz[0] == env.ranges.freq_max

    def test_light_load_settles_on_lowest_cover(self):
        env = ChainEnv([FlowSpec(1e5, 64, 3)], sla=EnergyEfficiency())
        sched = EePstateScheduler().fit(env, 10)
        chosen = sched.allocation_.freq_hz[0]
        assert chosen == env.ranges.freq_levels[0]
        # and that level really covers the offered load
        assert sched._chain_capacity_pps(env, 0, chosen) >= 1e5

    def test_only_frequency_changes(self):
        env = small_env()
        default = env.default_allocation()
        sched = EePstateScheduler().fit(env, 30)
        np.testing.assert_array_equal(sched.allocation_.cores, default.cores)
        np.testing.assert_array_equal(sched.allocation_.llc_frac, default.llc_frac)
        np.testing.assert_array_equal(sched.allocation_.dma, default.dma)
        np.testing.assert_array_equal(sched.allocation_.batch, default.batch)


class TestStaticScheduler:
    def test_holds_default_allocation(self):
        env = small_env()
        seen = []
        StaticScheduler().fit(env, 5, recorder=lambda s, a, o: seen.append(a))
        default = env.default_allocation()
        for alloc in seen:
            np.testing.assert_array_equal(alloc.as_matrix(), default.as_matrix())

    def test_explicit_allocation_honored(self):
        env = small_env()
        alloc = env.default_allocation()
        alloc.batch[:] = 16
        sched = StaticScheduler(allocation=alloc).fit(env, 3)
        assert np.all(sched.predict(env.reset()).batch == 16)

    def test_invalid_allocation_rejected(self):
        env = small_env()
        alloc = env.default_allocation()
        alloc.cores[:] = 100.0
        with pytest.raises(ValueError):
            StaticScheduler(allocation=alloc).fit(env, 3)


class TestDdpgScheduler:
    def make(self, **overrides):
        params = dict(hidden=(16, 16), batch_size=16, warmup=50,
                      flush_threshold=10, fetch_every=20, publish_every=5,
                      episode_len=50, buffer_capacity=2000, seed=3)
        params.update(overrides)
        return DdpgScheduler(**params)

    def test_serial_fit_trains_and_predicts(self):
        env = small_env(seed=9)
        steps = []
        sched = self.make().fit(env, 300, recorder=lambda s, a, o: steps.append(s))
        assert steps == list(range(300))
        assert sched.learner_steps_ > 0
        assert sched.buffer_.stats()["size"] > 0
        sched.predict(env.reset()).validate(env.ranges)

    def test_serial_fit_is_reproducible(self):
        env = small_env(seed=9)
        a = self.make().fit(env.clone(), 250)
        b = self.make().fit(env.clone(), 250)
        np.testing.assert_array_equal(a.agent_.actor.params, b.agent_.actor.params)
        np.testing.assert_array_equal(a.agent_.critic.params, b.agent_.critic.params)

    def test_noise_schedule_decays_per_episode(self):
        sched = self.make(noise_scale=0.3, noise_decay=0.5, episode_len=100)
        assert sched._sigma(0) == 0.3
        assert sched._sigma(99) == 0.3
        assert sched._sigma(100) == 0.15
        assert sched._sigma(250) == 0.075

    def test_greedy_run_is_deterministic(self):
        env = small_env(seed=9)
        sched = self.make().fit(env, 200)
        rewards = [[], []]
        for bucket in rewards:
            sched.run(env.clone(), 30, learn=False,
                      recorder=lambda s, a, o, b=bucket: b.append(o.reward))
        assert rewards[0] == rewards[1]

    def test_threaded_fit_completes(self):
        env = small_env(seed=9)
        counted = []
        sched = self.make(num_actors=2, threaded=True).fit(
            env, 400, recorder=lambda s, a, o: counted.append(s))
        assert len(counted) == 400
        assert sorted(counted) == list(range(400))
        assert sched.learner_steps_ > 0

    def test_actor_count_validation(self):
        with pytest.raises(ValueError):
            self.make(num_actors=0).fit(small_env(), 10)


class TestEstimatorApi:
    SCHEDULERS = [StaticScheduler(), HeuristicScheduler(),
                  QLearningScheduler(), EePstateScheduler(),
                  DdpgScheduler()]

    @pytest.mark.parametrize("sched", SCHEDULERS, ids=lambda s: type(s).__name__)
    def test_params_round_trip_through_clone(self, sched):
        twin = clone_estimator(sched)
        assert twin.get_params() == sched.get_params()

    @pytest.mark.parametrize("sched", SCHEDULERS, ids=lambda s: type(s).__name__)
    def test_predict_before_fit_raises(self, sched):
        env = small_env()
        with pytest.raises(NotFittedError):
            clone_estimator(sched).predict(env.reset())

    def test_set_params(self):
        sched = HeuristicScheduler().set_params(threshold1_fraction=0.4)
        assert sched.threshold1_fraction == 0.4
