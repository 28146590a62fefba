"""Schedulers: policies that drive a ChainEnv toward its objective.

Every scheduler is an sklearn-style estimator: constructor arguments are
hyperparameters stored verbatim, runtime state lives in trailing-underscore
attributes created by fit().  fit(env, total_steps) runs the control loop
with learning enabled; run(env, steps, learn=False) replays the fitted
policy greedily (controller feedback such as threshold tracking stays
active, learned updates and exploration do not); predict(observations)
maps the latest observations to the next allocation.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .agent import DdpgAgent, select_action
from .env import (ChainEnv, ResourceAllocation, cache_miss_rate,
                  cycles_per_packet)
from .mlp import Mlp
from .replay import LocalBuffer, ParamServer, PrioritizedBuffer, Transition, flush
from .sla import efficiency
from .validation import ensure_fraction, ensure_positive

N_KNOBS = 5


class BaseScheduler(BaseEstimator):
    """Shared control loop; subclasses fill in _setup/_act/_observe."""

    def fit(self, env: ChainEnv, total_steps: int, recorder=None):
        ensure_positive("total_steps", total_steps)
        self._setup(env)
        self.env_ = env
        self.run(env, total_steps, learn=True, recorder=recorder)
        return self

    def run(self, env: ChainEnv, total_steps: int, learn: bool = False,
            recorder=None):
        check_is_fitted(self)
        observations = env.reset()
        for step in range(int(total_steps)):
            allocation = self._act(env, observations, step, learn)
            outcome = env.step(allocation)
            self._observe(env, observations, allocation, outcome, step, learn)
            if recorder is not None:
                recorder(step, allocation, outcome)
            observations = outcome.observations
        return self

    def predict(self, observations) -> ResourceAllocation:
        check_is_fitted(self)
        return self._policy(observations)

    # hooks -------------------------------------------------------------

    def _setup(self, env: ChainEnv) -> None:
        raise NotImplementedError

    def _act(self, env, observations, step, learn) -> ResourceAllocation:
        return self._policy(observations)

    def _observe(self, env, observations, allocation, outcome, step, learn) -> None:
        pass

    def _policy(self, observations) -> ResourceAllocation:
        raise NotImplementedError


class StaticScheduler(BaseScheduler):
    """Holds one fixed allocation; the no-control reference point."""

    def __init__(self, allocation: ResourceAllocation | None = None):
        self.allocation = allocation

    def _setup(self, env: ChainEnv) -> None:
        base = self.allocation if self.allocation is not None else env.default_allocation()
        base.validate(env.ranges)
        self.allocation_ = base.copy()

    def _act(self, env, observations, step, learn):
        return self.allocation_

    def _policy(self, observations):
        return self.allocation_.copy()


# -- threshold heuristic ---------------------------------------------------------


def heuristic_initial_allocation(env: ChainEnv) -> ResourceAllocation:
    """Even startup split: one core per chain, lower-median frequency,
    batch of 2, cache proportional to offered load, DMA ring sized to the
    cache slice."""
    n = env.n_chains
    r = env.ranges
    cores = np.full(n, min(1.0, r.cores_max / n))
    freq_index = (len(r.freq_levels) - 1) // 2
    freq = np.full(n, r.freq_levels[freq_index])
    arrivals = np.array([f.arrival_rate for f in env.flows], dtype=np.float64)
    total = arrivals.sum()
    llc = arrivals / total if total > 0 else np.full(n, 1.0 / n)
    batch = int(np.clip(2, *r.batch_range))
    packet = np.array([f.packet_size for f in env.flows], dtype=np.float64)
    dma = np.clip(llc * r.llc_usable // (packet * batch), *r.dma_desc_range)
    return ResourceAllocation(cores, freq, llc, dma.astype(np.int64),
                              np.full(n, batch, dtype=np.int64))


def heuristic_adjust(freq_index: int, batch: int, lam: float, best_lambda: float,
                     n_levels: int, batch_range, threshold1_fraction: float,
                     threshold2_fraction: float):
    """One feedback tick: track the best efficiency seen, drop frequency and
    grow the batch when efficiency sags below its thresholds, push the other
    way otherwise.  Returns (freq_index, batch, best_lambda)."""
    best_lambda = max(best_lambda, lam)
    if lam < threshold1_fraction * best_lambda:
        freq_index = max(freq_index - 1, 0)
    else:
        freq_index = min(freq_index + 1, n_levels - 1)
    if lam < threshold2_fraction * best_lambda:
        batch = min(batch + 1, batch_range[1])
    else:
        batch = max(batch - 1, batch_range[0])
    return freq_index, batch, best_lambda


class HeuristicScheduler(BaseScheduler):
    """Reactive controller: efficiency-threshold feedback on frequency and
    batch size over a fixed startup core/cache split."""

    def __init__(self, threshold1_fraction: float = 0.5,
                 threshold2_fraction: float = 0.75):
        self.threshold1_fraction = threshold1_fraction
        self.threshold2_fraction = threshold2_fraction

    def _setup(self, env: ChainEnv) -> None:
        ensure_fraction("threshold1_fraction", self.threshold1_fraction)
        ensure_fraction("threshold2_fraction", self.threshold2_fraction)
        self.allocation_ = heuristic_initial_allocation(env)
        self.freq_index_ = (len(env.ranges.freq_levels) - 1) // 2
        self.batch_ = int(self.allocation_.batch[0])
        self.best_lambda_ = 0.0

    def _act(self, env, observations, step, learn):
        return self.allocation_

    def _observe(self, env, observations, allocation, outcome, step, learn):
        # threshold feedback is part of the controller, not of learning:
        # it stays active during greedy evaluation runs
        lam = efficiency(outcome.observations)
        self.freq_index_, self.batch_, self.best_lambda_ = heuristic_adjust(
            self.freq_index_, self.batch_, lam, self.best_lambda_,
            len(env.ranges.freq_levels), env.ranges.batch_range,
            self.threshold1_fraction, self.threshold2_fraction)
        self.allocation_.freq_hz[:] = env.ranges.freq_levels[self.freq_index_]
        self.allocation_.batch[:] = self.batch_

    def _policy(self, observations):
        return self.allocation_.copy()


# -- tabular Q-learning ------------------------------------------------------------


class QTable:
    """Dense (state bin, joint action bin) value table with epsilon-greedy
    selection and the one-step Watkins update."""

    def __init__(self, n_states: int, action_shape, epsilon: float = 0.1,
                 lr: float = 0.1, discount: float = 0.9):
        ensure_positive("n_states", n_states)
        ensure_fraction("epsilon", epsilon)
        ensure_fraction("lr", lr)
        ensure_fraction("discount", discount)
        self.action_shape = tuple(int(k) for k in action_shape)
        if any(k < 1 for k in self.action_shape):
            raise ValueError("action_shape entries must be >= 1")
        self.n_actions = int(np.prod(self.action_shape))
        self.values = np.zeros((int(n_states), self.n_actions))
        self.epsilon = float(epsilon)
        self.lr = float(lr)
        self.discount = float(discount)

    def greedy(self, state: int) -> int:
        return int(np.argmax(self.values[state]))  # ties -> lowest index

    def select(self, state: int, rng: np.random.Generator) -> int:
        if rng.random() < self.epsilon:
            return int(rng.integers(self.n_actions))
        return self.greedy(state)

    def update(self, state: int, action: int, reward: float, next_state: int) -> None:
        best_next = float(np.max(self.values[next_state]))
        td = reward + self.discount * best_next - self.values[state, action]
        self.values[state, action] += self.lr * td


class QLearningScheduler(BaseScheduler):
    """Tabular control over a discretized knob grid.

    Observations are binned per chain into state indices; each chain picks
    a joint combination of knob levels from a single table shared across
    chains.  Level grids span the raw action box and go through the same
    projection as the continuous policy.
    """

    def __init__(self, k_levels: int = 5, state_bins: int = 4,
                 epsilon: float = 0.1, epsilon_decay: float = 0.9995,
                 lr: float = 0.1, discount: float = 0.9, seed: int = 0):
        self.k_levels = k_levels
        self.state_bins = state_bins
        self.epsilon = epsilon
        self.epsilon_decay = epsilon_decay
        self.lr = lr
        self.discount = discount
        self.seed = seed

    def _setup(self, env: ChainEnv) -> None:
        ensure_positive("k_levels", self.k_levels)
        ensure_positive("state_bins", self.state_bins)
        n_states = int(self.state_bins) ** 4
        self.table_ = QTable(n_states, (self.k_levels,) * N_KNOBS,
                             self.epsilon, self.lr, self.discount)
        self.grid_ = np.linspace(-1.0, 1.0, int(self.k_levels))
        self.rng_ = np.random.default_rng(self.seed)
        self.pending_ = None  # (state index, action index) per chain

    def _bin_states(self, env: ChainEnv, observations) -> np.ndarray:
        features = env.state_vector(observations).reshape(env.n_chains, 4)
        bins = np.minimum((features * self.state_bins).astype(np.int64),
                          self.state_bins - 1)
        weights = self.state_bins ** np.arange(4)
        return bins @ weights

    def _raw_action(self, action_indices) -> np.ndarray:
        levels = np.stack(np.unravel_index(action_indices, self.table_.action_shape),
                          axis=1)
        return self.grid_[levels].ravel()

    def _act(self, env, observations, step, learn):
        states = self._bin_states(env, observations)
        if learn:
            actions = np.array([self.table_.select(s, self.rng_) for s in states])
        else:
            actions = np.array([self.table_.greedy(s) for s in states])
        self.pending_ = (states, actions)
        return env.project_action(self._raw_action(actions))

    def _observe(self, env, observations, allocation, outcome, step, learn):
        if not learn or self.pending_ is None:
            return
        states, actions = self.pending_
        next_states = self._bin_states(env, outcome.observations)
        for s, a, s2 in zip(states, actions, next_states):
            self.table_.update(int(s), int(a), outcome.reward, int(s2))
        self.table_.epsilon *= self.epsilon_decay

    def _policy(self, observations):
        env = self.env_
        states = self._bin_states(env, observations)
        actions = np.array([self.table_.greedy(s) for s in states])
        return env.project_action(self._raw_action(actions))


# -- frequency governor with traffic forecasting ----------------------------------


class DesPredictor:
    """Double exponential smoothing: level plus trend, seeded from the first
    sample (level = x0, trend = 0)."""

    def __init__(self, alpha: float, beta: float):
        if not 0.0 < alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")
        if not 0.0 <= beta < 1.0:
            raise ValueError("beta must lie in [0, 1)")
        self.alpha = float(alpha)
        self.beta = float(beta)
        self.level = None
        self.trend = 0.0

    def update(self, x: float) -> float:
        """Fold in one sample; returns the one-step forecast."""
        x = float(x)
        if self.level is None:
            self.level = x
            self.trend = 0.0
        else:
            prev = self.level
            self.level = self.alpha * x + (1.0 - self.alpha) * (prev + self.trend)
            self.trend = self.beta * (self.level - prev) + (1.0 - self.beta) * self.trend
        return self.forecast

    @property
    def forecast(self) -> float:
        if self.level is None:
            raise ValueError("predictor has no samples yet")
        return self.level + self.trend


class EePstateScheduler(BaseScheduler):
    """Per-chain frequency governor: forecast each chain's arrival rate and
    pick the lowest frequency level whose service capacity covers it (the
    top level when none does).  All other knobs stay at their defaults."""

    def __init__(self, alpha_s: float = 0.5, beta_s: float = 0.3):
        self.alpha_s = alpha_s
        self.beta_s = beta_s

    def _setup(self, env: ChainEnv) -> None:
        self.allocation_ = env.default_allocation()
        self.predictors_ = [DesPredictor(self.alpha_s, self.beta_s)
                            for _ in range(env.n_chains)]

    def _chain_capacity_pps(self, env: ChainEnv, i: int, freq_hz: float) -> float:
        alloc = self.allocation_
        flow = env.flows[i]
        miss = cache_miss_rate(alloc.llc_frac[i], alloc.dma[i], alloc.batch[i],
                               flow.packet_size, env.ranges, env.constants)
        cpp = cycles_per_packet(alloc.batch[i], miss, flow.chain_length,
                                env.constants)
        return float(alloc.cores[i]) * freq_hz / float(cpp)

    def _act(self, env, observations, step, learn):
        return self.allocation_

    def _observe(self, env, observations, allocation, outcome, step, learn):
        for i, obs in enumerate(outcome.observations):
            forecast = self.predictors_[i].update(obs.arrival_rate)
            chosen = env.ranges.freq_levels[-1]
            for level in env.ranges.freq_levels:
                if self._chain_capacity_pps(env, i, level) >= forecast:
                    chosen = level
                    break
            self.allocation_.freq_hz[i] = chosen

    def _policy(self, observations):
        return self.allocation_.copy()


# -- continuous actor-critic scheduler --------------------------------------------


@dataclass
class _ActorSlot:
    """Per-worker acting state: own environment stream, policy snapshot,
    noise source, staging buffer."""
    env: ChainEnv
    net: Mlp
    rng: np.random.Generator
    local: LocalBuffer
    observations: list = field(default_factory=list)
    version: int = 0
    steps: int = 0


class DdpgScheduler(BaseScheduler):
    """Actor-critic scheduler with prioritized replay.

    fit() runs the full acting/learning pipeline: one or more acting workers
    fill a central prioritized buffer through local staging buffers, a
    single learner samples, trains, refreshes priorities, and periodically
    publishes policy parameters the workers fetch.  With threaded=False the
    workers interleave round-robin on one thread and the run is exactly
    reproducible; threaded=True trades that for wall-clock overlap.
    """

    def __init__(self, hidden=(64, 64), gamma: float = 0.99, tau: float = 0.005,
                 actor_lr: float = 1e-4, critic_lr: float = 1e-3,
                 batch_size: int = 64, buffer_capacity: int = 100_000,
                 alpha: float = 0.6, beta0: float = 0.4, beta_final: float = 1.0,
                 eps_priority: float = 1e-3, noise_scale: float = 0.3,
                 noise_decay: float = 0.999, episode_len: int = 200,
                 warmup: int = 1000, train_every: int = 1,
                 flush_threshold: int = 100, fetch_every: int = 200,
                 publish_every: int = 50, evict_every: int = 10_000,
                 evict_keep: float = 0.9, num_actors: int = 1,
                 threaded: bool = False, reward_scale: float = 1.0,
                 replay_recorder=None, seed: int = 0):
        self.hidden = hidden
        self.gamma = gamma
        self.tau = tau
        self.actor_lr = actor_lr
        self.critic_lr = critic_lr
        self.batch_size = batch_size
        self.buffer_capacity = buffer_capacity
        self.alpha = alpha
        self.beta0 = beta0
        self.beta_final = beta_final
        self.eps_priority = eps_priority
        self.noise_scale = noise_scale
        self.noise_decay = noise_decay
        self.episode_len = episode_len
        self.warmup = warmup
        self.train_every = train_every
        self.flush_threshold = flush_threshold
        self.fetch_every = fetch_every
        self.publish_every = publish_every
        self.evict_every = evict_every
        self.evict_keep = evict_keep
        self.num_actors = num_actors
        self.threaded = threaded
        self.reward_scale = reward_scale
        self.replay_recorder = replay_recorder
        self.seed = seed

    # setup ----------------------------------------------------------------

    def _setup(self, env: ChainEnv) -> None:
        ensure_positive("num_actors", self.num_actors)
        ensure_positive("batch_size", self.batch_size)
        ensure_positive("episode_len", self.episode_len)
        self.agent_ = DdpgAgent(
            env.state_dim, env.action_dim, hidden=self.hidden, gamma=self.gamma,
            tau=self.tau, actor_lr=self.actor_lr, critic_lr=self.critic_lr,
            noise_scale=self.noise_scale, noise_decay=self.noise_decay,
            reward_scale=self.reward_scale, seed=self.seed)
        self.buffer_ = PrioritizedBuffer(
            int(self.buffer_capacity), alpha=self.alpha, beta=self.beta0,
            eps_priority=self.eps_priority, seed=self.seed + 1)
        self.server_ = ParamServer()
        self.server_.publish(self.agent_.actor_snapshot())
        self.learner_steps_ = 0
        self.global_step_ = 0

    def _make_slots(self, env: ChainEnv) -> list[_ActorSlot]:
        seeds = np.random.SeedSequence(self.seed + 2).spawn(self.num_actors)
        slots = []
        for i, seq in enumerate(seeds):
            worker_env = env.clone(seed=env.seed + i)
            version, params = self.server_.fetch()
            slots.append(_ActorSlot(
                env=worker_env,
                net=self.agent_.spawn_actor_net(params),
                rng=np.random.default_rng(seq),
                local=LocalBuffer(int(self.flush_threshold)),
                observations=worker_env.reset(),
                version=version,
            ))
        return slots

    def _sigma(self, global_step: int) -> float:
        return self.noise_scale * self.noise_decay ** (global_step // self.episode_len)

    # acting and learning ----------------------------------------------------

    def _actor_tick(self, slot: _ActorSlot, global_step: int, recorder, lock=None):
        state = slot.env.state_vector(slot.observations)
        raw = select_action(slot.net, state, self._sigma(global_step), slot.rng)
        allocation = slot.env.project_action(raw)
        outcome = slot.env.step(allocation)
        next_state = slot.env.state_vector(outcome.observations)
        slot.local.append(Transition(state, raw, outcome.reward, next_state))
        if slot.local.full:
            flush(slot.local, self.buffer_)
        slot.observations = outcome.observations
        slot.steps += 1
        if slot.steps % self.fetch_every == 0:
            fetched = self.server_.fetch()
            if fetched is not None and fetched[0] > slot.version:
                slot.version = fetched[0]
                slot.net.params[:] = fetched[1]
        if recorder is not None:
            if lock is None:
                recorder(global_step, allocation, outcome)
            else:
                with lock:
                    recorder(global_step, allocation, outcome)

    def _learner_tick(self, total_steps: int) -> bool:
        if (self.global_step_ < self.warmup
                or self.buffer_.stats()["size"] < self.batch_size):
            return False
        horizon = max(1, total_steps - self.warmup)
        frac = min(1.0, self.learner_steps_ / horizon)
        self.buffer_.beta = self.beta0 + (self.beta_final - self.beta0) * frac
        batch = self.buffer_.sample(int(self.batch_size))
        stats = self.agent_.train_step(batch)
        self.buffer_.update_priorities(batch.indices, stats.td_abs, batch.stamps)
        self.learner_steps_ += 1
        if self.learner_steps_ % self.publish_every == 0:
            self.server_.publish(self.agent_.actor_snapshot())
        if self.evict_every and self.learner_steps_ % self.evict_every == 0:
            self.buffer_.evict_old(self.evict_keep)
        if self.replay_recorder is not None and self.learner_steps_ % 1000 == 0:
            self.replay_recorder(self.learner_steps_, self.buffer_.stats())
        return True

    def fit(self, env: ChainEnv, total_steps: int, recorder=None):
        ensure_positive("total_steps", total_steps)
        self._setup(env)
        self.env_ = env
        if self.threaded and self.num_actors > 1:
            self._fit_threaded(env, int(total_steps), recorder)
        else:
            self._fit_serial(env, int(total_steps), recorder)
        # final parameters visible to any late reader
        self.server_.publish(self.agent_.actor_snapshot())
        return self

    def _fit_serial(self, env: ChainEnv, total_steps: int, recorder) -> None:
        slots = self._make_slots(env)
        for step in range(total_steps):
            self._actor_tick(slots[step % len(slots)], step, recorder)
            self.global_step_ = step + 1
            if step % self.train_every == 0:
                self._learner_tick(total_steps)

    def _fit_threaded(self, env: ChainEnv, total_steps: int, recorder) -> None:
        slots = self._make_slots(env)
        counter_lock = threading.Lock()
        record_lock = threading.Lock()
        done = threading.Event()
        errors: list[BaseException] = []

        def acting_loop(slot: _ActorSlot):
            try:
                while not done.is_set():
                    with counter_lock:
                        if self.global_step_ >= total_steps:
                            return
                        step = self.global_step_
                        self.global_step_ += 1
                    self._actor_tick(slot, step, recorder, lock=record_lock)
            except BaseException as exc:  # propagate into the caller
                errors.append(exc)
                done.set()

        def learning_loop():
            try:
                while not done.is_set():
                    with counter_lock:
                        finished = self.global_step_ >= total_steps
                    if not self._learner_tick(total_steps) and finished:
                        return
            except BaseException as exc:
                errors.append(exc)
                done.set()

        threads = [threading.Thread(target=acting_loop, args=(slot,), daemon=True)
                   for slot in slots]
        learner = threading.Thread(target=learning_loop, daemon=True)
        for t in threads:
            t.start()
        learner.start()
        for t in threads:
            t.join()
        done.set()
        learner.join()
        if errors:
            raise errors[0]

    # greedy interface ---------------------------------------------------------

    def _act(self, env, observations, step, learn):
        # run() is evaluation only for this scheduler; training goes via fit()
        return self._policy_for(env, observations)

    def _policy_for(self, env: ChainEnv, observations) -> ResourceAllocation:
        state = env.state_vector(observations)
        raw = self.agent_.actor.forward(state)
        return env.project_action(raw)

    def _policy(self, observations):
        return self._policy_for(self.env_, observations)
