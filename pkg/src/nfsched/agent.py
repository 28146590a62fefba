"""Deterministic-policy actor-critic learner over flat parameter vectors.

The actor maps a normalized observation vector to a raw action in [-1, 1]^d;
the critic scores (state, action) pairs.  Training follows the usual pattern:
one-step bootstrapped targets from slow-moving target copies, importance
weights from prioritized replay on the critic loss, a deterministic policy
gradient for the actor, and Polyak averaging into the targets.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mlp import AdamState, Mlp, apply_update, soft_update
from .replay import Minibatch
from .validation import ensure_fraction, ensure_positive


class NumericsError(RuntimeError):
    """Raised when a training step encounters non-finite numbers."""


@dataclass
class TrainStats:
    critic_loss: float
    td_abs: np.ndarray

    @property
    def mean_td(self) -> float:
        return float(self.td_abs.mean())


def select_action(actor: Mlp, state, noise_scale: float, rng: np.random.Generator,
                  explore: bool = True) -> np.ndarray:
    """Policy output plus (optionally) Gaussian exploration, clipped to the
    raw action box."""
    action = np.asarray(actor.forward(state), dtype=np.float64)
    if explore:
        action = action + rng.normal(0.0, noise_scale, size=action.shape)
    return np.clip(action, -1.0, 1.0)


def policy_objective_gradient(actor: Mlp, states: np.ndarray, q_fn):
    """Gradient of J = mean_i Q(x_i, mu(x_i)) in the actor parameters.

    q_fn(states, actions) must return (values (n,), dvalues/daction (n, d)).
    Returns (gradient, J).
    """
    states = np.atleast_2d(np.asarray(states, dtype=np.float64))
    actions = np.atleast_2d(actor.forward(states))
    values, dq_da = q_fn(states, actions)
    values = np.asarray(values, dtype=np.float64).ravel()
    dq_da = np.asarray(dq_da, dtype=np.float64)
    if dq_da.shape != actions.shape:
        raise ValueError("q_fn action gradient shape mismatch")
    n = states.shape[0]
    grad, _ = actor.backward(states, dq_da / n)
    return grad, float(values.mean())


class DdpgAgent:
    """Actor-critic pair with target copies and per-network Adam state."""

    def __init__(self, state_dim: int, action_dim: int, hidden=(64, 64),
                 gamma: float = 0.99, tau: float = 0.005,
                 actor_lr: float = 1e-4, critic_lr: float = 1e-3,
                 noise_scale: float = 0.3, noise_decay: float = 0.999,
                 reward_scale: float = 1.0, seed: int = 0):
        ensure_positive("state_dim", state_dim)
        ensure_positive("action_dim", action_dim)
        ensure_fraction("gamma", gamma)
        ensure_fraction("tau", tau)
        self.state_dim = int(state_dim)
        self.action_dim = int(action_dim)
        self.hidden = tuple(int(h) for h in hidden)
        self.gamma = float(gamma)
        self.tau = float(tau)
        self.noise_scale = float(noise_scale)
        self.noise_decay = float(noise_decay)
        self.reward_scale = float(reward_scale)

        init_rng, self.noise_rng = (
            np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(2)
        )
        actor_sizes = (self.state_dim, *self.hidden, self.action_dim)
        critic_sizes = (self.state_dim + self.action_dim, *self.hidden, 1)
        self.actor = Mlp.initialize(actor_sizes, "tanh", init_rng)
        self.critic = Mlp.initialize(critic_sizes, "identity", init_rng)
        self.target_actor = self.actor.copy()
        self.target_critic = self.critic.copy()
        self.actor_opt = AdamState(self.actor.param_count, lr=actor_lr)
        self.critic_opt = AdamState(self.critic.param_count, lr=critic_lr)

    # -- acting ----------------------------------------------------------------

    def select_action(self, state, explore: bool = True,
                      rng: np.random.Generator | None = None) -> np.ndarray:
        return select_action(self.actor, state, self.noise_scale,
                             self.noise_rng if rng is None else rng, explore)

    def decay_noise(self) -> None:
        self.noise_scale *= self.noise_decay

    # -- learning ----------------------------------------------------------------

    def _check_batch(self, batch: Minibatch) -> None:
        if batch.states.shape[1] != self.state_dim:
            raise ValueError("batch state dimension mismatch")
        if batch.actions.shape[1] != self.action_dim:
            raise ValueError("batch action dimension mismatch")

    def critic_targets(self, batch: Minibatch) -> np.ndarray:
        """One-step bootstrapped targets from the target networks."""
        self._check_batch(batch)
        next_actions = self.target_actor.forward(batch.next_states)
        xa = np.hstack([batch.next_states, next_actions])
        next_q = self.target_critic.forward(xa).ravel()
        keep = 1.0 - batch.terminals.astype(np.float64)
        return batch.rewards * self.reward_scale + self.gamma * keep * next_q

    def _critic_q_fn(self):
        critic = self.critic
        sd = self.state_dim

        def q_fn(states, actions):
            xa = np.hstack([states, actions])
            values = critic.forward(xa).ravel()
            _, input_grad = critic.backward(xa, np.ones((xa.shape[0], 1)))
            return values, input_grad[:, sd:]

        return q_fn

    def train_step(self, batch: Minibatch) -> TrainStats:
        """One learner update.  All gradients are computed first and applied
        only if every number checks finite, so an aborted step leaves the
        parameters untouched."""
        y = self.critic_targets(batch)
        xa = np.hstack([batch.states, batch.actions])
        q = self.critic.forward(xa).ravel()
        td = y - q
        n = td.shape[0]
        weights = batch.weights
        critic_loss = float(np.mean(weights * td * td))
        gout = (-2.0 / n) * (weights * td)
        critic_grad, _ = self.critic.backward(xa, gout[:, None])
        actor_grad, _objective = policy_objective_gradient(
            self.actor, batch.states, self._critic_q_fn())

        for arr in (y, td, critic_grad, actor_grad):
            if not np.all(np.isfinite(arr)):
                raise NumericsError("non-finite values in training step")
        if not np.isfinite(critic_loss):
            raise NumericsError("non-finite critic loss")

        apply_update(self.critic, self.critic_opt, critic_grad)
        apply_update(self.actor, self.actor_opt, -actor_grad)  # ascend on Q
        soft_update(self.target_actor, self.actor, self.tau)
        soft_update(self.target_critic, self.critic, self.tau)
        return TrainStats(critic_loss, np.abs(td))

    # -- parameter exchange -------------------------------------------------------

    def actor_snapshot(self) -> np.ndarray:
        """Copy of the policy parameters for publication to actors."""
        return self.actor.params.copy()

    def spawn_actor_net(self, params: np.ndarray | None = None) -> Mlp:
        net = self.actor.copy()
        if params is not None:
            net.params[:] = params
        return net
