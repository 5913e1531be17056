"""Interactive recommendation simulator over a precomputed belief table.

A user is shown one item per step. The raw reward is the belief mean for
(user, item); the shaped reward adds the uncertainty and diversity terms.
The episode ends when too many of the last ``window`` items are similar
(``quit``) or when ``max_length`` items have been shown.
"""
import json
from collections import Counter
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, ContractError
from .penalties import interactive_penalty, reallocate_reward, window_penalty
from .rng import stream

RUNNING, QUIT, MAX_LENGTH = "running", "quit", "max_length"


@dataclass(frozen=True)
class EnvConfig:
    max_length: int = 30
    window: int = 4
    quit_threshold: int = 3
    cosine_threshold: float = 0.9
    no_repeat: bool = True

    def __post_init__(self):
        if not 1 <= self.quit_threshold <= self.window <= self.max_length:
            raise ConfigError("need 1 <= quit_threshold <= window <= max_length")


@dataclass(frozen=True)
class EnvState:
    user: int
    items: tuple = ()
    rewards: tuple = ()
    cause: str = RUNNING
    window: int = 4

    @property
    def step(self):
        return len(self.items)

    @property
    def history(self):
        return list(zip(self.items, self.rewards))

    @property
    def recent_window(self):
        return self.items[-self.window:]

    @property
    def recent_rewards(self):
        return self.rewards[-self.window:]

    @property
    def terminated(self):
        return self.cause != RUNNING


@dataclass
class Trajectory:
    user: int
    items: list = field(default_factory=list)
    raw_rewards: list = field(default_factory=list)
    shaped_rewards: list = field(default_factory=list)
    log_probs: list = field(default_factory=list)
    states: list = field(default_factory=list)      # state before each action, then the final one
    cause: str = RUNNING

    @property
    def length(self):
        return len(self.items)

    @property
    def r_tra(self):
        return float(sum(self.raw_rewards))

    @property
    def r_each(self):
        return self.r_tra / self.length if self.length else 0.0

    def to_record(self):
        return {"user": self.user, "items": list(self.items), "raw_rewards": list(self.raw_rewards),
                "shaped_rewards": list(self.shaped_rewards), "cause": self.cause}


def dump_trajectories(path, trajectories):
    with open(path, "w", encoding="utf-8") as fh:
        for tr in trajectories:
            fh.write(json.dumps(tr.to_record()) + "\n")


class RecEnv:
    """Bundles the immutable pieces a rollout needs; states are separate values."""

    def __init__(self, beliefs, store, pcfg, ecfg=EnvConfig(), categories=None, item_vectors=None):
        if categories is None and item_vectors is None:
            raise ConfigError("need item categories or item vectors for the quit rule")
        self.beliefs = beliefs
        self.store = store
        self.pcfg = pcfg
        self.ecfg = ecfg
        self.categories = None if categories is None else np.asarray(categories)
        if item_vectors is not None:
            v = np.asarray(item_vectors, dtype=np.float64)
            norms = np.linalg.norm(v, axis=1, keepdims=True)
            self._unit = v / np.where(norms > 0, norms, 1.0)
        else:
            self._unit = None

    @property
    def n_users(self):
        return self.beliefs.n_users

    @property
    def n_items(self):
        return self.beliefs.n_items

    def with_configs(self, pcfg=None, ecfg=None, beliefs=None):
        env = RecEnv.__new__(RecEnv)
        env.__dict__.update(self.__dict__)
        env.pcfg = pcfg or self.pcfg
        env.ecfg = ecfg or self.ecfg
        env.beliefs = beliefs or self.beliefs
        return env

    @property
    def length_cap(self):
        """``max_length``, or the catalog size if that is smaller and repeats are banned."""
        if self.ecfg.no_repeat:
            return min(self.ecfg.max_length, self.n_items)
        return self.ecfg.max_length

    def reset(self, user):
        if not 0 <= user < self.n_users:
            raise ContractError(f"user {user} out of range")
        return EnvState(int(user), window=self.ecfg.window)

    def mask(self, state):
        m = np.zeros(self.n_items, dtype=bool)
        if self.ecfg.no_repeat and state.items:
            m[list(state.items)] = True
        return m

    def largest_similar_group(self, items):
        if self.categories is not None:
            return max(Counter(self.categories[list(items)].tolist()).values())
        u = self._unit[list(items)]
        close = (u @ u.T) > self.ecfg.cosine_threshold
        np.fill_diagonal(close, True)
        return int(close.sum(axis=1).max())

    def penalties(self, items, rng):
        """``(P_E, P_I)`` for a history ending with the current action."""
        k = self.pcfg.k
        return window_penalty(self.store, items, k), interactive_penalty(self.store, items, k, rng)

    def step(self, state, action, rng):
        """Returns ``(next_state, raw_reward, shaped_reward, done)``."""
        if state.terminated:
            raise ContractError("episode already terminated; call reset")
        action = int(action)
        if not 0 <= action < self.n_items:
            raise ContractError(f"action {action} out of range")
        if self.ecfg.no_repeat and action in state.items:
            raise ContractError(f"item {action} already recommended this episode")
        belief = self.beliefs.belief(state.user, action)
        items = state.items + (action,)
        l = state.step
        if self.pcfg.lambda2 != 0.0:
            pe, pi = self.penalties(items, rng)
        else:
            pe = pi = 0.0
        shaped = reallocate_reward(belief, pe, pi, l, self.pcfg)
        cause = RUNNING
        if len(items) >= self.length_cap:
            cause = MAX_LENGTH
        elif self.largest_similar_group(items[-self.ecfg.window:]) >= self.ecfg.quit_threshold:
            cause = QUIT
        nxt = replace(state, items=items, rewards=state.rewards + (belief.mean,), cause=cause)
        return nxt, belief.mean, shaped, cause != RUNNING


def rollout(policy, env, user, seed, episode=0, record_states=False):
    """Run one episode. Policy and environment draw from separate derived streams."""
    policy_rng = stream(seed, "rollout-policy", episode)
    env_rng = stream(seed, "rollout-env", episode)
    state = env.reset(user)
    tr = Trajectory(user)
    while not state.terminated:
        if record_states:
            tr.states.append(state)
        action, log_prob = policy.select(state, env, policy_rng)
        state, raw, shaped, _ = env.step(state, action, env_rng)
        tr.items.append(int(action))
        tr.raw_rewards.append(raw)
        tr.shaped_rewards.append(shaped)
        tr.log_probs.append(log_prob)
    if record_states:
        tr.states.append(state)
    tr.cause = state.cause
    return tr


class RandomPolicy:
    """Uniform over unmasked items."""

    def select(self, state, env, rng):
        free = np.flatnonzero(~env.mask(state))
        return int(rng.choice(free)), -float(np.log(free.size))


class EpsilonGreedyPolicy:
    """Greedy on belief means with probability ``1 - epsilon``; a sanity baseline."""

    def __init__(self, epsilon=0.1):
        self.epsilon = epsilon

    def select(self, state, env, rng):
        mask = env.mask(state)
        free = np.flatnonzero(~mask)
        scores = np.where(mask, -np.inf, env.beliefs.mean[state.user])
        best = int(np.argmax(scores))
        if rng.random() < self.epsilon:
            item = int(rng.choice(free))
        else:
            item = best
        p = self.epsilon / free.size + (1.0 - self.epsilon) * (item == best)
        return item, float(np.log(p))


class FixedSequencePolicy:
    """Plays a fixed item list in order."""

    def __init__(self, items):
        self.items = list(items)

    def select(self, state, env, rng):
        return self.items[state.step], 0.0
