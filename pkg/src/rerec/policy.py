"""One-step advantage actor-critic over item embeddings.

The actor maps a state encoding to a query vector; items are scored by dot
product with their embeddings and sampled from a softmax restricted to
unmasked items. The critic maps the same encoding to a scalar value.
"""
import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .env import rollout
from .errors import DivergenceError, ExhaustionError
from .rng import stream
from .tensorcore import AdamState, DenseNet, adam_step, backward_from_trace, forward, forward_trace


def encode_state(state, user_vectors, item_vectors, max_length):
    """``e_u ⊕ reward-weighted mean of recent item vectors ⊕ step/max_length``."""
    d = item_vectors.shape[1]
    items = state.recent_window
    if items:
        w = np.asarray(state.recent_rewards, dtype=np.float64)
        total = w.sum()
        w = w / total if total > 0 else np.full(len(items), 1.0 / len(items))
        recent = w @ item_vectors[list(items)]
    else:
        recent = np.zeros(d)
    return np.concatenate([user_vectors[state.user], recent, [state.step / max_length]])


def masked_softmax(scores, mask=None):
    """Softmax with masked entries at probability exactly 0."""
    z = np.asarray(scores, dtype=np.float64)
    if mask is not None and np.any(mask):
        if np.all(mask):
            raise ExhaustionError("every item is masked")
        z = np.where(mask, -np.inf, z)
    z = z - np.max(z, axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


@dataclass
class Transition:
    encoding: np.ndarray
    action: int
    reward: float
    next_encoding: np.ndarray
    done: bool
    mask: np.ndarray


@dataclass
class ActorCritic:
    actor: DenseNet
    critic: DenseNet
    user_vectors: np.ndarray
    item_vectors: np.ndarray
    gamma: float = 0.9
    entropy_coef: float = 0.01
    lr: float = 3e-4
    actor_opt: AdamState = None
    critic_opt: AdamState = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must be in [0, 1)")
        if self.entropy_coef < 0:
            raise ValueError("entropy_coef must be non-negative")
        if self.actor_opt is None:
            self.actor_opt = AdamState.for_params(self.actor.params(), lr=self.lr)
        if self.critic_opt is None:
            self.critic_opt = AdamState.for_params(self.critic.params(), lr=self.lr)

    @classmethod
    def init(cls, user_vectors, item_vectors, hidden=64, gamma=0.9, entropy_coef=0.01, lr=3e-4,
             seed=0, activation="tanh"):
        d = item_vectors.shape[1]
        width = user_vectors.shape[1] + d + 1
        actor = DenseNet.init([width, hidden, hidden, d], stream(seed, "actor-init"), activation)
        critic = DenseNet.init([width, hidden, hidden, 1], stream(seed, "critic-init"), activation)
        return cls(actor, critic, np.asarray(user_vectors, dtype=np.float64),
                   np.asarray(item_vectors, dtype=np.float64), gamma, entropy_coef, lr)

    @property
    def encoding_dim(self):
        return self.actor.layer_dims[0]

    def encode(self, state, max_length):
        return encode_state(state, self.user_vectors, self.item_vectors, max_length)

    def scores(self, encoding):
        return forward(self.actor, encoding) @ self.item_vectors.T

    def value(self, encoding):
        return forward(self.critic, encoding)[..., 0]

    def select(self, state, env, rng):
        """Policy interface used by :func:`rerec.env.rollout`."""
        return act(self, self.encode(state, env.ecfg.max_length), env.mask(state), rng)

    def copy(self):
        return ActorCritic(self.actor.copy(), self.critic.copy(), self.user_vectors, self.item_vectors,
                           self.gamma, self.entropy_coef, self.lr, meta=dict(self.meta))

    def save(self, path, extra_meta=None):
        arrays = dict(self.actor.to_arrays("actor."))
        arrays.update(self.critic.to_arrays("critic."))
        meta = dict(self.meta, **(extra_meta or {}))
        meta.update(actor_dims=self.actor.layer_dims, critic_dims=self.critic.layer_dims,
                    activation=self.actor.activation, gamma=self.gamma,
                    entropy_coef=self.entropy_coef, lr=self.lr)
        return save_checkpoint(path, "policy", arrays, meta)

    @classmethod
    def load(cls, path, user_vectors, item_vectors):
        header, a = load_checkpoint(path, kind="policy")
        m = header["meta"]
        actor = DenseNet.from_arrays(m["actor_dims"], a, m["activation"], "actor.")
        critic = DenseNet.from_arrays(m["critic_dims"], a, m["activation"], "critic.")
        return cls(actor, critic, np.asarray(user_vectors, dtype=np.float64),
                   np.asarray(item_vectors, dtype=np.float64), m["gamma"], m["entropy_coef"],
                   m["lr"], meta=m)


def act(model, encoding, mask, rng):
    """Sample an item; returns ``(item, log_prob)``."""
    p = masked_softmax(model.scores(encoding), mask)
    item = int(rng.choice(p.size, p=p))
    return item, float(math.log(p[item]))


def a2c_gradients(model, batch):
    """Losses and parameter gradients of one A2C step, without applying them.

    Returns ``(actor_loss, critic_loss, actor_grads, critic_grads, advantages)``.
    The bootstrap target uses the current critic but is not differentiated.
    """
    enc = np.stack([t.encoding for t in batch])
    nxt = np.stack([t.next_encoding for t in batch])
    r = np.array([t.reward for t in batch], dtype=np.float64)
    done = np.array([t.done for t in batch], dtype=np.float64)
    actions = np.array([t.action for t in batch])
    masks = np.stack([t.mask for t in batch])
    n = len(batch)

    c_acts = forward_trace(model.critic, enc)
    v = c_acts[-1][:, 0]
    v_next = forward(model.critic, nxt)[:, 0]
    adv = r + model.gamma * v_next * (1.0 - done) - v
    critic_loss = float(np.mean(adv * adv))
    gws, gbs, _ = backward_from_trace(model.critic, c_acts, (-2.0 * adv / n)[:, None])
    critic_grads = [g for pair in zip(gws, gbs) for g in pair]

    a_acts = forward_trace(model.actor, enc)
    z = a_acts[-1] @ model.item_vectors.T
    p = masked_softmax(z, masks)
    with np.errstate(divide="ignore"):
        logp = np.where(p > 0, np.log(np.where(p > 0, p, 1.0)), 0.0)
    entropy = -np.sum(p * logp, axis=1)
    rows = np.arange(n)
    actor_loss = float(np.mean(-adv * logp[rows, actions]) - model.entropy_coef * np.mean(entropy))
    onehot = np.zeros_like(p)
    onehot[rows, actions] = 1.0
    dz = (-adv / n)[:, None] * (onehot - p) + (model.entropy_coef / n) * p * (logp + entropy[:, None])
    dq = dz @ model.item_vectors
    gws, gbs, _ = backward_from_trace(model.actor, a_acts, dq)
    actor_grads = [g for pair in zip(gws, gbs) for g in pair]
    return actor_loss, critic_loss, actor_grads, critic_grads, adv


def a2c_update(model, batch):
    """One Adam step on actor and critic; returns ``(actor_loss, critic_loss)``."""
    if not batch:
        raise ValueError("empty batch")
    actor_loss, critic_loss, ga, gc, _ = a2c_gradients(model, batch)
    if not (math.isfinite(actor_loss) and math.isfinite(critic_loss)):
        raise DivergenceError("non-finite A2C loss", stage="policy")
    adam_step(model.actor.params(), ga, model.actor_opt)
    adam_step(model.critic.params(), gc, model.critic_opt)
    return actor_loss, critic_loss


def trajectory_transitions(model, env, tr):
    max_len = env.ecfg.max_length
    encs = [model.encode(s, max_len) for s in tr.states]
    out = []
    for t, action in enumerate(tr.items):
        out.append(Transition(encs[t], action, tr.shaped_rewards[t], encs[t + 1],
                              t == tr.length - 1, env.mask(tr.states[t])))
    return out


@dataclass
class CurveRow:
    episode: int
    r_tra: float
    length: int
    actor_loss: float
    critic_loss: float


def train_policy(model, env, episodes, seed, on_episode=None):
    """Sample a user, roll out, update on that episode's transitions; repeat.

    Returns ``(model, curve)``; ``curve`` holds one :class:`CurveRow` per
    episode with the raw-reward return.
    """
    curve = []
    for ep in range(episodes):
        user = int(stream(seed, "train-user", ep).integers(env.n_users))
        tr = rollout(model, env, user, seed, episode=("train", ep), record_states=True)
        try:
            la, lc = a2c_update(model, trajectory_transitions(model, env, tr))
        except DivergenceError as exc:
            raise DivergenceError(str(exc), stage="policy", episode=ep) from None
        row = CurveRow(ep, tr.r_tra, tr.length, la, lc)
        curve.append(row)
        if on_episode is not None:
            on_episode(row, tr)
    return model, curve


def write_curve(path, curve):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["episode", "R_tra", "Length", "actor_loss", "critic_loss"])
        for row in curve:
            w.writerow([row.episode, repr(row.r_tra), row.length, repr(row.actor_loss),
                        repr(row.critic_loss)])
