"""Conditional DDPM over scalar rewards.

The noise network sees ``[x_t, e_u, e_i, sinusoid(t)]`` and predicts the
injected Gaussian noise. Sampling runs the ancestral chain ``T -> 1`` with the
fixed posterior variance and no noise on the final step.
"""
from dataclasses import dataclass, field

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .errors import ConfigError, DivergenceError, ShapeError
from .rng import stream
from .tensorcore import AdamState, DenseNet, adam_step, backward_from_trace, forward, forward_trace

SAMPLE_CLAMP = (-0.5, 1.5)


@dataclass(frozen=True)
class NoiseSchedule:
    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray

    @classmethod
    def from_betas(cls, beta):
        beta = np.asarray(beta, dtype=np.float64)
        if beta.ndim != 1 or beta.size < 1:
            raise ConfigError("beta must be a non-empty vector")
        if not np.all((beta > 0.0) & (beta < 1.0)):
            raise ConfigError("every beta_t must lie in (0, 1)")
        alpha = 1.0 - beta
        alpha_bar = np.empty_like(alpha)
        acc = 1.0
        for j, a in enumerate(alpha):
            acc = acc * a
            alpha_bar[j] = acc
        return cls(beta, alpha, alpha_bar)

    @property
    def T(self):
        return self.beta.size

    def alpha_bar_at(self, t):
        """``alpha_bar_t`` with the convention ``alpha_bar_0 = 1``."""
        t = np.asarray(t)
        if np.any((t < 0) | (t > self.T)):
            raise IndexError(f"diffusion step out of range [0, {self.T}]")
        padded = np.concatenate([[1.0], self.alpha_bar])
        return padded[t]

    def posterior_variance(self, t):
        """beta_t * (1 - alpha_bar_{t-1}) / (1 - alpha_bar_t) for t >= 1."""
        prev = self.alpha_bar_at(t - 1)
        cur = self.alpha_bar_at(t)
        return self.beta[t - 1] * (1.0 - prev) / (1.0 - cur)

    def to_meta(self):
        return {"beta": self.beta.tolist(), "alpha": self.alpha.tolist(),
                "alpha_bar": self.alpha_bar.tolist()}

    @classmethod
    def from_meta(cls, meta):
        return cls(np.array(meta["beta"]), np.array(meta["alpha"]), np.array(meta["alpha_bar"]))


def build_schedule(T=50, beta_start=1e-4, beta_end=0.02):
    """Linear beta schedule from ``beta_start`` to ``beta_end`` inclusive."""
    if int(T) != T or T < 2:
        raise ConfigError(f"schedule needs T >= 2, got {T}")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ConfigError(f"need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}")
    return NoiseSchedule.from_betas(np.linspace(beta_start, beta_end, int(T)))


def q_sample(x0, t, eps, schedule):
    """Closed-form forward jump ``sqrt(abar_t) x0 + sqrt(1 - abar_t) eps``; t=0 returns x0."""
    ab = schedule.alpha_bar_at(t)
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps


def time_embedding(t, dim, T):
    """Sinusoidal features of step ``t``; periods are geometric from 1 to T."""
    if dim % 2:
        raise ConfigError("time embedding dimension must be even")
    t = np.asarray(t, dtype=np.float64)
    half = dim // 2
    if half == 1:
        periods = np.array([1.0])
    else:
        periods = float(T) ** (np.arange(half) / (half - 1))
    angles = t[..., None] / periods
    return np.concatenate([np.sin(angles), np.cos(angles)], axis=-1)


@dataclass
class DiffusionModel:
    net: DenseNet
    schedule: NoiseSchedule
    cond_dim: int
    time_embed_dim: int = 16
    reward_dim: int = 1
    include_t1: bool = True
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.reward_dim != 1:
            raise ConfigError("only scalar rewards are supported")
        expect = self.reward_dim + self.cond_dim + self.time_embed_dim
        if self.net.layer_dims[0] != expect or self.net.layer_dims[-1] != self.reward_dim:
            raise ShapeError(f"net {self.net.layer_dims} does not fit input width {expect}")

    @classmethod
    def init(cls, d, schedule, hidden=64, time_embed_dim=16, seed=0, activation="tanh",
             include_t1=True):
        dims = [1 + 2 * d + time_embed_dim, hidden, hidden, 1]
        net = DenseNet.init(dims, stream(seed, "diffusion-init"), activation)
        return cls(net, schedule, 2 * d, time_embed_dim, 1, include_t1)

    def net_input(self, x_t, cond, t):
        x_t = np.atleast_1d(np.asarray(x_t, dtype=np.float64))
        cond = np.atleast_2d(np.asarray(cond, dtype=np.float64))
        if cond.shape[-1] != self.cond_dim:
            raise ShapeError(f"condition width {cond.shape[-1]}, expected {self.cond_dim}")
        t = np.broadcast_to(np.asarray(t), x_t.shape)
        temb = time_embedding(t, self.time_embed_dim, self.schedule.T)
        cond = np.broadcast_to(cond, (x_t.shape[0], self.cond_dim))
        return np.concatenate([x_t[:, None], cond, temb], axis=1)

    def predict_eps(self, x_t, cond, t):
        return forward(self.net, self.net_input(x_t, cond, t))[:, 0]

    def save(self, path, extra_meta=None):
        meta = dict(self.meta, **(extra_meta or {}))
        meta.update(layer_dims=self.net.layer_dims, activation=self.net.activation,
                    cond_dim=self.cond_dim, time_embed_dim=self.time_embed_dim,
                    reward_dim=self.reward_dim, include_t1=self.include_t1,
                    schedule=self.schedule.to_meta())
        return save_checkpoint(path, "diffusion", self.net.to_arrays(), meta)

    @classmethod
    def load(cls, path):
        header, arrays = load_checkpoint(path, kind="diffusion")
        m = header["meta"]
        net = DenseNet.from_arrays(m["layer_dims"], arrays, m["activation"])
        keep = {k: v for k, v in m.items() if k not in
                ("layer_dims", "activation", "cond_dim", "time_embed_dim", "reward_dim",
                 "include_t1", "schedule")}
        return cls(net, NoiseSchedule.from_meta(m["schedule"]), m["cond_dim"],
                   m["time_embed_dim"], m["reward_dim"], m["include_t1"], keep)


def diffusion_loss(model, x0, cond, t, eps):
    """Mean squared noise-prediction error and its gradient w.r.t. the net output."""
    x_t = q_sample(x0, t, eps, model.schedule)
    acts = forward_trace(model.net, model.net_input(x_t, cond, t))
    resid = acts[-1][:, 0] - eps
    loss = float(np.mean(resid * resid))
    return loss, acts, (2.0 * resid / resid.size)[:, None]


def train_diffusion(events, embeddings, model, epochs=200, batch_size=64, lr=1e-3, seed=0):
    """Fit the noise network by minibatch Adam; returns ``(model, per-epoch mean losses)``.

    Steps are drawn uniformly from ``{1..T}`` (``{2..T}`` when
    ``model.include_t1`` is false). The model is updated in place.
    """
    events = list(events)
    if not events:
        raise ConfigError("no events to train the diffusion model on")
    users = np.array([e.user for e in events])
    items = np.array([e.item for e in events])
    if users.max() >= embeddings.n_users or items.max() >= embeddings.n_items:
        raise ShapeError("embedding table does not cover every event")
    x0_all = np.array([e.reward for e in events], dtype=np.float64)
    cond_all = embeddings.condition(users, items)
    t_min = 1 if model.include_t1 else 2
    T = model.schedule.T
    if t_min > T:
        raise ConfigError("schedule too short to exclude t=1")
    rng = stream(seed, "diffusion-train")
    params = model.net.params()
    opt = AdamState.for_params(params, lr=lr)
    curve = []
    n = len(events)
    for epoch in range(epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            t = rng.integers(t_min, T + 1, size=idx.size)
            eps = rng.standard_normal(idx.size)
            loss, acts, upstream = diffusion_loss(model, x0_all[idx], cond_all[idx], t, eps)
            if not np.isfinite(loss):
                raise DivergenceError(f"diffusion loss non-finite at epoch {epoch}", stage="diffusion")
            gws, gbs, _ = backward_from_trace(model.net, acts, upstream)
            grads = [g for pair in zip(gws, gbs) for g in pair]
            adam_step(params, grads, opt)
            total += loss * idx.size
        curve.append(total / n)
    model.meta.update(train_seed=seed, epochs=epochs, batch_size=batch_size, lr=lr)
    return model, curve


def reverse_chain(model, cond, noise, eps_fn=None, x_start=None):
    """Ancestral sampling for a batch.

    ``noise`` has shape ``(n, T)``: column 0 seeds ``x_T`` and column ``j``
    (j >= 1) is the fresh noise injected on the step ``t = T - j + 1 -> t - 1``.
    ``eps_fn(x_t, cond, t)`` overrides the network; ``x_start`` overrides
    ``x_T``. Returns raw samples clamped to ``SAMPLE_CLAMP``.
    """
    sched = model.schedule
    T = sched.T
    noise = np.atleast_2d(np.asarray(noise, dtype=np.float64))
    if noise.shape[1] != T:
        raise ShapeError(f"noise needs {T} columns, got {noise.shape[1]}")
    cond = np.atleast_2d(np.asarray(cond, dtype=np.float64))
    if cond.shape[-1] != model.cond_dim:
        raise ShapeError(f"condition width {cond.shape[-1]}, expected {model.cond_dim}")
    eps_fn = eps_fn or model.predict_eps
    x = noise[:, 0].copy() if x_start is None else np.broadcast_to(
        np.asarray(x_start, dtype=np.float64), noise[:, 0].shape).copy()
    for t in range(T, 0, -1):
        eps_hat = eps_fn(x, cond, t)
        beta = sched.beta[t - 1]
        ab = sched.alpha_bar[t - 1]
        x = (x - beta / np.sqrt(1.0 - ab) * eps_hat) / np.sqrt(sched.alpha[t - 1])
        if t > 1:
            x = x + np.sqrt(sched.posterior_variance(t)) * noise[:, T - t + 1]
    return np.clip(x, *SAMPLE_CLAMP)


def reverse_sample(model, condition, rng, eps_fn=None, x_start=None):
    """One raw reward sample for ``condition``; draws its T normals from ``rng``."""
    noise = rng.standard_normal((1, model.schedule.T))
    return float(reverse_chain(model, np.asarray(condition)[None, :], noise, eps_fn, x_start)[0])


def report_value(raw):
    """Clip a raw sample (or mean) to the reward range for reporting."""
    return np.clip(raw, 0.0, 1.0)
