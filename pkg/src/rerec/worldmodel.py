"""Reward beliefs from repeated reverse diffusion sampling.

For each (user, item) the world model draws ``M`` raw samples; the belief
mean is their average clipped to [0, 1] and the uncertainty is their
population variance (taken before clipping).
"""
import hashlib
from dataclasses import dataclass

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .diffusion import reverse_chain
from .errors import ConfigError, ShapeError
from .rng import stream


@dataclass(frozen=True)
class RewardBelief:
    mean: float
    variance: float
    sample_count: int


def belief_from_samples(samples):
    x = np.asarray(samples, dtype=np.float64)
    if x.size < 1:
        raise ConfigError("a belief needs at least one sample")
    m, var = _shifted_moments(x.reshape(1, -1))
    return RewardBelief(float(np.clip(m[0], 0.0, 1.0)), float(var[0]), int(x.size))


def _shifted_moments(raw):
    """Row means and population variances, computed relative to the first sample.

    Shifting makes identical samples come out with their exact value and a
    variance of exactly zero.
    """
    d = raw - raw[:, :1]
    dm = d.mean(axis=1)
    return raw[:, 0] + dm, np.mean((d - dm[:, None]) ** 2, axis=1)


def diffusion_sampler(model):
    """Sampler ``(condition, M, rng) -> M raw samples`` backed by ``model``."""

    def sample(condition, M, rng):
        noise = rng.standard_normal((M, model.schedule.T))
        cond = np.broadcast_to(np.asarray(condition, dtype=np.float64), (M, model.cond_dim))
        return reverse_chain(model, cond, noise)

    return sample


def predict_belief(model, embeddings, user, item, M, rng, sampler=None):
    """Belief for one pair. ``sampler`` replaces the diffusion chain (tests use stubs)."""
    if M < 1:
        raise ConfigError(f"M must be >= 1, got {M}")
    if not (0 <= user < embeddings.n_users and 0 <= item < embeddings.n_items):
        raise ShapeError(f"pair ({user}, {item}) out of range")
    sampler = sampler or diffusion_sampler(model)
    return belief_from_samples(sampler(embeddings.condition(user, item), M, rng))


def model_fingerprint(model):
    h = hashlib.sha256()
    for p in model.net.params():
        h.update(np.ascontiguousarray(p, dtype="<f8").tobytes())
    h.update(np.ascontiguousarray(model.schedule.beta, dtype="<f8").tobytes())
    return h.hexdigest()[:16]


@dataclass
class BeliefTable:
    mean: np.ndarray          # U x I, clipped to [0, 1]
    variance: np.ndarray      # U x I, >= 0
    sample_count: int
    seed: int
    model_fingerprint: str
    source: str = "diffusion"

    @property
    def n_users(self):
        return self.mean.shape[0]

    @property
    def n_items(self):
        return self.mean.shape[1]

    def belief(self, user, item):
        return RewardBelief(float(self.mean[user, item]), float(self.variance[user, item]),
                            self.sample_count)

    @classmethod
    def from_point_predictions(cls, grid, fingerprint="point", source="mf"):
        """Zero-uncertainty table from a deterministic predictor grid."""
        grid = np.asarray(grid, dtype=np.float64)
        return cls(np.clip(grid, 0.0, 1.0), np.zeros_like(grid), 1, 0, fingerprint, source)

    def save(self, path, extra_meta=None):
        meta = {"U": self.n_users, "I": self.n_items, "M": self.sample_count, "seed": self.seed,
                "fingerprint": self.model_fingerprint, "source": self.source}
        meta.update(extra_meta or {})
        pairs = np.stack([self.mean, self.variance], axis=-1)
        return save_checkpoint(path, "beliefs", {"mean_variance": pairs}, meta)

    @classmethod
    def load(cls, path):
        header, a = load_checkpoint(path, kind="beliefs")
        m = header["meta"]
        mv = a["mean_variance"]
        return cls(mv[..., 0].copy(), mv[..., 1].copy(), m["M"], m["seed"], m["fingerprint"],
                   m.get("source", "diffusion"))


def build_belief_table(model, embeddings, M, seed, fingerprint=None, batch_pairs=1024, order=None):
    """Beliefs for every (user, item) pair.

    Pair ``(u, i)`` draws its noise from the stream ``(seed, "belief", u, i)``,
    so the table does not depend on ``order`` or ``batch_pairs``.
    """
    if M < 1:
        raise ConfigError(f"M must be >= 1, got {M}")
    U, I = embeddings.n_users, embeddings.n_items
    T = model.schedule.T
    flat = np.arange(U * I) if order is None else np.asarray(order)
    if sorted(flat.tolist()) != list(range(U * I)):
        raise ConfigError("order must be a permutation of all pairs")
    mean = np.empty(U * I)
    var = np.empty(U * I)
    for start in range(0, flat.size, batch_pairs):
        idx = flat[start:start + batch_pairs]
        users, items = np.divmod(idx, I)
        noise = np.concatenate([stream(seed, "belief", int(u), int(i)).standard_normal((M, T))
                                for u, i in zip(users, items)])
        cond = np.repeat(embeddings.condition(users, items), M, axis=0)
        raw = reverse_chain(model, cond, noise).reshape(idx.size, M)
        m, v = _shifted_moments(raw)
        mean[idx] = np.clip(m, 0.0, 1.0)
        var[idx] = v
    return BeliefTable(mean.reshape(U, I), var.reshape(U, I), M, seed,
                       fingerprint or model_fingerprint(model))
