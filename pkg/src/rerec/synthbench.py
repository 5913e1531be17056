"""Synthetic interaction world with known ground-truth rewards.

Items belong to ``C`` categories whose latent centers shape user taste, so
high-reward items cluster by category. Logging follows a softmax over true
rewards with a popularity bias, a down-weighted sparse item subset, and a
pull towards the previous item's category, which makes the logged
behavior policy non-uniform and category-concentrated.
"""
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .dataset import InteractionEvent, InteractionLog, LogSchema
from .errors import ConfigError
from .rng import stream

SPARSE_WEIGHT = 0.1
SYNTH_SCHEMA = LogSchema(delimiter=",", user_col=0, item_col=1, rating_col=2, timestamp_col=3,
                         min_rating=0.0, max_rating=1.0)


@dataclass
class SyntheticWorld:
    true_reward: np.ndarray       # U x I in [0, 1]
    categories: np.ndarray        # I ints in [0, C)
    sparse_items: np.ndarray      # bool mask over items
    popularity: np.ndarray        # logging popularity weights
    events: list                  # InteractionEvent, dense ids == generator ids
    seed: int

    @property
    def n_users(self):
        return self.true_reward.shape[0]

    @property
    def n_items(self):
        return self.true_reward.shape[1]

    def to_log(self):
        return InteractionLog(list(self.events), [str(u) for u in range(self.n_users)],
                              [str(i) for i in range(self.n_items)], SYNTH_SCHEMA)

    def write(self, out_dir):
        """Write ``events.csv``, ``categories.csv`` and the ``truth.ckpt`` sidecar."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "events.csv", "w", encoding="utf-8") as fh:
            for ts, e in enumerate(self.events):
                fh.write(f"{e.user},{e.item},{e.raw_rating!r},{ts}\n")
        with open(out / "categories.csv", "w", encoding="utf-8") as fh:
            for i, c in enumerate(self.categories):
                fh.write(f"{i},{int(c)}\n")
        save_checkpoint(out / "truth.ckpt", "truth",
                        {"true_reward": self.true_reward,
                         "categories": self.categories.astype(np.float64),
                         "sparse_items": self.sparse_items.astype(np.float64)},
                        {"seed": self.seed, "U": self.n_users, "I": self.n_items}, dtype="<f8")


def load_truth(path):
    """Return ``(true_reward, categories, sparse_mask)`` from a truth sidecar."""
    _, a = load_checkpoint(path, kind="truth")
    return a["true_reward"], a["categories"].astype(np.int64), a["sparse_items"].astype(bool)


def generate(U=100, I=100, C=5, events_per_user=30, sparsity_skew=0.5, seed=0,
             latent_dim=8, temperature=0.15, stickiness=1.5, noise=0.0):
    """Draw a world and log ``events_per_user`` interactions per user.

    ``sparsity_skew`` is the fraction of items logged ~10x less often.
    ``noise`` > 0 perturbs logged rewards by N(0, noise), clipped to [0, 1].
    """
    if min(U, I, C, events_per_user) < 1:
        raise ConfigError("U, I, C and events_per_user must all be >= 1")
    if not 0.0 <= sparsity_skew <= 1.0:
        raise ConfigError("sparsity_skew must be in [0, 1]")
    rng = stream(seed, "synth-world")
    categories = np.arange(I) % C
    rng.shuffle(categories)
    centers = rng.normal(0.0, 1.0, size=(C, latent_dim))
    items = centers[categories] + 0.5 * rng.normal(0.0, 1.0, size=(I, latent_dim))
    users = rng.normal(0.0, 1.0, size=(U, latent_dim))
    scores = users @ items.T / np.sqrt(latent_dim)
    scale = 2.0 * scores.std() if scores.size > 1 and scores.std() > 0 else 1.0
    true_reward = (np.clip(scores / scale, -1.0, 1.0) + 1.0) / 2.0

    n_sparse = int(round(sparsity_skew * I))
    sparse = np.zeros(I, dtype=bool)
    sparse[rng.permutation(I)[:n_sparse]] = True
    popularity = rng.lognormal(0.0, 0.5, size=I)
    base = np.log(popularity) + np.log(np.where(sparse, SPARSE_WEIGHT, 1.0))

    log_rng = stream(seed, "synth-log")
    events = []
    for u in range(U):
        logits_u = base + true_reward[u] / temperature
        prev_cat = None
        for pos in range(events_per_user):
            logits = logits_u if prev_cat is None else logits_u + stickiness * (categories == prev_cat)
            p = np.exp(logits - logits.max())
            p /= p.sum()
            i = int(log_rng.choice(I, p=p))
            r = float(true_reward[u, i])
            if noise > 0:
                r = float(np.clip(r + log_rng.normal(0.0, noise), 0.0, 1.0))
            events.append(InteractionEvent(u, i, r, r, pos))
            prev_cat = categories[i]
    return SyntheticWorld(true_reward, categories, sparse, popularity, events, seed)
