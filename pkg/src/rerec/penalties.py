"""Behavior-policy estimation and the diversity-aware reward reallocation.

The behavior policy is a count model over unordered item contexts: every
window of ``j`` consecutive logged items (``j = 0..k``) is stored as a sorted
tuple together with the item that followed it. Lookups back off from the
highest order by dropping the oldest context items until a seen context is
found; order 0 is the marginal item popularity.
"""
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, ContractError

NORMALIZATION_TOL = 1e-6


@dataclass(frozen=True)
class PenaltyConfig:
    k: int = 3
    lambda1: float = 0.05
    lambda2: float = 0.1
    alpha: float = 0.5
    xi: float = 1.0
    smoothing: float = 0.01
    omega_override: float | None = None   # ablations pin the blend weight

    def __post_init__(self):
        if self.k < 1:
            raise ConfigError("penalty.k must be >= 1")
        if min(self.lambda1, self.lambda2, self.smoothing) < 0:
            raise ConfigError("penalty weights and smoothing must be non-negative")
        if not (self.alpha > 0 and self.xi > 0):
            raise ConfigError("penalty.alpha and penalty.xi must be positive")


class KGramStore:
    """Immutable after construction; use :func:`build_kgram_store` or :meth:`load`."""

    def __init__(self, k, item_count, smoothing, counts):
        self.k = k
        self.item_count = item_count
        self.smoothing = smoothing
        self.counts = counts          # (order, sorted context tuple) -> {item: count}
        self._dense = {}

    def _count_vector(self, key):
        vec = self._dense.get(key)
        if vec is None:
            vec = np.zeros(self.item_count)
            for item, c in self.counts[key].items():
                vec[item] = c
            self._dense[key] = vec
        return vec

    def lookup_key(self, context):
        """The highest-order stored key matching the most recent context items."""
        context = list(context)
        for j in range(min(len(context), self.k), -1, -1):
            key = (j, tuple(sorted(context[len(context) - j:])))
            if key in self.counts:
                return key
        return None

    def save(self, path):
        lines = [f"# kgram k={self.k} items={self.item_count} smoothing={self.smoothing!r}"]
        for (order, ctx), nxt in sorted(self.counts.items()):
            ctx_s = ",".join(str(c) for c in ctx)
            nxt_s = ",".join(f"{item}:{c}" for item, c in sorted(nxt.items()))
            lines.append(f"{order}\t{ctx_s}\t{nxt_s}")
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path):
        text = Path(path).read_text(encoding="utf-8").splitlines()
        if not text or not text[0].startswith("# kgram "):
            raise ConfigError(f"{path}: not a k-gram store")
        fields = dict(kv.split("=") for kv in text[0][len("# kgram "):].split())
        counts = {}
        for line in text[1:]:
            order, ctx_s, nxt_s = line.split("\t")
            ctx = tuple(int(c) for c in ctx_s.split(",")) if ctx_s else ()
            counts[(int(order), ctx)] = {int(a): int(b) for a, b in
                                         (pair.split(":") for pair in nxt_s.split(","))}
        return cls(int(fields["k"]), int(fields["items"]), float(fields["smoothing"]), counts)


def user_sequences(events):
    """Per-user item sequences in position order."""
    by_user = {}
    for e in events:
        by_user.setdefault(e.user, []).append((e.position, e.item))
    return {u: [i for _, i in sorted(seq)] for u, seq in sorted(by_user.items())}


def build_kgram_store(events, k, item_count, smoothing=0.01):
    if k < 1:
        raise ConfigError("k-gram order must be >= 1")
    if smoothing < 0:
        raise ConfigError("smoothing must be non-negative")
    counts = {}
    for seq in user_sequences(events).values():
        for order in range(k + 1):
            for p in range(order, len(seq)):
                key = (order, tuple(sorted(seq[p - order:p])))
                nxt = counts.setdefault(key, {})
                nxt[seq[p]] = nxt.get(seq[p], 0) + 1
    return KGramStore(k, item_count, smoothing, counts)


def behavior_dist(store, context):
    """Smoothed next-item distribution of the logged behavior after ``context``."""
    if any(not 0 <= c < store.item_count for c in context):
        raise ContractError("context item out of range")
    key = store.lookup_key(context)
    n = store.item_count
    lam = store.smoothing
    if key is None:
        counts = np.zeros(n)
    else:
        counts = store._count_vector(key)
    total = counts.sum() + lam * n
    if total <= 0:
        return np.full(n, 1.0 / n)
    return (counts + lam) / total


def entropy_penalty(dist):
    """Negative KL divergence of ``dist`` from the uniform distribution (nats)."""
    p = np.asarray(dist, dtype=np.float64)
    if abs(p.sum() - 1.0) > NORMALIZATION_TOL or np.any(p < 0):
        raise ContractError(f"not a probability vector (sum={p.sum()!r})")
    nz = p > 0
    return -float(np.sum(p[nz] * np.log(p[nz] * p.size)))


def window_context(history, k):
    """The last ``k`` items (all of them when fewer)."""
    return list(history[-k:]) if len(history) >= k else list(history)


def sampled_context(history, k, rng):
    """Items at ``k`` positions drawn without replacement from ``[0, i-1]``, in position order."""
    i = len(history)
    if i == 0:
        raise ContractError("interactive penalty needs a non-empty history")
    if i <= k:
        return list(history)
    positions = np.sort(rng.choice(i, size=k, replace=False))
    return [history[p] for p in positions]


def interactive_penalty(store, history, k, rng):
    """Entropy penalty over a randomly sampled set of history positions."""
    return entropy_penalty(behavior_dist(store, sampled_context(history, k, rng)))


def window_penalty(store, history, k):
    """Entropy penalty over the most recent ``k`` items."""
    if not history:
        raise ContractError("entropy penalty needs a non-empty history")
    return entropy_penalty(behavior_dist(store, window_context(history, k)))


def decay_weight(l, alpha=0.5, xi=1.0):
    """``alpha * (exp(-xi * l) + 1)``: starts at ``2*alpha`` and decays to ``alpha``."""
    if l < 0:
        raise ContractError(f"iteration step must be >= 0, got {l}")
    return alpha * (math.exp(-xi * l) + 1.0)


def blend_weight(l, cfg):
    return cfg.omega_override if cfg.omega_override is not None else decay_weight(l, cfg.alpha, cfg.xi)


def reallocate_reward(belief, pe, pi, l, cfg):
    """Shaped reward: uncertainty-penalized mean plus the decayed diversity blend.

    ``belief`` is anything with ``mean`` and ``variance`` attributes.
    """
    omega = blend_weight(l, cfg)
    return belief.mean - cfg.lambda1 * belief.variance + cfg.lambda2 * ((1.0 - omega) * pi + omega * pe)
