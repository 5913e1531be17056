"""Interaction-log ingestion, per-user splitting and biased MF embeddings."""
import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels
from .checkpoint import load_checkpoint, save_checkpoint
from .errors import ConfigError, DivergenceError, EmptyDatasetError, ParseError, RangeError


@dataclass(frozen=True)
class InteractionEvent:
    user: int
    item: int
    raw_rating: float
    reward: float
    position: int


@dataclass(frozen=True)
class LogSchema:
    """Column layout of a delimiter-separated interaction file (0-based columns)."""
    delimiter: str = ","
    user_col: int = 0
    item_col: int = 1
    rating_col: int = 2
    timestamp_col: int | None = None
    has_header: bool = False
    min_rating: float = 1.0
    max_rating: float = 5.0

    def __post_init__(self):
        if not self.max_rating > self.min_rating:
            raise ConfigError("max_rating must exceed min_rating")

    def normalize(self, rating):
        return (rating - self.min_rating) / (self.max_rating - self.min_rating)

    def denormalize(self, reward):
        return self.min_rating + reward * (self.max_rating - self.min_rating)


@dataclass
class InteractionLog:
    """Dense re-indexed events plus the id maps needed to go back to raw ids."""
    events: list
    user_ids: list
    item_ids: list
    schema: LogSchema = field(default_factory=LogSchema)

    @property
    def n_users(self):
        return len(self.user_ids)

    @property
    def n_items(self):
        return len(self.item_ids)

    def __len__(self):
        return len(self.events)

    def __iter__(self):
        return iter(self.events)

    def __getitem__(self, j):
        return self.events[j]

    def user_index(self):
        return {raw: j for j, raw in enumerate(self.user_ids)}

    def item_index(self):
        return {raw: j for j, raw in enumerate(self.item_ids)}

    def index_map(self):
        return {"users": list(self.user_ids), "items": list(self.item_ids),
                "min_rating": self.schema.min_rating, "max_rating": self.schema.max_rating}


def load_log(path, schema=LogSchema()):
    """Parse an interaction file into a dense-indexed :class:`InteractionLog`.

    Users and items are numbered in order of first appearance. Events of a
    user keep file order unless a timestamp column is given (stable sort by
    timestamp).
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"interaction file not found: {path}")
    rows = []
    needed = max(c for c in (schema.user_col, schema.item_col, schema.rating_col,
                             schema.timestamp_col) if c is not None)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh, delimiter=schema.delimiter)
        for lineno, parts in enumerate(reader, start=1):
            if schema.has_header and lineno == 1:
                continue
            if not parts or all(not p.strip() for p in parts):
                continue
            if len(parts) <= needed:
                raise ParseError(f"expected at least {needed + 1} columns, got {len(parts)}", lineno)
            user = parts[schema.user_col].strip()
            item = parts[schema.item_col].strip()
            if not user or not item:
                raise ParseError("empty user or item id", lineno)
            try:
                rating = float(parts[schema.rating_col])
                ts = float(parts[schema.timestamp_col]) if schema.timestamp_col is not None else 0.0
            except ValueError:
                raise ParseError(f"non-numeric field in {parts!r}", lineno) from None
            if not math.isfinite(rating):
                raise ParseError(f"non-finite rating {parts[schema.rating_col]!r}", lineno)
            if not schema.min_rating <= rating <= schema.max_rating:
                raise RangeError(f"line {lineno}: rating {rating} outside "
                                 f"[{schema.min_rating}, {schema.max_rating}]")
            rows.append((user, item, rating, ts))
    if not rows:
        raise EmptyDatasetError(f"{path}: no interaction events")

    user_ids, item_ids = {}, {}
    for user, item, _, _ in rows:
        user_ids.setdefault(user, len(user_ids))
        item_ids.setdefault(item, len(item_ids))

    per_user = {}
    for order, (user, item, rating, ts) in enumerate(rows):
        per_user.setdefault(user_ids[user], []).append((ts, order, item_ids[item], rating))
    events = []
    for u in sorted(per_user):
        for pos, (_, _, i, rating) in enumerate(sorted(per_user[u], key=lambda r: (r[0], r[1]))):
            events.append(InteractionEvent(u, i, rating, schema.normalize(rating), pos))
    return InteractionLog(events, list(user_ids), list(item_ids), schema)


def write_events(path, events):
    """Normalized event file: ``user<TAB>item<TAB>raw_rating<TAB>reward<TAB>position``."""
    with open(path, "w", encoding="utf-8") as fh:
        for e in events:
            fh.write(f"{e.user}\t{e.item}\t{e.raw_rating!r}\t{e.reward!r}\t{e.position}\n")


def read_events(path):
    events = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 5:
                raise ParseError("normalized event line needs 5 fields", lineno)
            events.append(InteractionEvent(int(parts[0]), int(parts[1]), float(parts[2]),
                                           float(parts[3]), int(parts[4])))
    return events


@dataclass
class DatasetSplit:
    train: list
    test: list
    split_fraction: float
    seed: int

    def manifest(self):
        return {"split_fraction": self.split_fraction, "seed": self.seed,
                "train": [[e.user, e.position] for e in self.train],
                "test": [[e.user, e.position] for e in self.test]}


def split_dataset(events, fraction, seed):
    """Per-user random split with ``floor(fraction*N + 0.5)`` train events overall.

    Each user gets ``floor(fraction*n_u)`` train events; the leftover quota
    goes to the users with the largest fractional remainders (seeded
    tie-break), so totals match the global fraction exactly.
    """
    from .rng import stream

    if not 0.0 < fraction < 1.0:
        raise ConfigError(f"split fraction must be in (0, 1), got {fraction}")
    events = list(events)
    if len(events) < 2:
        raise ConfigError("need at least 2 events to split")
    by_user = {}
    for e in events:
        by_user.setdefault(e.user, []).append(e)
    users = sorted(by_user)
    quota = {u: int(math.floor(fraction * len(by_user[u]))) for u in users}
    leftover = int(math.floor(fraction * len(events) + 0.5)) - sum(quota.values())
    tiebreak = stream(seed, "split", "quota").permutation(len(users))
    ranked = sorted(range(len(users)),
                    key=lambda j: (-(fraction * len(by_user[users[j]]) - quota[users[j]]), tiebreak[j]))
    for j in ranked[:leftover]:
        quota[users[j]] += 1
    train, test = [], []
    for u in users:
        evs = sorted(by_user[u], key=lambda e: e.position)
        keep = set(stream(seed, "split", u).permutation(len(evs))[:quota[u]].tolist())
        for j, e in enumerate(evs):
            (train if j in keep else test).append(e)
    return DatasetSplit(train, test, fraction, seed)


@dataclass
class EmbeddingTable:
    user_vectors: np.ndarray
    item_vectors: np.ndarray
    user_bias: np.ndarray
    item_bias: np.ndarray
    global_mean: float
    train_rmse: float = float("nan")
    loss_curve: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    @property
    def d(self):
        return self.user_vectors.shape[1]

    @property
    def n_users(self):
        return self.user_vectors.shape[0]

    @property
    def n_items(self):
        return self.item_vectors.shape[0]

    def predict(self, user, item):
        return (np.sum(self.user_vectors[user] * self.item_vectors[item], axis=-1)
                + self.user_bias[user] + self.item_bias[item] + self.global_mean)

    def predict_all(self):
        return (self.user_vectors @ self.item_vectors.T + self.user_bias[:, None]
                + self.item_bias[None, :] + self.global_mean)

    def condition(self, user, item):
        """``e_u ⊕ e_i`` for one pair or broadcast arrays of pairs."""
        return np.concatenate([self.user_vectors[user], self.item_vectors[item]], axis=-1)

    def save(self, path):
        arrays = {"user_vectors": self.user_vectors, "item_vectors": self.item_vectors,
                  "user_bias": self.user_bias, "item_bias": self.item_bias,
                  "global_mean": np.array([self.global_mean])}
        meta = dict(self.meta, dims={"U": self.n_users, "I": self.n_items, "d": self.d},
                    train_rmse=self.train_rmse)
        return save_checkpoint(path, "embeddings", arrays, meta)

    @classmethod
    def load(cls, path):
        header, a = load_checkpoint(path, kind="embeddings")
        meta = header["meta"]
        return cls(a["user_vectors"], a["item_vectors"], a["user_bias"], a["item_bias"],
                   float(a["global_mean"][0]), meta.get("train_rmse", float("nan")), [], meta)


def train_embeddings(train, n_users, n_items, d=32, epochs=50, lr=0.01, reg=0.01, seed=0):
    """Biased matrix factorization fitted by per-event SGD on normalized rewards.

    ``loss_curve`` holds the post-epoch training MSE. Raises
    :class:`DivergenceError` if the loss goes non-finite.
    """
    from .rng import stream

    if d < 1:
        raise ConfigError("embedding dimension must be >= 1")
    train = list(train)
    if not train:
        raise EmptyDatasetError("cannot train embeddings on an empty split")
    rng = stream(seed, "embeddings")
    users = np.array([e.user for e in train], dtype=np.int64)
    items = np.array([e.item for e in train], dtype=np.int64)
    rewards = np.array([e.reward for e in train], dtype=np.float64)
    P = rng.normal(0.0, 0.1, size=(n_users, d))
    Q = rng.normal(0.0, 0.1, size=(n_items, d))
    bu = np.zeros(n_users)
    bi = np.zeros(n_items)
    mu = float(rewards.mean())
    curve = []
    with np.errstate(over="ignore", invalid="ignore"):
        for epoch in range(epochs):
            order = rng.permutation(len(train)).astype(np.int64)
            kernels.mf_sgd_epoch(users, items, rewards, order, P, Q, bu, bi, mu, lr, reg)
            pred = np.sum(P[users] * Q[items], axis=1) + bu[users] + bi[items] + mu
            mse = float(np.mean((rewards - pred) ** 2))
            if not math.isfinite(mse):
                raise DivergenceError(f"MF loss became non-finite at epoch {epoch}; try a smaller lr",
                                      stage="embeddings")
            curve.append(mse)
    if epochs == 0:
        pred = np.sum(P[users] * Q[items], axis=1) + bu[users] + bi[items] + mu
        curve_rmse = float(np.sqrt(np.mean((rewards - pred) ** 2)))
    else:
        curve_rmse = math.sqrt(curve[-1])
    meta = {"seed": seed, "hyperparameters": {"d": d, "epochs": epochs, "lr": lr, "reg": reg}}
    return EmbeddingTable(P, Q, bu, bi, mu, curve_rmse, curve, meta)


def rmse(table_or_grid, events):
    """RMSE of a predictor grid (U x I array) or EmbeddingTable on ``events``."""
    grid = table_or_grid.predict_all() if isinstance(table_or_grid, EmbeddingTable) else table_or_grid
    events = list(events)
    u = np.array([e.user for e in events])
    i = np.array([e.item for e in events])
    r = np.array([e.reward for e in events])
    return float(np.sqrt(np.mean((grid[u, i] - r) ** 2)))


def save_index_map(path, log):
    Path(path).write_text(json.dumps(log.index_map(), indent=1, sort_keys=True), encoding="utf-8")
