"""Flat ``key = value`` run configuration.

Every key has a default and a one-line description in :data:`SCHEMA`;
unknown keys are rejected. ``resolved_text`` renders the full resolved
config, which can be fed back unchanged.
"""
import hashlib
from pathlib import Path

from .errors import ConfigError

# key -> (default, description)
SCHEMA = {
    "seed": (0, "master seed; every stochastic stage derives its stream from it"),
    "out": ("runs/default", "output directory for all artifacts"),
    "dataset.path": ("", "interaction file to ingest"),
    "dataset.delimiter": (",", "field delimiter ('tab' for a tab)"),
    "dataset.user_col": (0, "0-based user id column"),
    "dataset.item_col": (1, "0-based item id column"),
    "dataset.rating_col": (2, "0-based rating column"),
    "dataset.timestamp_col": (-1, "0-based timestamp column, -1 for file order"),
    "dataset.has_header": (False, "skip the first line"),
    "dataset.min_rating": (1.0, "lowest rating on the dataset scale"),
    "dataset.max_rating": (5.0, "highest rating on the dataset scale"),
    "dataset.categories_path": ("", "optional 'item,category' file for the quit rule"),
    "dataset.split_fraction": (0.8, "per-user train fraction"),
    "embed.d": (32, "embedding dimension"),
    "embed.epochs": (200, "MF SGD epochs"),
    "embed.lr": (0.02, "MF learning rate"),
    "embed.reg": (0.01, "MF L2 regularization"),
    "diffusion.T": (50, "diffusion steps"),
    "diffusion.beta_start": (1e-4, "first noise level"),
    "diffusion.beta_end": (0.02, "last noise level"),
    "diffusion.hidden": (64, "hidden width of the noise network"),
    "diffusion.time_embed_dim": (16, "sinusoidal step embedding width"),
    "diffusion.epochs": (400, "training epochs"),
    "diffusion.batch_size": (64, "minibatch size"),
    "diffusion.lr": (0.002, "Adam learning rate"),
    "diffusion.include_t1": (True, "sample t=1 during training"),
    "world.M": (10, "reverse samples per (user, item)"),
    "world.source": ("diffusion", "'diffusion' or 'mf' (point predictor, zero variance)"),
    "penalty.k": (3, "context order of the behavior model"),
    "penalty.lambda1": (0.05, "weight of the uncertainty penalty"),
    "penalty.lambda2": (0.1, "weight of the diversity penalties"),
    "penalty.alpha": (0.5, "decay scale"),
    "penalty.xi": (1.0, "decay rate"),
    "penalty.smoothing": (0.01, "add-lambda smoothing of the behavior model"),
    "penalty.omega": (-1.0, "fixed blend weight; negative means use the decay"),
    "env.max_length": (30, "episode cap"),
    "env.window": (4, "recent window for the quit rule and state"),
    "env.quit_threshold": (3, "similar items in the window that trigger a quit"),
    "env.cosine_threshold": (0.9, "similarity threshold when no categories are given"),
    "env.no_repeat": (True, "forbid re-recommending an item within an episode"),
    "policy.gamma": (0.9, "discount"),
    "policy.entropy_coef": (0.01, "entropy bonus"),
    "policy.lr": (0.01, "Adam learning rate for actor and critic"),
    "policy.hidden": (64, "hidden width of actor and critic"),
    "policy.episodes": (2000, "training episodes"),
    "eval.episodes": (100, "evaluation episodes"),
    "synth.U": (100, "synthetic users"),
    "synth.I": (100, "synthetic items"),
    "synth.C": (5, "synthetic item categories"),
    "synth.events_per_user": (30, "logged events per synthetic user"),
    "synth.sparsity_skew": (0.5, "fraction of items logged ~10x less"),
    "synth.noise": (0.0, "std of Gaussian noise on logged rewards"),
    "synth.stickiness": (1.5, "logging pull towards the previous item's category"),
    "synth.temperature": (0.15, "logging softmax temperature over true rewards"),
}


def _coerce(key, raw):
    default = SCHEMA[key][0]
    if isinstance(raw, str):
        raw = raw.strip()
    try:
        if isinstance(default, bool):
            if isinstance(raw, bool):
                return raw
            low = str(raw).lower()
            if low in ("true", "1", "yes", "on"):
                return True
            if low in ("false", "0", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            if isinstance(raw, float) and not raw.is_integer():
                raise ValueError(raw)
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {type(default).__name__}") from None
    return str(raw)


class RunConfig(dict):
    """A fully resolved mapping over :data:`SCHEMA`."""

    def __init__(self, overrides=None):
        super().__init__({k: v for k, (v, _) in SCHEMA.items()})
        for key, value in (overrides or {}).items():
            self[key] = value

    def __setitem__(self, key, value):
        if key not in SCHEMA:
            raise ConfigError(f"unknown config key {key!r}")
        super().__setitem__(key, _coerce(key, value))

    def update(self, other=(), **kw):
        for key, value in dict(other, **kw).items():
            self[key] = value

    def replaced(self, **changes):
        cfg = RunConfig(self)
        for key, value in changes.items():
            cfg[key.replace("__", ".")] = value
        return cfg

    def with_overrides(self, overrides):
        cfg = RunConfig(self)
        cfg.update(overrides)
        return cfg

    @property
    def delimiter(self):
        d = self["dataset.delimiter"]
        return {"tab": "\t", "\\t": "\t", "space": " "}.get(d.lower(), d)

    def resolved_text(self):
        return "".join(f"{k} = {self[k]}\n" for k in sorted(self))

    def fingerprint(self, exclude=("out",)):
        text = "".join(f"{k}={self[k]!r}\n" for k in sorted(self) if k not in exclude)
        return hashlib.sha256(text.encode()).hexdigest()[:16]


def parse_config_text(text, source="<config>"):
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in SCHEMA:
            raise ConfigError(f"{source}:{lineno}: unknown config key {key!r}")
        values[key] = value
    return RunConfig(values)


def load_config(path=None, overrides=None):
    cfg = RunConfig() if path is None else parse_config_text(
        Path(path).read_text(encoding="utf-8"), str(path))
    if overrides:
        cfg.update(overrides)
    return cfg
