"""Evaluation metrics, reports and the ablation grid."""
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import DivergenceError
from .env import rollout
from .rng import stream

VARIANTS = ("full", "no_uncertainty", "no_diversity", "no_PE", "no_PI")

# config switches each variant flips relative to "full"
VARIANT_OVERRIDES = {
    "full": {},
    "no_uncertainty": {"penalty.lambda1": 0.0, "world.source": "mf"},
    "no_diversity": {"penalty.lambda2": 0.0},
    "no_PE": {"penalty.omega": 0.0},
    "no_PI": {"penalty.omega": 1.0},
}


def _stat(values):
    a = np.asarray(values, dtype=np.float64)
    return {"mean": float(a.mean()), "std": float(a.std())}


@dataclass
class EvalReport:
    R_tra: dict
    R_each: dict
    Length: dict
    episodes: int
    config_fingerprint: str
    seed: int
    records: list = field(default_factory=list)
    notes: dict = field(default_factory=dict)

    def to_dict(self):
        return {"R_tra": self.R_tra, "R_each": self.R_each, "Length": self.Length,
                "episodes": self.episodes, "config_fingerprint": self.config_fingerprint,
                "seed": self.seed, "notes": self.notes, "records": self.records}

    def to_json(self):
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d):
        return cls(d["R_tra"], d["R_each"], d["Length"], d["episodes"], d["config_fingerprint"],
                   d["seed"], d.get("records", []), d.get("notes", {}))

    def summary_row(self):
        return [f"{self.R_tra['mean']:.3f}±{self.R_tra['std']:.3f}",
                f"{self.R_each['mean']:.3f}±{self.R_each['std']:.3f}",
                f"{self.Length['mean']:.3f}±{self.Length['std']:.3f}"]

    def to_text(self):
        return format_table(["metric", "mean±std"],
                            [[name, cell] for name, cell in zip(("R_tra", "R_each", "Length"),
                                                                self.summary_row())])


def summarize(trajectories, config_fingerprint="", seed=0, notes=None):
    """Aggregate raw-reward metrics; std uses the population formula."""
    records = []
    for tr in trajectories:
        records.append({"user": tr.user, "R_tra": tr.r_tra, "R_each": tr.r_each,
                        "Length": tr.length, "cause": tr.cause})
    return EvalReport(_stat([r["R_tra"] for r in records]), _stat([r["R_each"] for r in records]),
                      _stat([r["Length"] for r in records]), len(records), config_fingerprint,
                      seed, records, notes or {})


def evaluation_rollouts(policy, env, n_episodes, seed):
    if n_episodes < 1:
        raise ValueError("n_episodes must be >= 1")
    out = []
    for ep in range(n_episodes):
        user = int(stream(seed, "eval-user", ep).integers(env.n_users))
        out.append(rollout(policy, env, user, seed, episode=("eval", ep)))
    return out


def evaluate(policy, env, n_episodes=100, seed=0, config_fingerprint="", notes=None):
    """Roll out ``n_episodes`` with uniformly drawn users; metrics count raw rewards only."""
    trajectories = evaluation_rollouts(policy, env, n_episodes, seed)
    return summarize(trajectories, config_fingerprint, seed, notes)


def format_table(header, rows):
    cols = [header] + [list(map(str, r)) for r in rows]
    widths = [max(len(r[j]) for r in cols) for j in range(len(header))]
    lines = ["  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in cols]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def comparison_table(results):
    rows = []
    for name, rep in results.items():
        if isinstance(rep, EvalReport):
            rows.append([name] + rep.summary_row())
        else:
            rows.append([name, "FAILED", str(rep), ""])
    return format_table(["variant", "R_tra", "R_each", "Length"], rows)


def run_ablation(train_and_eval, variants=VARIANTS):
    """Run each variant through ``train_and_eval(name, overrides) -> EvalReport``.

    A diverging variant is recorded as its error message instead of a report.
    Returns ``(results, any_failed)``.
    """
    results = {}
    failed = False
    for name in variants:
        try:
            results[name] = train_and_eval(name, VARIANT_OVERRIDES[name])
        except DivergenceError as exc:
            results[name] = f"diverged: {exc}"
            failed = True
    return results, failed
