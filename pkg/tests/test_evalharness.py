import json

import numpy as np
import pytest

from rerec.env import Trajectory
from rerec.errors import DivergenceError
from rerec.evalharness import (VARIANT_OVERRIDES, VARIANTS, EvalReport, comparison_table, evaluate,
                               format_table, run_ablation, summarize)
from rerec.pipeline import ablate_world, make_env, new_policy
from rerec.policy import train_policy


def traj(rewards, user=0, cause="quit"):
    return Trajectory(user, list(range(len(rewards))), list(rewards), list(rewards), cause=cause)


def test_single_episode_metrics():
    rep = summarize([traj([0.5, 0.5])])
    assert rep.R_tra == {"mean": 1.0, "std": 0.0}
    assert rep.R_each["mean"] == 0.5 and rep.Length["mean"] == 2
    assert rep.episodes == 1


def test_identical_episodes_zero_spread():
    rep = summarize([traj([0.2, 0.9, 0.4])] * 3)
    assert rep.R_tra["std"] == rep.R_each["std"] == rep.Length["std"] == 0.0


def test_population_std():
    rep = summarize([traj([1.0]), traj([0.0, 0.0, 0.0])])
    assert rep.R_tra == {"mean": 0.5, "std": 0.5}
    assert rep.Length == {"mean": 2.0, "std": 1.0}


def test_per_episode_consistency():
    rng = np.random.default_rng(0)
    rep = summarize([traj(rng.random(int(rng.integers(1, 30)))) for _ in range(50)])
    for r in rep.records:
        assert abs(r["R_each"] * r["Length"] - r["R_tra"]) <= 1e-9


def test_report_json_round_trip():
    rep = summarize([traj([0.1, 0.3]), traj([0.7])], "abc", 3, {"n": 1})
    back = EvalReport.from_dict(json.loads(rep.to_json()))
    assert back.to_json() == rep.to_json()
    assert "R_tra" in rep.to_text() and "±" in rep.to_text()


def test_format_table_alignment():
    out = format_table(["a", "bbb"], [["xxxx", "1"], ["y", "22"]]).splitlines()
    assert out[0] == "a     bbb"
    assert out[1] == "----  ---"
    assert out[2] == "xxxx  1"


def test_evaluate_deterministic(tiny_world, tiny_cfg):
    env = make_env(tiny_world, tiny_cfg)
    policy = new_policy(tiny_world, tiny_cfg)
    a = evaluate(policy, env, 8, seed=5, config_fingerprint="f")
    b = evaluate(policy, env, 8, seed=5, config_fingerprint="f")
    assert a.to_json() == b.to_json()
    assert a.episodes == 8
    with pytest.raises(ValueError):
        evaluate(policy, env, 0)


def test_variant_isolation(tiny_cfg):
    assert len(VARIANTS) == 5 and set(VARIANT_OVERRIDES) == set(VARIANTS)
    for name in VARIANTS:
        cfg = tiny_cfg.with_overrides(VARIANT_OVERRIDES[name])
        changed = {k for k in cfg if cfg[k] != tiny_cfg[k]}
        assert changed <= set(VARIANT_OVERRIDES[name])
    assert set(VARIANT_OVERRIDES["no_uncertainty"]) == {"penalty.lambda1", "world.source"}


def test_no_diversity_shaped_rewards(tiny_world, tiny_cfg):
    # λ2 = 0 removes both diversity terms; only the uncertainty term remains
    cfg = tiny_cfg.with_overrides(VARIANT_OVERRIDES["no_diversity"])
    env = make_env(tiny_world, cfg)
    lam1 = cfg["penalty.lambda1"]
    checked = []

    def spot_check(row, tr):
        for item, shaped in zip(tr.items, tr.shaped_rewards):
            b = tiny_world.beliefs.belief(tr.user, item)
            assert shaped == b.mean - lam1 * b.variance
            checked.append(item)

    train_policy(new_policy(tiny_world, cfg), env, 5, seed=0, on_episode=spot_check)
    assert checked
    env0 = make_env(tiny_world, cfg.with_overrides({"penalty.lambda1": 0.0}))
    train_policy(new_policy(tiny_world, cfg), env0, 3, seed=0,
                 on_episode=lambda row, tr: tr.shaped_rewards == tr.raw_rewards or pytest.fail("shaped != raw"))


def test_run_ablation_marks_divergence():
    def fake(name, overrides):
        if name == "no_PE":
            raise DivergenceError("boom", stage="policy", episode=3)
        return summarize([traj([0.5])], name)
    results, failed = run_ablation(fake)
    assert failed and list(results) == list(VARIANTS)
    assert isinstance(results["full"], EvalReport)
    assert "diverged" in results["no_PE"]
    table = comparison_table(results)
    assert "FAILED" in table and len(table.splitlines()) == 2 + 5


def test_ablate_world_all_variants(tiny_world, tiny_cfg):
    cfg = tiny_cfg.with_overrides({"policy.episodes": 5, "eval.episodes": 3})
    results, failed = ablate_world(tiny_world, cfg)
    assert not failed and list(results) == list(VARIANTS)
    assert results["no_uncertainty"].notes["world_source"].startswith("mf")
    for name, rep in results.items():
        assert rep.episodes == 3
        assert rep.notes["overrides"] == VARIANT_OVERRIDES[name]
