"""Config-driven assembly of the components and the on-disk pipeline stages.

Stages communicate only through files under ``cfg["out"]``. Each downstream
artifact records the fingerprints of the files it was built from, and every
stage re-checks that chain before running.
"""
import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .checkpoint import fingerprint, read_header
from .dataset import (DatasetSplit, EmbeddingTable, LogSchema, load_log, read_events,
                      save_index_map, split_dataset, train_embeddings, write_events)
from .diffusion import DiffusionModel, build_schedule, train_diffusion
from .env import EnvConfig, RecEnv, dump_trajectories
from .errors import ConfigError, DataError, RerecError, StalenessError
from .evalharness import (VARIANT_OVERRIDES, VARIANTS, comparison_table, evaluate,
                          evaluation_rollouts, run_ablation, summarize)
from .penalties import KGramStore, PenaltyConfig, build_kgram_store
from .policy import ActorCritic, train_policy, write_curve
from .synthbench import SYNTH_SCHEMA, generate
from .worldmodel import BeliefTable, build_belief_table

log = logging.getLogger(__name__)


class OutputExistsError(RerecError):
    exit_code = 1


# ---------------------------------------------------------------- config views

def log_schema(cfg):
    ts = cfg["dataset.timestamp_col"]
    return LogSchema(cfg.delimiter, cfg["dataset.user_col"], cfg["dataset.item_col"],
                     cfg["dataset.rating_col"], None if ts < 0 else ts, cfg["dataset.has_header"],
                     cfg["dataset.min_rating"], cfg["dataset.max_rating"])


def penalty_config(cfg):
    omega = cfg["penalty.omega"]
    return PenaltyConfig(cfg["penalty.k"], cfg["penalty.lambda1"], cfg["penalty.lambda2"],
                         cfg["penalty.alpha"], cfg["penalty.xi"], cfg["penalty.smoothing"],
                         None if omega < 0 else omega)


def env_config(cfg):
    return EnvConfig(cfg["env.max_length"], cfg["env.window"], cfg["env.quit_threshold"],
                     cfg["env.cosine_threshold"], cfg["env.no_repeat"])


# ---------------------------------------------------------------- in-memory world

@dataclass
class World:
    split: DatasetSplit
    n_users: int
    n_items: int
    embeddings: EmbeddingTable
    diffusion: DiffusionModel
    beliefs: BeliefTable
    store: KGramStore
    categories: np.ndarray | None
    diffusion_curve: list

    def point_beliefs(self):
        return BeliefTable.from_point_predictions(self.embeddings.predict_all(), source="mf")


def fit_embeddings(split, n_users, n_items, cfg):
    return train_embeddings(split.train, n_users, n_items, cfg["embed.d"], cfg["embed.epochs"],
                            cfg["embed.lr"], cfg["embed.reg"], cfg["seed"])


def fit_diffusion(split, embeddings, cfg):
    sched = build_schedule(cfg["diffusion.T"], cfg["diffusion.beta_start"], cfg["diffusion.beta_end"])
    model = DiffusionModel.init(embeddings.d, sched, cfg["diffusion.hidden"],
                                cfg["diffusion.time_embed_dim"], cfg["seed"],
                                include_t1=cfg["diffusion.include_t1"])
    return train_diffusion(split.train, embeddings, model, cfg["diffusion.epochs"],
                           cfg["diffusion.batch_size"], cfg["diffusion.lr"], cfg["seed"])


def build_world(events, n_users, n_items, cfg, categories=None):
    """Split, embed, fit the diffusion model and tabulate beliefs, all in memory."""
    split = split_dataset(events, cfg["dataset.split_fraction"], cfg["seed"])
    emb = fit_embeddings(split, n_users, n_items, cfg)
    model, curve = fit_diffusion(split, emb, cfg)
    beliefs = build_belief_table(model, emb, cfg["world.M"], cfg["seed"])
    store = build_kgram_store(split.train, cfg["penalty.k"], n_items, cfg["penalty.smoothing"])
    return World(split, n_users, n_items, emb, model, beliefs, store, categories, curve)


def make_env(world, cfg, beliefs=None):
    return RecEnv(beliefs or world.beliefs, world.store, penalty_config(cfg), env_config(cfg),
                  categories=world.categories,
                  item_vectors=None if world.categories is not None else world.embeddings.item_vectors)


def new_policy(world, cfg):
    return ActorCritic.init(world.embeddings.user_vectors, world.embeddings.item_vectors,
                            cfg["policy.hidden"], cfg["policy.gamma"], cfg["policy.entropy_coef"],
                            cfg["policy.lr"], cfg["seed"])


def env_notes(cfg, source):
    return {"world_source": source,
            "quit_rule": {"window": cfg["env.window"], "quit_threshold": cfg["env.quit_threshold"],
                          "max_length": cfg["env.max_length"],
                          "cosine_threshold": cfg["env.cosine_threshold"]}}


def train_and_evaluate_variant(world, base_cfg, overrides, eval_env=None):
    """Train a fresh policy under ``overrides`` and evaluate it.

    All variants are evaluated in the same environment (the diffusion belief
    table by default) so their raw-reward metrics are comparable.
    """
    cfg = base_cfg.with_overrides(overrides)
    if cfg["world.source"] == "mf":
        train_beliefs, source = world.point_beliefs(), "mf point predictor (diffusion replaced)"
    else:
        train_beliefs, source = world.beliefs, "diffusion"
    train_env = make_env(world, cfg, train_beliefs)
    model, curve = train_policy(new_policy(world, cfg), train_env, cfg["policy.episodes"], cfg["seed"])
    eval_env = eval_env or make_env(world, base_cfg)
    notes = env_notes(cfg, source)
    notes["overrides"] = dict(overrides)
    report = evaluate(model, eval_env, cfg["eval.episodes"], cfg["seed"], cfg.fingerprint(), notes)
    return report, model, curve


def ablate_world(world, base_cfg, variants=VARIANTS):
    eval_env = make_env(world, base_cfg)

    def run(name, overrides):
        return train_and_evaluate_variant(world, base_cfg, overrides, eval_env)[0]

    return run_ablation(run, variants)


# ---------------------------------------------------------------- on-disk stages

class Layout:
    def __init__(self, out):
        self.out = Path(out)

    data = property(lambda s: s.out / "data")
    world = property(lambda s: s.out / "world")
    events = property(lambda s: s.data / "events.tsv")
    split = property(lambda s: s.data / "split.json")
    index_map = property(lambda s: s.data / "index_map.json")
    categories = property(lambda s: s.data / "categories.tsv")
    manifest = property(lambda s: s.data / "manifest.json")
    embeddings = property(lambda s: s.world / "embeddings.ckpt")
    embeddings_curve = property(lambda s: s.world / "embeddings_loss.csv")
    diffusion = property(lambda s: s.world / "diffusion.ckpt")
    diffusion_curve = property(lambda s: s.world / "diffusion_loss.csv")
    beliefs = property(lambda s: s.world / "beliefs.ckpt")
    kgram = property(lambda s: s.world / "kgram.txt")
    policy = property(lambda s: s.out / "policy" / "policy.ckpt")
    learning_curve = property(lambda s: s.out / "policy" / "learning_curve.csv")
    report_json = property(lambda s: s.out / "eval" / "report.json")
    report_txt = property(lambda s: s.out / "eval" / "report.txt")
    trajectories = property(lambda s: s.out / "eval" / "trajectories.jsonl")
    ablation = property(lambda s: s.out / "ablation")
    synthetic = property(lambda s: s.out / "synthetic")


def _guard(path, force):
    if Path(path).exists() and not force:
        raise OutputExistsError(f"{path} exists; rerun with --force to overwrite")


def echo_config(cfg):
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.resolved").write_text(cfg.resolved_text(), encoding="utf-8")


def _write_curve(path, values, name="loss"):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"epoch,{name}\n")
        for j, v in enumerate(values):
            fh.write(f"{j},{v!r}\n")


def stage_gen_synthetic(cfg, force=False):
    lay = Layout(cfg["out"])
    _guard(lay.synthetic / "events.csv", force)
    world = generate(cfg["synth.U"], cfg["synth.I"], cfg["synth.C"], cfg["synth.events_per_user"],
                     cfg["synth.sparsity_skew"], cfg["seed"], temperature=cfg["synth.temperature"],
                     stickiness=cfg["synth.stickiness"], noise=cfg["synth.noise"])
    world.write(lay.synthetic)
    s = SYNTH_SCHEMA
    snippet = {"dataset.path": str((lay.synthetic / "events.csv").resolve()),
               "dataset.delimiter": s.delimiter, "dataset.user_col": s.user_col,
               "dataset.item_col": s.item_col, "dataset.rating_col": s.rating_col,
               "dataset.timestamp_col": s.timestamp_col, "dataset.min_rating": s.min_rating,
               "dataset.max_rating": s.max_rating,
               "dataset.categories_path": str((lay.synthetic / "categories.csv").resolve())}
    (lay.synthetic / "dataset.conf").write_text(
        "".join(f"{k} = {v}\n" for k, v in snippet.items()), encoding="utf-8")
    return lay.synthetic


def _read_categories(path, item_index, n_items, delimiter=","):
    cats = np.arange(n_items) + 10**9          # unlisted items never match anything
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split(delimiter)
            if len(parts) < 2:
                raise DataError(f"{path}:{lineno}: expected 'item{delimiter}category'")
            j = item_index.get(parts[0].strip())
            if j is not None:
                cats[j] = int(parts[1])
    return cats


def stage_ingest(cfg, force=False):
    lay = Layout(cfg["out"])
    _guard(lay.manifest, force)
    path = cfg["dataset.path"]
    if not path:
        raise ConfigError("dataset.path is not set")
    if not Path(path).exists():
        raise DataError(f"interaction file not found: {path}")
    log_ = load_log(path, log_schema(cfg))
    split = split_dataset(log_.events, cfg["dataset.split_fraction"], cfg["seed"])
    lay.data.mkdir(parents=True, exist_ok=True)
    write_events(lay.events, log_.events)
    lay.split.write_text(json.dumps(split.manifest(), sort_keys=True), encoding="utf-8")
    save_index_map(lay.index_map, log_)
    cats_fp = None
    if cfg["dataset.categories_path"]:
        cats = _read_categories(cfg["dataset.categories_path"], log_.item_index(), log_.n_items)
        lay.categories.write_text("".join(f"{j}\t{c}\n" for j, c in enumerate(cats)), encoding="utf-8")
        cats_fp = fingerprint(lay.categories)
    elif lay.categories.exists():
        lay.categories.unlink()
    manifest = {"n_users": log_.n_users, "n_items": log_.n_items, "n_events": len(log_),
                "n_train": len(split.train), "n_test": len(split.test),
                "events_fingerprint": fingerprint(lay.events),
                "split_fingerprint": fingerprint(lay.split), "categories_fingerprint": cats_fp}
    lay.manifest.write_text(json.dumps(manifest, indent=1, sort_keys=True), encoding="utf-8")
    return manifest


def data_fingerprint(lay):
    if not lay.manifest.exists():
        raise StalenessError(f"{lay.manifest} missing; run ingest first")
    return fingerprint(lay.manifest)


def load_ingested(lay):
    data_fingerprint(lay)
    manifest = json.loads(lay.manifest.read_text(encoding="utf-8"))
    if fingerprint(lay.events) != manifest["events_fingerprint"] or \
            fingerprint(lay.split) != manifest["split_fingerprint"]:
        raise StalenessError("ingested files changed since the manifest was written; rerun ingest")
    events = read_events(lay.events)
    by_key = {(e.user, e.position): e for e in events}
    sm = json.loads(lay.split.read_text(encoding="utf-8"))
    split = DatasetSplit([by_key[tuple(k)] for k in sm["train"]], [by_key[tuple(k)] for k in sm["test"]],
                         sm["split_fraction"], sm["seed"])
    cats = None
    if lay.categories.exists():
        cats = np.array([int(line.split("\t")[1]) for line in
                         lay.categories.read_text(encoding="utf-8").splitlines()])
    return manifest, split, cats


def _train_embeddings_to_disk(cfg, lay):
    manifest, split, _ = load_ingested(lay)
    emb = fit_embeddings(split, manifest["n_users"], manifest["n_items"], cfg)
    emb.meta["data_fingerprint"] = data_fingerprint(lay)
    lay.world.mkdir(parents=True, exist_ok=True)
    emb.save(lay.embeddings)
    _write_curve(lay.embeddings_curve, emb.loss_curve, "train_mse")
    return emb


def stage_train_embeddings(cfg, force=False):
    lay = Layout(cfg["out"])
    _guard(lay.embeddings, force)
    _train_embeddings_to_disk(cfg, lay)
    return fingerprint(lay.embeddings)


def stage_train_world(cfg, force=False):
    lay = Layout(cfg["out"])
    _guard(lay.beliefs, force)
    manifest, split, _ = load_ingested(lay)
    _train_embeddings_to_disk(cfg, lay)
    emb = EmbeddingTable.load(lay.embeddings)
    emb_fp = fingerprint(lay.embeddings)
    model, curve = fit_diffusion(split, emb, cfg)
    model.save(lay.diffusion, {"embeddings_fingerprint": emb_fp})
    _write_curve(lay.diffusion_curve, curve)
    model = DiffusionModel.load(lay.diffusion)
    diff_fp = fingerprint(lay.diffusion)
    beliefs = build_belief_table(model, emb, cfg["world.M"], cfg["seed"], fingerprint=diff_fp)
    beliefs.save(lay.beliefs, {"diffusion_fingerprint": diff_fp, "embeddings_fingerprint": emb_fp})
    store = build_kgram_store(split.train, cfg["penalty.k"], manifest["n_items"], cfg["penalty.smoothing"])
    store.save(lay.kgram)
    return {"embeddings": emb_fp, "diffusion": diff_fp, "beliefs": fingerprint(lay.beliefs)}


def load_world(cfg, lay):
    """Reload world artifacts, checking the fingerprint chain."""
    for p in (lay.embeddings, lay.diffusion, lay.beliefs, lay.kgram):
        if not p.exists():
            raise StalenessError(f"{p} missing; run train-world first")
    data_fp = data_fingerprint(lay)
    emb_fp, diff_fp = fingerprint(lay.embeddings), fingerprint(lay.diffusion)
    if read_header(lay.embeddings)["meta"].get("data_fingerprint") != data_fp:
        raise StalenessError("embeddings were trained on different ingested data; rerun train-world")
    if read_header(lay.diffusion)["meta"].get("embeddings_fingerprint") != emb_fp:
        raise StalenessError("diffusion checkpoint is stale relative to embeddings; rerun train-world")
    bmeta = read_header(lay.beliefs)["meta"]
    if bmeta.get("diffusion_fingerprint") != diff_fp or bmeta.get("embeddings_fingerprint") != emb_fp:
        raise StalenessError("belief table is stale relative to the diffusion model; rerun train-world")
    manifest, split, cats = load_ingested(lay)
    emb = EmbeddingTable.load(lay.embeddings)
    world = World(split, manifest["n_users"], manifest["n_items"], emb, DiffusionModel.load(lay.diffusion),
                  BeliefTable.load(lay.beliefs), KGramStore.load(lay.kgram), cats, [])
    return world, fingerprint(lay.beliefs)


def stage_train_policy(cfg, force=False):
    lay = Layout(cfg["out"])
    _guard(lay.policy, force)
    world, beliefs_fp = load_world(cfg, lay)
    beliefs = world.point_beliefs() if cfg["world.source"] == "mf" else world.beliefs
    env = make_env(world, cfg, beliefs)
    model, curve = train_policy(new_policy(world, cfg), env, cfg["policy.episodes"], cfg["seed"])
    lay.policy.parent.mkdir(parents=True, exist_ok=True)
    model.save(lay.policy, {"beliefs_fingerprint": beliefs_fp,
                            "embeddings_fingerprint": fingerprint(lay.embeddings),
                            "config_fingerprint": cfg.fingerprint()})
    write_curve(lay.learning_curve, curve)
    return fingerprint(lay.policy)


def stage_eval(cfg, force=False):
    lay = Layout(cfg["out"])
    _guard(lay.report_json, force)
    if not lay.policy.exists():
        raise StalenessError(f"{lay.policy} missing; run train-policy first")
    world, beliefs_fp = load_world(cfg, lay)
    meta = read_header(lay.policy)["meta"]
    if meta.get("beliefs_fingerprint") != beliefs_fp or \
            meta.get("embeddings_fingerprint") != fingerprint(lay.embeddings):
        raise StalenessError("policy was trained against a different world model; rerun train-policy")
    model = ActorCritic.load(lay.policy, world.embeddings.user_vectors, world.embeddings.item_vectors)
    env = make_env(world, cfg)
    trajectories = evaluation_rollouts(model, env, cfg["eval.episodes"], cfg["seed"])
    report = summarize(trajectories, cfg.fingerprint(), cfg["seed"], env_notes(cfg, "diffusion"))
    lay.report_json.parent.mkdir(parents=True, exist_ok=True)
    lay.report_json.write_text(report.to_json(), encoding="utf-8")
    lay.report_txt.write_text(report.to_text(), encoding="utf-8")
    dump_trajectories(lay.trajectories, trajectories)
    return report


def stage_ablate(cfg, force=False):
    lay = Layout(cfg["out"])
    _guard(lay.ablation / "comparison.txt", force)
    world, _ = load_world(cfg, lay)
    results, failed = ablate_world(world, cfg)
    lay.ablation.mkdir(parents=True, exist_ok=True)
    for name, rep in results.items():
        body = rep.to_json() if not isinstance(rep, str) else json.dumps({"error": rep}) + "\n"
        (lay.ablation / f"{name}.json").write_text(body, encoding="utf-8")
    (lay.ablation / "comparison.txt").write_text(comparison_table(results), encoding="utf-8")
    return results, failed


__all__ = ["VARIANTS", "VARIANT_OVERRIDES", "World", "build_world", "make_env", "new_policy",
           "train_and_evaluate_variant", "ablate_world", "Layout", "OutputExistsError"]
