"""Pipeline stages.  Each reads its inputs from the output directory, writes
its artifacts there under fixed names, and can be re-run on its own.
"""

import csv
import math
import os
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from .. import envsim
from ..datakit import (collect_dataset, concat, default_controller, goal_histogram,
                       load_dataset, relabel_hindsight, save_dataset)
from ..equibounds import AugmentConfig, EquivariantBoundsLearner, TranslationBounds, augment_dataset
from ..exceptions import EdasError, MissingArtifact, NumericalFailure
from ..modellearn import DynamicsModel
from ..offlinerl import CrrConfig, GaussianPolicy, evaluate_policy, train_crr
from .config import stage_seed

DATASET = "dataset.jsonl"
MODEL = "model.json"
MODEL_META = "model_meta.json"
BOUNDS = "bounds.json"
BOUNDS_TRACE = "bounds_trace.csv"
AUGMENTED = "augmented.jsonl"
POLICY = "policy.json"
POLICY_BASE = "policy_base.json"
CRITIC = "critic.json"
CRITIC_BASE = "critic_base.json"
RETURNS = "returns.csv"
SUMMARY = "summary.csv"
GOAL_HIST = "goal_hist.csv"
RESOLVED = "config.resolved.txt"
LOCK = ".lock"

STAGES = ("generate", "train-model", "learn-bounds", "augment", "train-policy", "evaluate",
          "report")

# (policy artifact, split) for each summary row
SUMMARY_ROWS = (("unaugmented", "train"), ("unaugmented", "test"), ("augmented", "test"))


def _need(out, *names):
    for name in names:
        if not (out / name).exists():
            raise MissingArtifact(f"missing artifact {out / name}")


@contextmanager
def locked(out):
    """Exclusive lock on an output directory for the duration of a stage."""
    out.mkdir(parents=True, exist_ok=True)
    path = out / LOCK
    try:
        fd = os.open(path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise EdasError(f"output directory {out} is locked by {path}") from None
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield
    finally:
        path.unlink(missing_ok=True)


def write_metrics(out, stage, rows):
    """``metrics_<stage>.csv`` with ``stage,key,value,step`` rows."""
    with open(out / f"metrics_{stage.replace('-', '_')}.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["stage", "key", "value", "step"])
        for key, value, step in rows:
            value = float(value)
            if not math.isfinite(value):
                raise NumericalFailure(f"metric {key} is not finite", step)
            w.writerow([stage, key, repr(value), step])


def _env(cfg):
    return envsim.make_env(cfg["env"])


def _noise(cfg):
    if not cfg["noise.enabled"]:
        return None
    return envsim.NoiseRegion(cfg["noise.dim"], cfg["noise.threshold"], cfg["noise.amplitude"])


def generate(cfg, out):
    seed = stage_seed(cfg["seed"], 0)
    ctrl = default_controller(cfg["env"], kp=cfg["data.kp"], kd=cfg["data.kd"],
                              horizon=cfg["data.horizon"], action_noise=cfg["data.action_noise"])
    d = collect_dataset(_env(cfg), ctrl, cfg["data.n_traj"], cfg["data.goal_source"],
                        np.random.default_rng(seed), noise=_noise(cfg),
                        tolerance=cfg["data.tolerance"], seed=seed)
    reach = float(d.r[d.final_rows()].mean())
    if cfg["data.her"]:
        d = concat([d, relabel_hindsight(d, tolerance=cfg["data.tolerance"])])
    save_dataset(d, out / DATASET)
    write_metrics(out, "generate", [("transitions", len(d), 0), ("reach_rate", reach, 0)])


def make_model(cfg):
    m = cfg.section("model")
    return DynamicsModel(hidden_dims=m["hidden"], learning_rate=m["learning_rate"],
                         batch_size=m["batch_size"], epochs=m["epochs"],
                         validation_fraction=m["validation_fraction"],
                         predict_delta=m["predict_delta"], weight_decay=m["weight_decay"],
                         random_state=stage_seed(cfg["seed"], 1))


def train_model(cfg, out):
    _need(out, DATASET)
    d = load_dataset(out / DATASET)
    model = make_model(cfg).fit_dataset(d)
    model.save(out / MODEL, out / MODEL_META)
    rows = [("train_loss", v, i) for i, v in enumerate(model.report_.epoch_loss)]
    if not math.isnan(model.report_.val_loss):
        rows.append(("val_loss", model.report_.val_loss, len(model.report_.epoch_loss)))
    write_metrics(out, "train-model", rows)


def make_learner(cfg, model=None):
    b = cfg.section("bounds")
    return EquivariantBoundsLearner(
        model=model, variant=b["variant"], lambda_e=b["lambda_e"], lambda_v=b["lambda_v"],
        learning_rate=b["learning_rate"], n_iter=b["n_iter"], batch_size=b["batch_size"],
        offsets_per_sample=b["offsets_per_sample"], entropy_floor=b["entropy_floor"],
        init_width=b["init_width"], n_passes=cfg["augment.passes"],
        random_state=stage_seed(cfg["seed"], 2))


def learn_bounds(cfg, out):
    _need(out, DATASET, MODEL, MODEL_META)
    d = load_dataset(out / DATASET)
    model = DynamicsModel.load(out / MODEL, out / MODEL_META)
    learner = make_learner(cfg, model).fit_dataset(d)
    learner.bounds_.save(out / BOUNDS)
    learner.trace_.write_csv(out / BOUNDS_TRACE)
    b = learner.bounds_
    rows = [(f"width_{i}", w, len(learner.trace_)) for i, w in enumerate(b.width)]
    rows.append(("loss_eq", learner.trace_.loss_eq[-1], len(learner.trace_)))
    write_metrics(out, "learn-bounds", rows)


def augment(cfg, out):
    _need(out, DATASET, BOUNDS)
    d = load_dataset(out / DATASET)
    bounds = TranslationBounds.load(out / BOUNDS)
    aug = augment_dataset(d, bounds, AugmentConfig(cfg["augment.passes"], stage_seed(cfg["seed"], 3),
                                                   cfg["augment.per"]))
    save_dataset(aug, out / AUGMENTED)
    write_metrics(out, "augment", [("transitions", len(aug), 0)])


def crr_config(cfg):
    c = cfg.section("crr")
    return CrrConfig(gamma=c["gamma"], beta=c["beta"], m=c["m"], weight_clip=c["weight_clip"],
                     policy_lr=c["policy_lr"], critic_lr=c["critic_lr"],
                     batch_size=c["batch_size"], steps=c["steps"],
                     target_period=c["target_period"], hidden=c["hidden"],
                     seed=stage_seed(cfg["seed"], 4))


def train_policy(cfg, out):
    """CRR on ``D ∪ D'`` (policy.json) and on ``D`` alone (policy_base.json)."""
    _need(out, DATASET, AUGMENTED)
    d = load_dataset(out / DATASET)
    full = concat([d, load_dataset(out / AUGMENTED)])
    ccfg = crr_config(cfg)
    rows = []
    for tag, data, pol_name, crit_name in (("augmented", full, POLICY, CRITIC),
                                           ("unaugmented", d, POLICY_BASE, CRITIC_BASE)):
        policy, critic, log = train_crr(data, ccfg, log_every=cfg["crr.log_every"])
        policy.save(out / pol_name)
        critic.save(out / crit_name)
        for step, c_loss, p_loss, w in log:
            rows += [(f"{tag}_critic_loss", c_loss, step), (f"{tag}_policy_loss", p_loss, step),
                     (f"{tag}_mean_weight", w, step)]
    write_metrics(out, "train-policy", rows)


def evaluate(cfg, out):
    _need(out, POLICY, POLICY_BASE)
    env = _env(cfg)
    policies = {"augmented": GaussianPolicy.load(out / POLICY),
                "unaugmented": GaussianPolicy.load(out / POLICY_BASE)}
    seed = stage_seed(cfg["seed"], 5)
    reports = {}
    for tag, policy in policies.items():
        # same seed for both policies: identical start states and goals per split
        reports[tag] = evaluate_policy(env, policy, ("train", "test"), cfg["eval.episodes"], seed,
                                       cfg["eval.horizon"], cfg["data.tolerance"])
    with open(out / RETURNS, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["policy", "split", "episode", "return"])
        for tag, split in SUMMARY_ROWS:
            for i, r in enumerate(reports[tag].returns[split]):
                w.writerow([tag, split, i, repr(r)])
    with open(out / SUMMARY, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["policy", "split", "mean_return", "stderr", "episodes"])
        for tag, split in SUMMARY_ROWS:
            rep = reports[tag]
            w.writerow([tag, split, repr(rep.mean(split)), repr(rep.stderr(split)),
                        rep.episodes(split)])
    rows = [(f"{tag}_{split}_mean", reports[tag].mean(split), 0)
            for tag in policies for split in ("train", "test")]
    write_metrics(out, "evaluate", rows)
    return reports


def report(cfg, out):
    """Plot data: checks the trace and returns exist, writes the goal histogram."""
    _need(out, DATASET, BOUNDS_TRACE, RETURNS)
    sources = [("original", load_dataset(out / DATASET))]
    if (out / AUGMENTED).exists():
        sources.append(("augmented", load_dataset(out / AUGMENTED)))
    with open(out / GOAL_HIST, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["source", "x_lo", "x_hi", "y_lo", "y_hi", "count"])
        for tag, d in sources:
            counts, xe, ye, _ = goal_histogram(d)
            for i in range(len(xe) - 1):
                for j in range(len(ye) - 1):
                    w.writerow([tag, repr(float(xe[i])), repr(float(xe[i + 1])),
                                repr(float(ye[j])), repr(float(ye[j + 1])), int(counts[i, j])])
    write_metrics(out, "report", [(f"goal_entropy_{tag}", goal_histogram(d)[3], 0)
                                  for tag, d in sources])


RUNNERS = {
    "generate": generate,
    "train-model": train_model,
    "learn-bounds": learn_bounds,
    "augment": augment,
    "train-policy": train_policy,
    "evaluate": evaluate,
    "report": report,
}


def run_stage(name, cfg, out):
    out = Path(out)
    with locked(out):
        (out / RESOLVED).write_text(cfg.dumps())
        return RUNNERS[name](cfg, out)


def run_pipeline(cfg, out):
    """All stages in order; returns the evaluation reports."""
    result = None
    for name in STAGES:
        r = run_stage(name, cfg, out)
        if name == "evaluate":
            result = r
    return result
