"""File-level pipeline stages shared by the command line and the estimator.

Every stage reads and writes under one working directory::

    data/<mode>/        bc_{progress,low,high}.jsonl, expert_rl.jsonl, manifest.json
    data/<mode>/        collected.jsonl, collect_manifest.json
    ckpt/               bc_<mode>.npz, rl_<mode>[_<tag>].npz
    reports/            eval and ablation tables, token traces

Stages fail with ``MissingArtifact`` naming the exact path they need.
"""

from __future__ import annotations

import csv
import json
import logging
from collections import OrderedDict
from dataclasses import replace
from pathlib import Path
from typing import Mapping, Optional

from .config import RunConfig
from .datasets import (bc_pairs, build_bc_datasets, collect, expert_sweep, expert_transitions,
                       file_digest, load_samples, load_transitions, mix, save_samples,
                       save_transitions, write_manifest)
from .exceptions import MissingArtifact
from .harness import (ablation_suite, evaluate, format_report, format_table, rollout,
                      token_trace, trace_rows)
from .expert import ScriptedExpert
from .policy import PolicyBundle
from .training import Trainer
from .worldsim import generate_tasks

log = logging.getLogger(__name__)

BC_FILES = OrderedDict([("progress", "bc_progress.jsonl"), ("low", "bc_low.jsonl"),
                        ("high", "bc_high.jsonl")])
EVAL_COLUMNS = ("n", "success_rate", "avg_steps_success", "avg_steps_all", "timeouts")


class Workdir:
    def __init__(self, root):
        self.root = Path(root)

    def data(self, mode: str) -> Path:
        return self.root / "data" / mode

    def bc_ckpt(self, mode: str) -> Path:
        return self.root / "ckpt" / f"bc_{mode}.npz"

    def rl_ckpt(self, mode: str, tag: str = "") -> Path:
        return self.root / "ckpt" / (f"rl_{mode}_{tag}.npz" if tag else f"rl_{mode}.npz")

    @property
    def reports(self) -> Path:
        return self.root / "reports"

    def ensure(self, path: Path) -> Path:
        path.parent.mkdir(parents=True, exist_ok=True)
        return path


def require(path) -> Path:
    path = Path(path)
    if not path.exists():
        raise MissingArtifact(str(path))
    return path


def train_tasks(cfg: RunConfig):
    return generate_tasks(cfg.world, "Seen", cfg.n_train_tasks, cfg.data_seed)


def gen_data(cfg: RunConfig, workdir) -> dict:
    """Expert sweep over the training tasks, then BC datasets and expert transitions."""
    wd = Workdir(workdir)
    out = wd.data(cfg.mode)
    out.mkdir(parents=True, exist_ok=True)
    trajs = expert_sweep(train_tasks(cfg), cfg.data_seed, cfg.world)
    d_p, d_l, d_h = build_bc_datasets(trajs, cfg.mode)
    files, counts = {}, {}
    for head, ds in zip(BC_FILES, (d_p, d_l, d_h)):
        path = out / BC_FILES[head]
        counts[f"bc_{head}"] = save_samples(path, ds)
        files[f"bc_{head}"] = path
    rl = expert_transitions(trajs, cfg.mode, cfg.train.progress_reward)
    counts["expert_rl"] = save_transitions(out / "expert_rl.jsonl", rl)
    files["expert_rl"] = out / "expert_rl.jsonl"
    counts["episodes"] = len(trajs)
    counts["steps"] = sum(len(t.steps) for t in trajs)
    counts["subtasks"] = sum(len(t.subtask_boundaries) for t in trajs)
    return write_manifest(out / "manifest.json", files, counts, mode=cfg.mode,
                          split="Seen", n_tasks=cfg.n_train_tasks, seed=cfg.data_seed)


def load_bc_pairs(cfg: RunConfig, workdir) -> list:
    data = Workdir(workdir).data(cfg.mode)
    require(data / "manifest.json")
    sets = [load_samples(require(data / name)) for name in BC_FILES.values()]
    return bc_pairs(*sets)


def train_bc_stage(cfg: RunConfig, workdir, on_epoch=None) -> Path:
    wd = Workdir(workdir)
    pairs = load_bc_pairs(cfg, workdir)
    bundle = PolicyBundle(dim=cfg.train.dim, seed=cfg.train.seed, dtype=cfg.train.precision)
    metrics = wd.ensure(wd.reports / f"metrics_bc_{cfg.mode}.jsonl")
    metrics.unlink(missing_ok=True)
    Trainer(bundle, cfg.train, metrics).train_bc(pairs, on_epoch=on_epoch)
    path = wd.ensure(wd.bc_ckpt(cfg.mode))
    bundle.save(path)
    return path


def collect_stage(cfg: RunConfig, workdir) -> dict:
    wd = Workdir(workdir)
    bundle = PolicyBundle.load(require(wd.bc_ckpt(cfg.mode)))
    tasks = generate_tasks(cfg.world, "Seen", cfg.n_collect_tasks, cfg.collect_seed)
    trans, records = collect(bundle, tasks, cfg.temperatures, cfg.collect_seed, cfg.mode,
                             cfg.world, cfg.train.progress_reward, return_records=True,
                             cap=cfg.subtask_cap)
    out = wd.data(cfg.mode)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "collected.jsonl"
    n = save_transitions(path, trans)
    return write_manifest(out / "collect_manifest.json", {"collected": path},
                          {"collected": n, "episodes": len(records),
                           "successes": sum(r.success for r in records)},
                          mode=cfg.mode, seed=cfg.collect_seed)


def train_rl_stage(cfg: RunConfig, workdir, tag: str = "") -> Path:
    """Offline RL from the BC checkpoint on the configured expert:collected mixture."""
    wd = Workdir(workdir)
    data = wd.data(cfg.mode)
    bundle = PolicyBundle.load(require(wd.bc_ckpt(cfg.mode)))
    expert = load_transitions(require(data / "expert_rl.jsonl"))
    collected = []
    if cfg.mix_ratio[1]:
        collected = load_transitions(require(data / "collected.jsonl"))
    dataset = mix(expert, collected, cfg.mix_ratio, cfg.train.seed)
    name = f"{cfg.mode}_{tag}" if tag else cfg.mode
    metrics = wd.ensure(wd.reports / f"metrics_rl_{name}.jsonl")
    metrics.unlink(missing_ok=True)
    Trainer(bundle, cfg.train, metrics).train_offline(dataset)
    path = wd.ensure(wd.rl_ckpt(cfg.mode, tag))
    bundle.save(path)
    return path


def resolve_checkpoint(cfg: RunConfig, workdir, checkpoint: str) -> Path:
    wd = Workdir(workdir)
    if checkpoint == "bc":
        return require(wd.bc_ckpt(cfg.mode))
    if checkpoint == "rl":
        return require(wd.rl_ckpt(cfg.mode))
    return require(checkpoint)


def eval_stage(cfg: RunConfig, workdir, checkpoint: str = "rl", split: str = "Unseen",
               summarizer: str = "learned") -> tuple:
    """Evaluate one checkpoint; returns ``(summary, report_path)``."""
    wd = Workdir(workdir)
    agent = ScriptedExpert() if checkpoint == "expert" else PolicyBundle.load(
        resolve_checkpoint(cfg, workdir, checkpoint))
    if checkpoint == "expert":
        summarizer = "oracle"
    summary = evaluate(agent, split, cfg.n_eval_tasks, cfg.eval_seed, cfg.mode, summarizer,
                       cfg.world, cap=cfg.subtask_cap)
    name = Path(checkpoint).stem if checkpoint not in ("bc", "rl", "expert") else checkpoint
    path = wd.ensure(wd.reports / f"eval_{name}_{cfg.mode}_{split}.tsv")
    path.write_text(format_table(summary, EVAL_COLUMNS))
    return summary, path


def tokens_stage(cfg: RunConfig, workdir, n_episodes: int = 50, checkpoint: str = "expert",
                 split: str = "Seen") -> Path:
    """Per-step token counts for the three paradigms, one TSV per episode.

    Each TSV has exactly the three count columns; the step index is the row
    number. ``tokens.jsonl`` repeats the rows with explicit episode and step.
    """
    wd = Workdir(workdir)
    if checkpoint == "expert":
        agent, summarizer = ScriptedExpert(), "oracle"
    else:
        agent = PolicyBundle.load(resolve_checkpoint(cfg, workdir, checkpoint))
        summarizer = "learned"
    out = wd.reports / "tokens"
    out.mkdir(parents=True, exist_ok=True)
    tasks = generate_tasks(cfg.world, split, n_episodes, cfg.eval_seed)
    with open(out / "tokens.jsonl", "w") as js:
        for i, task in enumerate(tasks):
            rec = rollout(agent, task, cfg.eval_seed + i, "full", summarizer, cfg.world,
                          cfg.subtask_cap)
            rows = trace_rows(token_trace(rec))
            with open(out / f"episode_{i:03d}.tsv", "w", newline="") as fh:
                w = csv.writer(fh, delimiter="\t")
                w.writerow(["standard", "hrl", "stephrl"])
                for row in rows:
                    w.writerow([row["standard"], row["hrl"], row["stephrl"]])
            for row in rows:
                js.write(json.dumps({"episode": i, "task_id": task.task_id, **row}) + "\n")
    return out


def checkpoint_map(workdir) -> "OrderedDict":
    """Variant and sweep checkpoints found under ``ckpt/``."""
    wd = Workdir(workdir)
    out = OrderedDict([("full", wd.rl_ckpt("full")), ("nolp", wd.rl_ckpt("nolp")),
                       ("nohier", wd.rl_ckpt("nohier")), ("bc", wd.bc_ckpt("full"))])
    for path in sorted((wd.root / "ckpt").glob("rl_full_*.npz")):
        tag = path.stem[len("rl_full_"):]
        if "=" in tag:
            out[tag] = path
    return out


def ablate_stage(cfg: RunConfig, workdir, checkpoints: Optional[Mapping] = None) -> tuple:
    wd = Workdir(workdir)
    ckpts = checkpoint_map(workdir) if checkpoints is None else checkpoints
    report = ablation_suite({k: str(v) for k, v in ckpts.items()}, cfg.n_eval_tasks,
                            cfg.eval_seed, "Unseen", cfg.world, cfg.subtask_cap)
    path = wd.ensure(wd.reports / "ablation.tsv")
    path.write_text(format_report(report))
    return report, path


def with_overrides(cfg: RunConfig, **train) -> RunConfig:
    return replace(cfg, train=replace(cfg.train, **train))


def digest_tree(root) -> dict:
    """sha256 of every file under ``root``, for idempotence checks."""
    root = Path(root)
    return {str(p.relative_to(root)): file_digest(p) for p in sorted(root.rglob("*"))
            if p.is_file()}
