"""Expert demonstrations, the three BC datasets, RL transitions and the offline mixture.

Everything here is derived from ``RolloutRecord`` objects produced by the
harness, so the inputs stored in a dataset are exactly the inputs a policy
sees at rollout time. Variant datasets (no local progress, flat) are
relabelled from the same expert records.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .exceptions import AnnotationGap, EmptySource, PlanFailure
from .expert import ScriptedExpert
from .harness import (COLLECT_TEMPERATURES, SUBTASK_CAP, PolicyAgent, RolloutRecord, StepLog, SubtaskLog,
                      episode_seed, rollout)
from .policy import (HEADS, PolicyInput, done_token, high_input, low_input, progress_input,
                     with_eos)
from .progress import EpisodeProgress, LocalProgress, Subtask, init_progress, oracle_update
from .progress import parse as parse_progress
from .vocab import VOCAB, Vocabulary
from .worldsim import ACT_MAX, TaskInstance, WorldConfig, parse_observation

SOURCES = ("Expert", "Collected")


# --------------------------------------------------------------------------
# expert trajectories


@dataclass
class ExpertTrajectory:
    task: TaskInstance
    seed: int
    steps: list  # (obs_tokens, action_tokens, extrinsic_reward)
    subtask_boundaries: list  # (Subtask, start_t, end_t)
    progress_labels: list  # LocalProgress seen by the low level at each step
    record: RolloutRecord

    def __post_init__(self):
        t = 0
        for _, start, end in self.subtask_boundaries:
            if start != t or end <= start:
                raise AnnotationGap("subtask boundaries must partition the episode")
            t = end
        if t != len(self.steps):
            raise AnnotationGap("subtask boundaries do not cover every step")
        if len(self.progress_labels) != len(self.steps):
            raise AnnotationGap("a step lacks its progress label")


def scripted_expert(task: TaskInstance, seed: int, config: WorldConfig = WorldConfig()) -> ExpertTrajectory:
    """Run the scripted expert with the oracle summarizer and annotate the episode."""
    rec = rollout(ScriptedExpert(), task, seed, "full", "oracle", config)
    if not rec.success:
        raise PlanFailure(f"expert failed on {task.task_id} (seed {seed})")
    steps = [(s.obs, s.action, s.reward) for s in rec.steps]
    bounds = [(Subtask.parse(sub.tokens), sub.start, sub.end) for sub in rec.subtasks]
    labels = [parse_progress(s.progress) for s in rec.steps]
    return ExpertTrajectory(task, seed, steps, bounds, labels, rec)


def expert_sweep(tasks: Sequence[TaskInstance], seed: int,
                 config: WorldConfig = WorldConfig()) -> list:
    return [scripted_expert(t, episode_seed(t, seed), config) for t in tasks]


# --------------------------------------------------------------------------
# relabelling for the ablation variants


def _next_obs(rec: RolloutRecord, i: int) -> tuple:
    return rec.steps[i + 1].obs if i + 1 < len(rec.steps) else rec.final_obs


def final_progress(rec: RolloutRecord, sub: SubtaskLog) -> LocalProgress:
    """Oracle progress after the last action of a subtask (never a training target)."""
    last = rec.steps[sub.end - 1]
    obs = parse_observation(_next_obs(rec, sub.end - 1))
    return oracle_update(Subtask.parse(sub.tokens), last.action, obs, parse_progress(last.progress))


def episode_progress_labels(rec: RolloutRecord) -> list:
    """Whole-episode summaries per step: finished subtasks' final sentences plus the current one."""
    finals = [final_progress(rec, sub) for sub in rec.subtasks]
    out = []
    for s in rec.steps:
        out.append(EpisodeProgress.compose(finals[: s.k], parse_progress(s.progress)).tokens)
    return out


def relabel(rec: RolloutRecord, mode: str) -> RolloutRecord:
    """Rebuild a full-mode record's policy inputs for another variant."""
    if mode == "full":
        return rec
    if rec.mode != "full":
        raise ValueError("only full-mode records can be relabelled")
    c = rec.task.instruction
    if mode == "nolp":
        subs = []
        for sub in rec.subtasks:
            hi = high_input(c, sub.high_input.segment("completed"), None,
                            sub.high_input.segment("obs"), provenance=(None, None, sub.start))
            subs.append(replace(sub, high_input=hi, final_progress=()))
        steps = []
        for s in rec.steps:
            lin = low_input(rec.subtasks[s.k].tokens, None, s.obs, provenance=(None, s.t))
            steps.append(replace(s, progress=(), low_input=lin, progress_input=None,
                                 context_len_low=len(lin)))
        return replace(rec, mode="nolp", steps=steps, subtasks=subs)
    if mode == "nohier":
        labels = episode_progress_labels(rec)
        steps = []
        total = 0.0
        for i, s in enumerate(rec.steps):
            pin = None
            if i > 0:
                prev = rec.steps[i - 1]
                pin = progress_input(None, prev.action[:ACT_MAX], s.obs, labels[i - 1],
                                     provenance=(None, s.t - 1, s.t, None), instruction=c)
            lin = low_input(None, labels[i], s.obs, provenance=(None, None, s.t), instruction=c)
            total += s.reward
            steps.append(replace(s, k=0, progress=labels[i], low_input=lin, progress_input=pin,
                                 done_flag=total >= 1.0, rhat=s.reward, context_len_low=len(lin),
                                 context_len_high=None))
        sub = SubtaskLog(0, (), None, 0, len(steps), "episode_end", (), rec.score, rec.success)
        return replace(rec, mode="nohier", steps=steps, subtasks=[sub])
    raise ValueError(f"unknown mode {mode}")


# --------------------------------------------------------------------------
# BC datasets


@dataclass(frozen=True)
class Sample:
    """One input-target pair; ``target`` excludes the end token."""

    input: PolicyInput
    target: tuple

    @property
    def head(self) -> str:
        return self.input.head


def samples_from_record(rec: RolloutRecord) -> tuple:
    """``(D_p, D_l, D_h)`` for one episode."""
    d_p, d_l, d_h = [], [], []
    for sub in rec.subtasks:
        if sub.high_input is not None:
            d_h.append(Sample(sub.high_input, tuple(sub.tokens)))
    for i, s in enumerate(rec.steps):
        d_l.append(Sample(s.low_input, tuple(s.action) + (done_token(s.done_flag),)))
        first_of_subtask = i == 0 or rec.steps[i - 1].k != s.k
        if rec.mode == "nolp":
            continue
        if s.progress_input is None:
            if not first_of_subtask:
                raise AnnotationGap(f"step {s.t} of {rec.task.task_id} lacks a progress label")
            continue
        d_p.append(Sample(s.progress_input, tuple(s.progress)))
    return d_p, d_l, d_h


def build_bc_datasets(trajs: Iterable[ExpertTrajectory], mode: str = "full") -> tuple:
    d_p, d_l, d_h = [], [], []
    for traj in trajs:
        p, l, h = samples_from_record(relabel(traj.record, mode))
        d_p += p
        d_l += l
        d_h += h
    return d_p, d_l, d_h


def bc_pairs(*datasets: Sequence[Sample]) -> list:
    """Flatten datasets into ``(input, target + end token)`` training pairs."""
    return [(s.input, with_eos(s.target)) for ds in datasets for s in ds]


# --------------------------------------------------------------------------
# RL transitions


@dataclass(frozen=True)
class RLTransition:
    head: str
    state: PolicyInput
    action: tuple
    reward: float
    next_state: Optional[PolicyInput]
    terminal: bool
    source: str
    success: bool


def transitions_from_record(rec: RolloutRecord, source: str,
                            progress_reward: str = "mirror") -> list:
    """Step-level transitions for every head present in the record's mode."""
    out = []
    steps = rec.steps
    for i, s in enumerate(steps):
        nxt = steps[i + 1] if i + 1 < len(steps) and steps[i + 1].k == s.k else None
        out.append(RLTransition("low", s.low_input, tuple(s.action) + (done_token(s.done_flag),),
                                s.rhat, nxt.low_input if nxt else None, nxt is None, source,
                                rec.success))
        if s.progress_input is not None:
            reward = s.rhat if progress_reward == "mirror" else 0.0
            nxt_p = nxt.progress_input if nxt else None
            out.append(RLTransition("progress", s.progress_input, tuple(s.progress), reward,
                                    nxt_p, nxt is None, source, rec.success))
    subs = [sub for sub in rec.subtasks if sub.high_input is not None]
    for j, sub in enumerate(subs):
        nxt = subs[j + 1] if j + 1 < len(subs) else None
        out.append(RLTransition("high", sub.high_input, tuple(sub.tokens), sub.ret,
                                nxt.high_input if nxt else None, nxt is None, source,
                                rec.success))
    return out


def expert_transitions(trajs: Iterable[ExpertTrajectory], mode: str = "full",
                       progress_reward: str = "mirror") -> list:
    out = []
    for traj in trajs:
        out += transitions_from_record(relabel(traj.record, mode), "Expert", progress_reward)
    return out


def collect(bundle, tasks: Sequence[TaskInstance], temperatures: Optional[Mapping] = None,
            seed: int = 0, mode: str = "full", config: WorldConfig = WorldConfig(),
            progress_reward: str = "mirror", return_records: bool = False,
            cap: int = SUBTASK_CAP):
    """Roll out the policy with exploration temperatures and keep every episode."""
    agent = PolicyAgent(bundle, COLLECT_TEMPERATURES if temperatures is None else temperatures)
    out, records = [], []
    for task in tasks:
        rec = rollout(agent, task, episode_seed(task, seed), mode, "learned", config, cap)
        records.append(rec)
        out += transitions_from_record(rec, "Collected", progress_reward)
    return (out, records) if return_records else out


def by_head(transitions: Iterable[RLTransition]) -> dict:
    out = {h: [] for h in HEADS}
    for tr in transitions:
        out[tr.head].append(tr)
    return out


def mix(expert: Sequence[RLTransition], collected: Sequence[RLTransition],
        ratio=(1, 2), seed: int = 0) -> dict:
    """Per-head offline dataset at ``expert : collected = r1 : r2``.

    Whichever source is in excess is subsampled by seed, so the ratio holds
    without duplicating anything.
    """
    r1, r2 = ratio
    if not expert:
        raise EmptySource("expert source is empty")
    if r2 and not collected:
        raise EmptySource("collected source is empty")
    rng = np.random.default_rng(seed)
    exp_h, col_h = by_head(expert), by_head(collected)
    out = {}
    for head in HEADS:
        e, c = exp_h[head], col_h[head]
        if r2:
            want = int(round(len(e) * r2 / r1))
            if want < len(c):
                c = _subsample(c, want, rng)
            elif want > len(c):
                e = _subsample(e, int(round(len(c) * r1 / r2)), rng)
        else:
            c = []
        merged = list(e) + list(c)
        order = rng.permutation(len(merged))
        out[head] = [merged[i] for i in order]
    return out


def _subsample(items, size, rng):
    idx = np.sort(rng.choice(len(items), size=size, replace=False))
    return [items[i] for i in idx]


# --------------------------------------------------------------------------
# persistence


def _dump_lines(path, rows: Iterable[dict]) -> int:
    n = 0
    with open(path, "w") as fh:
        for row in rows:
            fh.write(json.dumps(row, separators=(",", ":")) + "\n")
            n += 1
    return n


def _load_lines(path) -> list:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def save_samples(path, samples: Sequence[Sample], vocab: Vocabulary = VOCAB) -> int:
    return _dump_lines(path, ({"input": s.input.to_json(vocab), "target": vocab.encode(s.target)}
                              for s in samples))


def load_samples(path, vocab: Vocabulary = VOCAB) -> list:
    return [Sample(PolicyInput.from_json(r["input"], vocab), vocab.decode(r["target"]))
            for r in _load_lines(path)]


def save_transitions(path, transitions: Sequence[RLTransition], vocab: Vocabulary = VOCAB) -> int:
    def row(tr):
        return {"head": tr.head, "state": tr.state.to_json(vocab),
                "action": vocab.encode(tr.action), "reward": tr.reward,
                "next_state": tr.next_state.to_json(vocab) if tr.next_state else None,
                "terminal": tr.terminal, "source": tr.source, "success": tr.success}
    return _dump_lines(path, (row(tr) for tr in transitions))


def load_transitions(path, vocab: Vocabulary = VOCAB) -> list:
    out = []
    for r in _load_lines(path):
        nxt = PolicyInput.from_json(r["next_state"], vocab) if r["next_state"] else None
        out.append(RLTransition(r["head"], PolicyInput.from_json(r["state"], vocab),
                                vocab.decode(r["action"]), r["reward"], nxt, r["terminal"],
                                r["source"], r["success"]))
    return out


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(path, files: Mapping[str, str], counts: Mapping[str, int], **extra) -> dict:
    """Manifest with counts, file hashes and the vocabulary hash."""
    manifest = {"vocab_hash": VOCAB.hash, "counts": dict(counts),
                "files": {name: {"path": Path(p).name, "sha256": file_digest(p)}
                          for name, p in files.items()}}
    manifest.update(extra)
    Path(path).write_text(json.dumps(manifest, indent=1, sort_keys=True))
    return manifest
