"""Hierarchical rollout loop, evaluation sweeps, ablations and token accounting."""

from __future__ import annotations

import logging
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from .exceptions import Malformed, MissingCheckpoint
from .policy import CTX_MAX, PolicyBundle, high_input, low_input, progress_input
from .progress import (SUB_MAX, EpisodeProgress, GlobalProgress, Subtask, init_progress,
                       oracle_update, parse as parse_progress)
from .worldsim import (ACT_MAX, TASK_KINDS, TaskInstance, WorldConfig, generate_tasks, reset,
                       step_tokens, subtask_completed)

log = logging.getLogger(__name__)

SUBTASK_CAP = 15
MODES = ("full", "nolp", "nohier")
SUMMARIZERS = ("oracle", "learned")
EVAL_TEMPERATURES = {"high": 0.0, "low": 0.0, "progress": 0.0}
COLLECT_TEMPERATURES = {"high": 1.0, "low": 0.0, "progress": 1.0}


# --------------------------------------------------------------------------
# records


@dataclass
class StepLog:
    t: int
    k: int
    obs: tuple
    progress: tuple
    action: tuple
    done_flag: bool
    rhat: float
    reward: float
    low_input: object
    progress_input: object = None
    context_len_low: int = 0
    context_len_high: Optional[int] = None


@dataclass
class SubtaskLog:
    k: int
    tokens: tuple
    high_input: object
    start: int
    end: int = 0
    termination: str = ""  # done | timeout | episode_end
    final_progress: tuple = ()
    ret: float = 0.0
    completed: bool = False


@dataclass
class RolloutRecord:
    task: TaskInstance
    seed: int
    mode: str
    summarizer: str
    steps: list = field(default_factory=list)
    subtasks: list = field(default_factory=list)
    success: bool = False
    score: float = 0.0
    termination: str = ""
    final_obs: tuple = ()

    @property
    def n_steps(self) -> int:
        return len(self.steps)

    @property
    def timeouts(self) -> int:
        return sum(s.termination == "timeout" for s in self.subtasks)

    @property
    def outcome(self) -> dict:
        return {"success": self.success, "steps": self.n_steps, "score": self.score}

    def trace_rows(self) -> list:
        """Per-step records in the world trace format."""
        return [{"t": s.t, "obs_tokens": s.obs, "action_tokens": s.action,
                 "reward": s.reward, "done": i == len(self.steps) - 1}
                for i, s in enumerate(self.steps)]


# --------------------------------------------------------------------------
# agents


class PolicyAgent:
    """Adapts a ``PolicyBundle`` to the rollout protocol."""

    def __init__(self, bundle: PolicyBundle, temperatures: Optional[Mapping] = None, seed: int = 0):
        self.bundle = bundle
        self.temperatures = dict(EVAL_TEMPERATURES if temperatures is None else temperatures)
        self.rng = np.random.default_rng(seed)

    def reset(self, seed: int) -> None:
        self.rng = np.random.default_rng(seed)

    def _sample(self, inp):
        return self.bundle.sample(inp, self.temperatures[inp.head], rng=self.rng)

    def high(self, inp) -> tuple:
        return self._sample(inp).tokens

    def low(self, inp) -> tuple:
        out = self._sample(inp)
        return out.action, bool(out.done_flag)

    def progress(self, inp) -> tuple:
        return self._sample(inp).tokens


# --------------------------------------------------------------------------
# rollout


def _parse_subtask(tokens):
    try:
        return Subtask.parse(tokens)
    except Malformed:
        return None


def rollout(agent, task: TaskInstance, seed: int, mode: str = "full",
            summarizer: str = "learned", config: WorldConfig = WorldConfig(),
            cap: int = SUBTASK_CAP) -> RolloutRecord:
    """Run one episode of the hierarchical loop (or the flat loop for ``nohier``)."""
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode}")
    if summarizer not in SUMMARIZERS:
        raise ValueError(f"unknown summarizer {summarizer}")
    if hasattr(agent, "reset"):
        agent.reset(seed)
    if mode == "nohier":
        return _rollout_flat(agent, task, seed, summarizer, config)

    state, obs = reset(task, seed, config)
    rec = RolloutRecord(task, seed, mode, summarizer)
    instruction = task.instruction
    completed = GlobalProgress()
    p_hat: tuple = ()
    done = False
    t = 0
    while not done:
        k = len(rec.subtasks)
        prov = (None, None, None, t) if mode == "full" else (None, None, t)
        hi = high_input(instruction, completed.tokens, p_hat if mode == "full" else None,
                        obs.tokens, provenance=prov)
        if len(hi) > CTX_MAX:
            rec.termination = "context_overflow"
            break
        g_tokens = tuple(agent.high(hi))[:SUB_MAX]
        g = _parse_subtask(g_tokens)
        sub = SubtaskLog(k, g_tokens, hi, t)
        rec.subtasks.append(sub)
        p = init_progress()
        prev_a = None
        for i in range(cap):
            pin = None
            if i > 0 and mode == "full":
                pin = progress_input(g_tokens, prev_a[:ACT_MAX], obs.tokens, p.tokens,
                                     provenance=(None, t - 1, t, None))
                if summarizer == "oracle":
                    if g is not None:
                        p = oracle_update(g, prev_a, obs, p)
                else:
                    try:
                        p = parse_progress(agent.progress(pin))
                    except Malformed:
                        pass
            lin = low_input(g_tokens, p.tokens if mode == "full" else None, obs.tokens,
                            provenance=(None, None, t) if mode == "full" else (None, t))
            a_tokens, flag = agent.low(lin)
            a_tokens = tuple(a_tokens)
            before = g is not None and subtask_completed(state, g)
            state, nxt_obs, reward, done = step_tokens(state, a_tokens)
            after = g is not None and subtask_completed(state, g)
            rhat = 1.0 if after and not before else 0.0
            rec.steps.append(StepLog(
                t, k, obs.tokens, p.tokens if mode == "full" else (), a_tokens, flag, rhat,
                reward, lin, pin, len(lin), len(hi) if i == 0 else None))
            sub.ret += reward
            sub.completed = sub.completed or after
            rec.score += reward
            prev_a = a_tokens
            obs = nxt_obs
            t += 1
            if flag:
                sub.termination = "done"
                break
            if done:
                sub.termination = "episode_end"
                break
        else:
            sub.termination = "timeout"
        sub.end = t
        p_hat = p.tokens
        sub.final_progress = p_hat
        completed = completed.append(g if g is not None else g_tokens)
    rec.final_obs = obs.tokens
    rec.success = rec.score >= 1.0
    rec.termination = rec.termination or ("success" if rec.success else "step_limit")
    return rec


def _rollout_flat(agent, task, seed, summarizer, config) -> RolloutRecord:
    if summarizer != "learned":
        raise ValueError("the flat variant runs with the learned summarizer only")
    state, obs = reset(task, seed, config)
    rec = RolloutRecord(task, seed, "nohier", summarizer)
    instruction = task.instruction
    sub = SubtaskLog(0, (), None, 0)
    rec.subtasks.append(sub)
    ep = EpisodeProgress()
    prev_a = None
    done = False
    t = 0
    while not done:
        pin = None
        if t > 0:
            pin = progress_input(None, prev_a[:ACT_MAX], obs.tokens, ep.tokens,
                                 provenance=(None, t - 1, t, None), instruction=instruction)
            try:
                ep = EpisodeProgress.parse(agent.progress(pin))
            except Malformed:
                pass
        lin = low_input(None, ep.tokens, obs.tokens, provenance=(None, None, t),
                        instruction=instruction)
        a_tokens, flag = agent.low(lin)
        a_tokens = tuple(a_tokens)
        state, nxt_obs, reward, done = step_tokens(state, a_tokens)
        rec.steps.append(StepLog(t, 0, obs.tokens, ep.tokens, a_tokens, flag, reward, reward,
                                 lin, pin, len(lin), None))
        rec.score += reward
        prev_a = a_tokens
        obs = nxt_obs
        t += 1
    sub.end = t
    sub.termination = "episode_end"
    sub.ret = rec.score
    rec.final_obs = obs.tokens
    rec.success = rec.score >= 1.0
    rec.termination = "success" if rec.success else "step_limit"
    return rec


# --------------------------------------------------------------------------
# evaluation


def episode_seed(task: TaskInstance, seed: int) -> int:
    """Stable per-task reset seed."""
    return (sum(map(ord, task.task_id)) * 7919 + seed) % (2 ** 31)


def summarize(records: Sequence[RolloutRecord]) -> "OrderedDict":
    """Per-family and total success rate and step counts."""
    groups: dict = OrderedDict((fam, []) for fam in TASK_KINDS)
    for r in records:
        groups[r.task.task_kind].append(r)
    groups["total"] = list(records)
    out = OrderedDict()
    for name, recs in groups.items():
        if not recs:
            continue
        succ = [r for r in recs if r.success]
        out[name] = {
            "n": len(recs),
            "success_rate": len(succ) / len(recs),
            "avg_steps_success": float(np.mean([r.n_steps for r in succ])) if succ else float("nan"),
            "avg_steps_all": float(np.mean([r.n_steps for r in recs])),
            "timeouts": sum(r.timeouts for r in recs),
        }
    return out


def evaluate(agent, split: str, n_tasks: int, seed: int, mode: str = "full",
             summarizer: str = "learned", config: WorldConfig = WorldConfig(),
             return_records: bool = False, cap: int = SUBTASK_CAP):
    if isinstance(agent, PolicyBundle):
        agent = PolicyAgent(agent)
    tasks = generate_tasks(config, split, n_tasks, seed)
    records = [rollout(agent, task, episode_seed(task, seed), mode, summarizer, config, cap)
               for task in tasks]
    summary = summarize(records)
    return (summary, records) if return_records else summary


def format_table(rows: Mapping[str, Mapping], columns: Sequence[str], sep: str = "\t") -> str:
    lines = [sep.join(["name", *columns])]
    for name, row in rows.items():
        cells = []
        for c in columns:
            v = row.get(c, "")
            cells.append(f"{v:.4f}" if isinstance(v, float) else str(v))
        lines.append(sep.join([name, *cells]))
    return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------
# token accounting


@dataclass
class ParadigmTrace:
    paradigm: str
    counts: list


def token_trace(record: RolloutRecord) -> tuple:
    """Per-step input sizes for a flat agent, a history-keeping HRL agent and STEP-HRL.

    All three are computed on the same observation/action sequence.
    """
    c = len(record.task.instruction)
    standard, hrl, step = [], [], []
    history = 0
    by_k = {s.k: s for s in record.subtasks}
    local_start: dict = {}
    local_hist = 0
    completed_len = 0
    last_k = None
    for s in record.steps:
        o, a = len(s.obs), len(s.action)
        sub = by_k[s.k]
        g = len(sub.tokens)
        generation = s.k != last_k
        if generation:
            if last_k is not None:
                completed_len += len(by_k[last_k].tokens) + 1
            local_hist = 0
        standard.append(c + history + o)
        count_hrl = g + local_hist + o
        count_step = g + len(s.progress) + o
        if generation:
            count_hrl += c + completed_len + history + o
            p_hat = len(by_k[s.k - 1].final_progress) if s.k > 0 else 0
            count_step += c + completed_len + p_hat + o
        hrl.append(count_hrl)
        step.append(count_step)
        history += o + a
        local_hist += o + a
        last_k = s.k
    return (ParadigmTrace("StandardRL", standard), ParadigmTrace("HRL", hrl),
            ParadigmTrace("StepHRL", step))


def trace_rows(traces: Sequence[ParadigmTrace]) -> list:
    std, hrl, step = (t.counts for t in traces)
    return [{"t": i, "standard": a, "hrl": b, "stephrl": c}
            for i, (a, b, c) in enumerate(zip(std, hrl, step))]


def low_input_lengths(record: RolloutRecord) -> list:
    """Size of the Low-level conditioning (subtask + progress + observation) per step."""
    return [len(record.subtasks[s.k].tokens) + len(s.progress) + len(s.obs)
            for s in record.steps]


# --------------------------------------------------------------------------
# ablations

VARIANT_MODES = OrderedDict([("full", "full"), ("nolp", "nolp"), ("nohier", "nohier"),
                             ("bc", "full")])


def ablation_suite(checkpoints: Mapping[str, str], n_tasks: int = 200, seed: int = 0,
                   split: str = "Unseen", config: WorldConfig = WorldConfig(),
                   cap: int = SUBTASK_CAP) -> dict:
    """Evaluate the variant checkpoints and any sweep checkpoints on one split.

    Required keys: ``full``, ``nolp``, ``nohier``, ``bc``. Extra keys of the
    form ``sweep_name=value`` (for example ``beta=0.95`` or ``data=mixed``)
    are grouped into sweep tables and evaluated in full mode.
    """
    for name in VARIANT_MODES:
        path = checkpoints.get(name)
        if path is None or not Path(path).exists():
            raise MissingCheckpoint(f"missing checkpoint for variant {name!r}: {path}")
    variants = OrderedDict()
    for name, mode in VARIANT_MODES.items():
        bundle = PolicyBundle.load(checkpoints[name])
        summary = evaluate(bundle, split, n_tasks, seed, mode, "learned", config, cap=cap)
        variants[name] = summary["total"]
    sweeps: dict = OrderedDict()
    for key, path in checkpoints.items():
        if "=" not in key:
            continue
        if not Path(path).exists():
            raise MissingCheckpoint(f"missing checkpoint for sweep {key!r}: {path}")
        group, value = key.split("=", 1)
        bundle = PolicyBundle.load(path)
        sweeps.setdefault(group, OrderedDict())[value] = evaluate(
            bundle, split, n_tasks, seed, "full", "learned", config, cap=cap)["total"]
    full = variants["full"]["success_rate"]
    directions = OrderedDict(
        (f"full>={name}", full >= variants[name]["success_rate"])
        for name in ("nolp", "nohier", "bc"))
    return {"split": split, "n_tasks": n_tasks, "variants": variants, "sweeps": sweeps,
            "directions": directions}


def format_report(report: Mapping) -> str:
    cols = ("success_rate", "avg_steps_success", "avg_steps_all", "timeouts")
    parts = [f"# variants ({report['split']}, {report['n_tasks']} tasks)\n",
             format_table(report["variants"], cols)]
    for group, rows in report["sweeps"].items():
        parts.append(f"# sweep {group}\n")
        parts.append(format_table(rows, cols))
    parts.append("# directions\n")
    for k, v in report["directions"].items():
        parts.append(f"{k}\t{'pass' if v else 'fail'}\n")
    return "".join(parts)
