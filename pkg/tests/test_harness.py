import pytest

from helpers import oracle_rollouts
from stephrl.exceptions import MissingCheckpoint
from stephrl.expert import ScriptedExpert
from stephrl.harness import (SUBTASK_CAP, PolicyAgent, ablation_suite, evaluate, format_report,
                             low_input_lengths, rollout, token_trace, trace_rows)
from stephrl.policy import PolicyBundle
from stephrl.progress import LP_MAX, SUB_MAX, Subtask, init_progress, oracle_update
from stephrl.progress import parse as parse_progress
from stephrl.worldsim import (OBS_MAX, STEP_LIMIT, Action, Goal, TaskInstance, WorldConfig,
                              generate_tasks, parse_observation)

APPLE = TaskInstance("PickPlace", Goal("apple", "box_1"), task_id="apple-box")


class Idle:
    """Always plans Locate(apple) and waits without ever claiming completion."""

    def high(self, inp):
        return Subtask("Locate", "apple").tokens

    def low(self, inp):
        return ("wait",), False


def test_expert_pickplace_with_oracle_summarizer():
    rec = rollout(ScriptedExpert(), APPLE, 0, "full", "oracle")
    assert rec.success and rec.score == 1.0
    assert [Subtask.parse(s.tokens).kind for s in rec.subtasks] == ["Locate", "Place"]
    assert rec.termination == "success"
    assert rec.n_steps <= STEP_LIMIT


def test_subtask_cap_forces_timeout():
    rec = rollout(Idle(), APPLE, 0, "full", "oracle")
    assert not rec.success and rec.n_steps == STEP_LIMIT
    assert [s.termination for s in rec.subtasks[:3]] == ["timeout"] * 3
    assert all(s.end - s.start == SUBTASK_CAP for s in rec.subtasks[:3])
    assert rec.subtasks[-1].termination == "episode_end"
    assert rec.timeouts == 3


def test_expert_evaluation_is_perfect():
    summary = evaluate(ScriptedExpert(), "Unseen", 100, 5, summarizer="oracle")
    assert summary["total"]["success_rate"] == 1.0
    assert summary["total"]["n"] == 100
    assert sum(row["n"] for name, row in summary.items() if name != "total") == 100


def test_avg_steps_all_covers_failures():
    b = PolicyBundle(dim=8, seed=0)
    summary = evaluate(b, "Seen", 4, 0, summarizer="oracle")["total"]
    assert summary["success_rate"] == 0.0
    assert summary["avg_steps_all"] == STEP_LIMIT


def test_evaluation_is_deterministic():
    b = PolicyBundle(dim=8, seed=1)
    runs = [evaluate(b, "Seen", 3, 2, return_records=True)[1] for _ in range(2)]
    assert [[s.action for s in r.steps] for r in runs[0]] == \
        [[s.action for s in r.steps] for r in runs[1]]


def test_oracle_progress_matches_replay():
    for rec in oracle_rollouts(40, seed=4):
        for sub in rec.subtasks:
            g = Subtask.parse(sub.tokens)
            p = init_progress()
            steps = rec.steps[sub.start: sub.end]
            for i, s in enumerate(steps):
                if i > 0:
                    p = oracle_update(g, Action.parse(steps[i - 1].action),
                                      parse_observation(s.obs), p)
                assert s.progress == p.tokens
                assert parse_progress(s.progress) == p


def test_variant_inputs():
    task = generate_tasks(WorldConfig(), "Seen", 1, 0)[0]
    b = PolicyBundle(dim=8, seed=0)
    # without progress the expert cannot remember where it looked, so success is not required
    nolp = rollout(ScriptedExpert(), task, 0, "nolp", "oracle")
    assert all("progress" not in s.low_input.tags for s in nolp.steps)
    assert all("progress" not in s.high_input.tags for s in nolp.subtasks)
    flat = rollout(PolicyAgent(b), task, 0, "nohier", "learned")
    assert len(flat.subtasks) == 1 and flat.subtasks[0].high_input is None
    assert all(s.low_input.segments[0][0] == "instruction" for s in flat.steps)
    with pytest.raises(ValueError):
        rollout(PolicyAgent(b), task, 0, "nohier", "oracle")


def _long_episode():
    recs = oracle_rollouts(200, seed=9, eps=0.35)
    four = [r for r in recs if len(r.subtasks) >= 4 and r.n_steps >= 25]
    return max(four, key=lambda r: r.n_steps)


def test_token_traces_on_a_long_episode():
    rec = _long_episode()
    std, hrl, step = token_trace(rec)
    assert len(std.counts) == len(hrl.counts) == len(step.counts) == rec.n_steps
    assert all(b >= a for a, b in zip(std.counts, std.counts[1:]))
    assert max(low_input_lengths(rec)) <= SUB_MAX + LP_MAX + OBS_MAX
    mean = lambda xs: sum(xs) / len(xs)
    assert mean(step.counts) < mean(hrl.counts) < mean(std.counts)
    rows = trace_rows((std, hrl, step))
    assert set(rows[0]) == {"t", "standard", "hrl", "stephrl"}


def test_standard_trace_grows_linearly():
    rec = _long_episode()
    std = token_trace(rec)[0].counts
    # every step adds at least the observation and action it consumed
    for t in range(1, len(std)):
        s = rec.steps[t - 1]
        assert std[t] - std[t - 1] >= len(s.action) + len(s.obs) - OBS_MAX


def test_ablation_suite_requires_every_variant(tmp_path):
    path = tmp_path / "full.npz"
    PolicyBundle(dim=8, seed=0).save(path)
    with pytest.raises(MissingCheckpoint):
        ablation_suite({"full": path, "nolp": path, "nohier": path}, n_tasks=2)
    with pytest.raises(MissingCheckpoint):
        ablation_suite({"full": path, "nolp": path, "nohier": path, "bc": tmp_path / "no.npz"},
                       n_tasks=2)


def test_ablation_report_lists_variants_sweeps_and_directions(tmp_path):
    path = tmp_path / "m.npz"
    PolicyBundle(dim=8, seed=0).save(path)
    ck = {"full": path, "nolp": path, "nohier": path, "bc": path, "beta=0.5": path,
          "beta=2": path}
    report = ablation_suite(ck, n_tasks=2, seed=0)
    assert list(report["variants"]) == ["full", "nolp", "nohier", "bc"]
    assert list(report["sweeps"]["beta"]) == ["0.5", "2"]
    text = format_report(report)
    assert "full>=nolp\tpass" in text and "# sweep beta" in text
