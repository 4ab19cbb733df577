"""Shared test drivers: a noisy expert and latent-state replays."""

import random

import numpy as np

from stephrl.expert import ScriptedExpert
from stephrl.harness import episode_seed, rollout
from stephrl.worldsim import (RECEPTACLE_SPECS, ROOMS, Action, WorldConfig, generate_tasks,
                              parse_observation, reset, step_tokens)


class NoisyExpert(ScriptedExpert):
    """Scripted expert whose low level takes a random plausible action with probability eps."""

    def __init__(self, eps: float = 0.3, seed: int = 0):
        self.eps = eps
        self.rng = random.Random(seed)

    def reset(self, seed):
        self.rng = random.Random(seed)

    def low(self, inp):
        if self.rng.random() >= self.eps:
            return super().low(inp)
        obs = parse_observation(inp.segment("obs"))
        options = [Action("goto", r) for r in ROOMS if r != obs.room]
        for e in obs.view:
            if RECEPTACLE_SPECS[e.receptacle].openable:
                options.append(Action("close" if not e.closed else "open", e.receptacle))
            options += [Action("take", o, e.receptacle) for o in e.contents]
            if obs.holding:
                options.append(Action("put", obs.holding, e.receptacle))
        options.append(Action("wait"))
        return self.rng.choice(options).tokens, False


def latent_states(record, config=WorldConfig()):
    """World state after every step of ``record``, rebuilt by replaying its actions."""
    state, _ = reset(record.task, record.seed, config)
    out = []
    for s in record.steps:
        state, *_ = step_tokens(state, s.action)
        out.append(state)
    return out


def oracle_rollouts(n, seed=0, eps=0.3, split="Seen"):
    tasks = generate_tasks(WorldConfig(), split, n, seed)
    out = []
    for i, task in enumerate(tasks):
        agent = NoisyExpert(eps, seed * 100_003 + i)
        out.append(rollout(agent, task, episode_seed(task, seed), "full", "oracle"))
    return out


def progress_violations(record, states=None) -> dict:
    """Count oracle-summarizer invariant violations in one rollout."""
    from stephrl.progress import LP_MAX, Subtask, parse, render
    from stephrl.worldsim import kind_of

    states = latent_states(record) if states is None else states
    bad = {"monotone": 0, "soundness": 0, "termination": 0, "round_trip": 0, "length": 0}
    by_k = {s.k: s for s in record.subtasks}
    steps = record.steps
    for i in range(1, len(steps)):
        prev_s, cur = steps[i - 1], steps[i]
        if cur.k != prev_s.k:
            continue
        sub = Subtask.parse(by_k[cur.k].tokens)
        before, after = parse(prev_s.progress), parse(cur.progress)
        if len(cur.progress) > LP_MAX:
            bad["length"] += 1
        if render(parse(cur.progress)) != cur.progress:
            bad["round_trip"] += 1
        if not set(before.checked) <= set(after.checked):
            bad["monotone"] += 1
        if before.is_terminal and after.checked != before.checked:
            bad["termination"] += 1
        if sub.kind != "Locate":
            continue
        # receptacles added at this step must hold no eligible object right now
        state = states[i - 1]
        for rid in set(after.checked) - set(before.checked):
            rec = state.receptacles[rid]
            eligible = [o for o in rec.contents
                        if kind_of(o) == sub.target_object and o != sub.excluded]
            seen = rec.room == state.room and (not rec.openable or rec.is_open)
            if eligible or not seen:
                bad["soundness"] += 1
    return bad


def random_instance(rng, n=3, dim=4):
    """Small bundle with non-zero output heads and a batch of mixed-head inputs."""
    from stephrl.policy import PolicyBundle, high_input, low_input, progress_input

    b = PolicyBundle(dim=dim, critic_hidden=3, seed=int(rng.integers(1 << 30)))
    for k, v in b.theta.items():
        b.theta[k] = v + rng.normal(0, 0.3, v.shape)
    words = ["apple", "box_1", "kitchen", "open", "drawer_1", "mug_1", "take", "hold"]
    pick = lambda k: tuple(rng.choice(words, size=k))
    makers = [lambda: low_input(pick(3), pick(2), pick(4)),
              lambda: high_input(pick(4), pick(2), pick(1), pick(3)),
              lambda: progress_input(pick(3), pick(2), pick(3), pick(2))]
    inputs = [makers[i % 3]() for i in range(n)]
    targets = [pick(int(rng.integers(1, 4))) + ("<eos>",) for _ in range(n)]
    return b, inputs, targets


def grad_check(loss_fn, params, grads, rng, per_block=3, h=1e-5, floor=1e-6):
    """Worst relative error between ``grads`` and central differences of ``loss_fn``.

    Coordinates: the largest analytic entry of every block plus ``per_block`` random ones.
    The step grows with the cube root of the loss magnitude, which balances
    truncation against rounding error for central differences.
    """
    h = h * max(1.0, abs(float(loss_fn()))) ** (1.0 / 3.0)
    worst = 0.0
    for k, p in params.items():
        g = grads[k]
        flat = [int(np.argmax(np.abs(g)))] + list(rng.integers(0, p.size, per_block))
        for i in flat:
            idx = np.unravel_index(i, p.shape)
            old = p[idx]
            p[idx] = old + h
            up = loss_fn()
            p[idx] = old - h
            down = loss_fn()
            p[idx] = old
            num = (up - down) / (2 * h)
            err = abs(num - g[idx]) / max(abs(num), abs(g[idx]), floor)
            worst = max(worst, err)
    return worst
