"""Behavior cloning followed by step-level offline RL.

The RL stage follows implicit Q-learning: a TD critic ``Q_phi`` regressed
onto ``r + gamma * V_target(s')``, a value head ``V_psi`` fit by expectile
regression onto the target critic, and an actor update that reweights the
sequence log-likelihood by ``exp(A / beta)``. Every head owns its critics;
the actor parameters are shared.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, fields, replace
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .exceptions import ConfigError, NotWarmedUp
from .policy import (HEADS, PolicyBundle, mlp_backward, mlp_forward, weighted_nll_and_grad,
                     with_eos)

log = logging.getLogger(__name__)

ADV_CLAMP = 20.0


@dataclass(frozen=True)
class TrainConfig:
    bc_epochs: int = 5
    bc_lr: float = 1e-4
    bc_batch_size: int = 128
    rl_epochs: int = 3
    rl_rounds: int = 0  # >0 fixes the number of critic+actor rounds per head
    actor_lr: float = 1e-5
    critic_lr: float = 1e-4
    rl_batch_size: int = 256
    gamma: float = 0.99
    expectile: float = 0.95
    beta: float = 1.0
    soft_update: float = 0.2
    warmup_steps: int = 100
    weight_decay: float = 0.0
    clip_norm: float = 0.0
    adv_clamp: float = ADV_CLAMP
    progress_reward: str = "mirror"  # mirror | zero
    bc_schedule: str = "constant"  # constant | cosine
    dim: int = 64
    precision: str = "float64"  # backbone dtype: float64 | float32
    seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        for name in ("bc_lr", "actor_lr", "critic_lr", "soft_update", "beta", "adv_clamp"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if not 0.0 < self.expectile < 1.0:
            raise ConfigError("expectile must lie in (0, 1)")
        if not 0.0 <= self.gamma <= 1.0:
            raise ConfigError("gamma must lie in [0, 1]")
        if self.soft_update > 1.0:
            raise ConfigError("soft_update must lie in (0, 1]")
        for name in ("bc_epochs", "rl_epochs", "bc_batch_size", "rl_batch_size"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.rl_rounds < 0:
            raise ConfigError("rl_rounds must be >= 0")
        if self.warmup_steps < 0:
            raise ConfigError("warmup_steps must be >= 0")
        if self.progress_reward not in ("mirror", "zero"):
            raise ConfigError("progress_reward must be 'mirror' or 'zero'")
        if self.bc_schedule not in ("constant", "cosine"):
            raise ConfigError("bc_schedule must be 'constant' or 'cosine'")
        if self.precision not in ("float64", "float32"):
            raise ConfigError("precision must be 'float64' or 'float32'")
        if self.dim < 1:
            raise ConfigError("dim must be >= 1")

    @classmethod
    def desk(cls, **overrides) -> "TrainConfig":
        """Schedule sized for a from-scratch recurrent model on one CPU core."""
        base = dict(bc_epochs=40, bc_lr=3e-3, bc_batch_size=32, rl_epochs=3, rl_rounds=300,
                    actor_lr=1e-4, critic_lr=1e-3, rl_batch_size=128, clip_norm=5.0,
                    bc_schedule="cosine", precision="float32")
        base.update(overrides)
        return cls(**base)

    @classmethod
    def field_names(cls) -> tuple:
        return tuple(f.name for f in fields(cls))

    def to_dict(self) -> dict:
        return asdict(self)


# --------------------------------------------------------------------------
# losses


def expectile_loss(d, tau: float):
    """``|tau - 1(d < 0)| * d**2``, elementwise."""
    if not 0.0 < tau < 1.0:
        raise ValueError("tau must lie in (0, 1)")
    d = np.asarray(d, dtype=float)
    weight = np.where(d < 0, 1.0 - tau, tau)
    out = weight * d * d
    return float(out) if out.ndim == 0 else out


def expectile_grad(d, tau: float):
    d = np.asarray(d, dtype=float)
    return 2.0 * np.where(d < 0, 1.0 - tau, tau) * d


def q_loss_and_grad(params, H_sa, y):
    """Mean squared TD error of ``Q(s, u)`` against fixed targets ``y``."""
    q, cache = mlp_forward(params, H_sa)
    diff = q - y
    loss = float(np.mean(diff * diff))
    grads = mlp_backward(params, 2.0 * diff / len(y), cache)
    return loss, grads


def v_loss_and_grad(params, H_s, q_bar, tau):
    """Mean expectile loss of ``q_bar - V(s)``."""
    v, cache = mlp_forward(params, H_s)
    d = q_bar - v
    loss = float(np.mean(expectile_loss(d, tau)))
    grads = mlp_backward(params, -expectile_grad(d, tau) / len(d), cache)
    return loss, grads


def awr_weights(adv, beta: float, clamp: float = ADV_CLAMP):
    """``exp(clip(A / beta, -clamp, clamp))``; beta = inf gives exact ones."""
    adv = np.asarray(adv, dtype=float)
    scaled = np.zeros_like(adv) if math.isinf(beta) else adv / beta
    return np.exp(np.clip(scaled, -clamp, clamp))


# --------------------------------------------------------------------------
# optimizer


class AdamW:
    """Decoupled-weight-decay Adam over a dict of arrays (updated in place)."""

    def __init__(self, params: dict, lr: float, betas=(0.9, 0.999), eps: float = 1e-8,
                 weight_decay: float = 0.0, clip_norm: float = 0.0):
        self.params = params
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.clip_norm = clip_norm
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, grads: dict) -> float:
        norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
        scale = 1.0
        if self.clip_norm and norm > self.clip_norm:
            scale = self.clip_norm / norm
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for k, g in grads.items():
            p = self.params[k]
            g = g * scale
            self.m[k] = self.b1 * self.m[k] + (1.0 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1.0 - self.b2) * g * g
            if self.weight_decay:
                p *= 1.0 - self.lr * self.weight_decay
            p -= self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)
        return norm


# --------------------------------------------------------------------------
# trainer


def _batches(n: int, size: int, rng: np.random.Generator, keys: Optional[Sequence] = None,
             pool: int = 16):
    """Shuffled index batches; with ``keys``, batches are drawn from length-sorted pools."""
    order = rng.permutation(n)
    if keys is None:
        for i in range(0, n, size):
            yield order[i: i + size]
        return
    batches = []
    for i in range(0, n, size * pool):
        chunk = sorted(order[i: i + size * pool], key=lambda j: keys[j])
        batches += [chunk[k: k + size] for k in range(0, len(chunk), size)]
    for b in rng.permutation(len(batches)):
        yield np.asarray(batches[b])


class Trainer:
    """Sole writer of a ``PolicyBundle`` during BC and offline RL."""

    def __init__(self, bundle: PolicyBundle, config: TrainConfig = TrainConfig(), metrics_path=None):
        self.bundle = bundle
        self.config = config
        wd, clip = config.weight_decay, config.clip_norm
        self.bc_opt = AdamW(bundle.theta, config.bc_lr, weight_decay=wd, clip_norm=clip)
        self.actor_opt = AdamW(bundle.theta, config.actor_lr, weight_decay=wd, clip_norm=clip)
        self.q_opt = {h: AdamW(bundle.critics[h]["q"], config.critic_lr) for h in HEADS}
        self.v_opt = {h: AdamW(bundle.critics[h]["v"], config.critic_lr) for h in HEADS}
        self.critic_steps = {h: 0 for h in HEADS}
        self.metrics: list = []
        self.metrics_path = metrics_path
        self.rng = np.random.default_rng(config.seed)

    # -- single steps ------------------------------------------------------------

    def bc_step(self, inputs: Sequence, targets: Sequence) -> float:
        """One maximum-likelihood step; returns the pre-step loss."""
        loss, grads, _ = weighted_nll_and_grad(self.bundle.theta, inputs, targets,
                                               vocab=self.bundle.vocab)
        self.bc_opt.step(grads)
        self.bundle.step += 1
        return loss

    def critic_step(self, head: str, batch: Sequence) -> tuple:
        """One TD step on Q and one expectile step on V, then a soft target update."""
        cfg, b = self.config, self.bundle
        crit = b.critics[head]
        states = [t.state for t in batch]
        answers = [tuple(t.action) for t in batch]
        H_s = b.encode_batch(states)
        H_sa = b.encode_batch(states, answers)
        nxt = [t.next_state if t.next_state is not None else t.state for t in batch]
        H_n = b.encode_batch(nxt)
        r = np.array([t.reward for t in batch], dtype=float)
        term = np.array([float(t.terminal or t.next_state is None) for t in batch])
        v_next, _ = mlp_forward(crit["v_target"], H_n)
        y = r + cfg.gamma * v_next * (1.0 - term)
        loss_q, gq = q_loss_and_grad(crit["q"], H_sa, y)
        q_bar, _ = mlp_forward(crit["q_target"], H_sa)
        loss_v, gv = v_loss_and_grad(crit["v"], H_s, q_bar, cfg.expectile)
        self.q_opt[head].step(gq)
        self.v_opt[head].step(gv)
        b.soft_update(cfg.soft_update, heads=(head,))
        self.critic_steps[head] += 1
        return loss_q, loss_v

    def advantages(self, head: str, batch: Sequence) -> np.ndarray:
        b = self.bundle
        crit = b.critics[head]
        states = [t.state for t in batch]
        H_s = b.encode_batch(states)
        H_sa = b.encode_batch(states, [tuple(t.action) for t in batch])
        q, _ = mlp_forward(crit["q"], H_sa)
        v, _ = mlp_forward(crit["v"], H_s)
        return q - v

    def awr_step(self, head: str, batch: Sequence) -> dict:
        """Advantage-weighted likelihood step on the shared parameters."""
        if self.critic_steps[head] < self.config.warmup_steps:
            raise NotWarmedUp(f"{head} critic has {self.critic_steps[head]} of "
                              f"{self.config.warmup_steps} warmup steps")
        adv = self.advantages(head, batch)
        w = awr_weights(adv, self.config.beta, self.config.adv_clamp)
        loss, grads, _ = weighted_nll_and_grad(
            self.bundle.theta, [t.state for t in batch], [_target(t) for t in batch],
            weights=w, vocab=self.bundle.vocab)
        self.actor_opt.step(grads)
        self.bundle.step += 1
        return {"loss_a": loss, "mean_abs_adv": float(np.mean(np.abs(adv))),
                "mean_weight": float(np.mean(w))}

    # -- loops -------------------------------------------------------------------

    def _log(self, row: dict) -> None:
        self.metrics.append(row)
        if self.metrics_path is not None:
            with open(self.metrics_path, "a") as fh:
                fh.write(json.dumps(row) + "\n")

    def bc_lr(self, epoch: int, epochs: int) -> float:
        cfg = self.config
        if cfg.bc_schedule == "constant" or epochs <= 1:
            return cfg.bc_lr
        return cfg.bc_lr * (0.05 + 0.95 * 0.5 * (1.0 + math.cos(math.pi * epoch / (epochs - 1))))

    def train_bc(self, samples: Sequence, epochs: Optional[int] = None, on_epoch=None) -> list:
        """Mixed-head BC over ``(PolicyInput, target_tokens)`` pairs; returns epoch losses."""
        epochs = self.config.bc_epochs if epochs is None else epochs
        keys = [(inp.head, len(inp), len(tgt)) for inp, tgt in samples]
        losses = []
        for epoch in range(epochs):
            self.bc_opt.lr = self.bc_lr(epoch, epochs)
            total, count = 0.0, 0
            for idx in _batches(len(samples), self.config.bc_batch_size, self.rng, keys):
                inp = [samples[i][0] for i in idx]
                tgt = [samples[i][1] for i in idx]
                total += self.bc_step(inp, tgt) * len(idx)
                count += len(idx)
            losses.append(total / max(count, 1))
            self._log({"stage": "bc", "head": "all", "step": self.bundle.step, "epoch": epoch,
                       "loss_bc": losses[-1]})
            log.info("bc epoch %d loss %.4f", epoch, losses[-1])
            if on_epoch is not None:
                on_epoch(epoch, losses[-1])
        return losses

    def train_offline(self, dataset: Mapping[str, Sequence], epochs: Optional[int] = None) -> list:
        """Critic warmup then round-robin critic/actor steps over the heads."""
        cfg = self.config
        epochs = cfg.rl_epochs if epochs is None else epochs
        heads = [h for h in HEADS if len(dataset.get(h, ()))]
        size = cfg.rl_batch_size

        def sample(head):
            data = dataset[head]
            idx = self.rng.choice(len(data), size=min(size, len(data)), replace=False)
            return [data[i] for i in idx]

        for step in range(cfg.warmup_steps):
            for head in heads:
                lq, lv = self.critic_step(head, sample(head))
            if step == cfg.warmup_steps - 1:
                self._log({"stage": "warmup", "head": "all", "step": self.bundle.step,
                           "loss_q": lq, "loss_v": lv})

        report = []
        if cfg.rl_rounds:
            # a fixed update budget, spread over ``epochs`` logging periods
            per_epoch = [cfg.rl_rounds // epochs + (e < cfg.rl_rounds % epochs)
                         for e in range(epochs)]
        for epoch in range(epochs):
            iters = {h: list(_batches(len(dataset[h]), size, self.rng)) for h in heads}
            n_rounds = per_epoch[epoch] if cfg.rl_rounds else max(len(v) for v in iters.values())
            if not n_rounds:
                continue
            sums = {h: {"loss_q": 0.0, "loss_v": 0.0, "loss_a": 0.0, "mean_abs_adv": 0.0,
                        "mean_weight": 0.0, "n": 0} for h in heads}
            for i in range(n_rounds):
                for head in heads:
                    idx = iters[head][i % len(iters[head])]
                    batch = [dataset[head][j] for j in idx]
                    lq, lv = self.critic_step(head, batch)
                    stats = self.awr_step(head, batch)
                    acc = sums[head]
                    acc["loss_q"] += lq
                    acc["loss_v"] += lv
                    for k, v in stats.items():
                        acc[k] += v
                    acc["n"] += 1
            for head in heads:
                acc = sums[head]
                n = acc.pop("n")
                row = {"stage": "rl", "head": head, "step": self.bundle.step, "epoch": epoch}
                row.update({k: v / n for k, v in acc.items()})
                self._log(row)
                report.append(row)
        return report


def _target(transition) -> tuple:
    return with_eos(transition.action)


def train_bc(bundle: PolicyBundle, samples: Sequence, config: TrainConfig = TrainConfig(),
             metrics_path=None) -> Trainer:
    trainer = Trainer(bundle, config, metrics_path)
    trainer.train_bc(samples)
    return trainer


def train_offline(bundle: PolicyBundle, dataset: Mapping[str, Sequence],
                  config: TrainConfig = TrainConfig(), metrics_path=None) -> PolicyBundle:
    trainer = Trainer(bundle, config, metrics_path)
    trainer.train_offline(dataset)
    return bundle
