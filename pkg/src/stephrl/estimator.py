"""scikit-learn style wrapper around the BC then offline-RL pipeline.

``X`` is a sequence of ``TaskInstance`` objects. ``fit`` clones the scripted
expert on them, ``fit_offline`` collects rollouts of the cloned policy and
runs offline RL, ``predict`` returns per-task success and ``score`` the
success rate.
"""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .datasets import bc_pairs, build_bc_datasets, collect, expert_sweep, expert_transitions, mix
from .harness import EVAL_TEMPERATURES, COLLECT_TEMPERATURES, PolicyAgent, episode_seed, rollout
from .policy import PolicyBundle
from .training import TrainConfig, Trainer
from .worldsim import TaskInstance, WorldConfig


def _check_tasks(X) -> list:
    tasks = list(X)
    if not tasks:
        raise ValueError("expected at least one task")
    bad = [t for t in tasks if not isinstance(t, TaskInstance)]
    if bad:
        raise TypeError(f"expected TaskInstance objects, got {type(bad[0]).__name__}")
    return tasks


class StepHRLAgent(BaseEstimator):
    """Three-head step-level policy trained by behavior cloning and offline RL.

    Parameters mirror ``TrainConfig``; ``mode`` picks the full model or one of
    the ablations (``nolp``, ``nohier``).
    """

    def __init__(self, mode: str = "full", dim: int = 64, bc_epochs: int = 30,
                 bc_lr: float = 3e-3, bc_batch_size: int = 64, rl_epochs: int = 3,
                 rl_rounds: int = 0, actor_lr: float = 1e-4, critic_lr: float = 1e-3,
                 rl_batch_size: int = 128, gamma: float = 0.99, expectile: float = 0.95,
                 beta: float = 1.0, soft_update: float = 0.2, warmup_steps: int = 100,
                 clip_norm: float = 5.0, bc_schedule: str = "cosine",
                 precision: str = "float32", mix_ratio: tuple = (1, 2), seed: int = 0,
                 world: Optional[WorldConfig] = None):
        self.mode = mode
        self.dim = dim
        self.bc_epochs = bc_epochs
        self.bc_lr = bc_lr
        self.bc_batch_size = bc_batch_size
        self.rl_epochs = rl_epochs
        self.rl_rounds = rl_rounds
        self.actor_lr = actor_lr
        self.critic_lr = critic_lr
        self.rl_batch_size = rl_batch_size
        self.gamma = gamma
        self.expectile = expectile
        self.beta = beta
        self.soft_update = soft_update
        self.warmup_steps = warmup_steps
        self.clip_norm = clip_norm
        self.bc_schedule = bc_schedule
        self.precision = precision
        self.mix_ratio = mix_ratio
        self.seed = seed
        self.world = world

    def _train_config(self) -> TrainConfig:
        names = set(TrainConfig.field_names())
        return TrainConfig(**{k: v for k, v in self.get_params().items() if k in names})

    @property
    def _world(self) -> WorldConfig:
        return self.world if self.world is not None else WorldConfig()

    def fit(self, X: Sequence[TaskInstance], y=None):
        """Behavior cloning on scripted-expert demonstrations of ``X``."""
        tasks = _check_tasks(X)
        cfg = self._train_config()
        self.expert_ = expert_sweep(tasks, self.seed, self._world)
        d_p, d_l, d_h = build_bc_datasets(self.expert_, self.mode)
        self.n_samples_ = {"progress": len(d_p), "low": len(d_l), "high": len(d_h)}
        self.bundle_ = PolicyBundle(dim=self.dim, seed=self.seed, dtype=self.precision)
        self.trainer_ = Trainer(self.bundle_, cfg)
        self.bc_losses_ = self.trainer_.train_bc(bc_pairs(d_p, d_l, d_h))
        return self

    def fit_offline(self, X: Sequence[TaskInstance], y=None):
        """Collect rollouts of the current policy on ``X``, mix with expert data, run offline RL."""
        check_is_fitted(self, "bundle_")
        tasks = _check_tasks(X)
        cfg = self._train_config()
        expert = expert_transitions(self.expert_, self.mode, cfg.progress_reward)
        collected = []
        if self.mix_ratio[1]:
            collected = collect(self.bundle_, tasks, COLLECT_TEMPERATURES, self.seed + 1,
                                self.mode, self._world, cfg.progress_reward)
        self.n_collected_ = len(collected)
        dataset = mix(expert, collected, tuple(self.mix_ratio), self.seed)
        self.trainer_ = Trainer(self.bundle_, cfg)
        self.rl_report_ = self.trainer_.train_offline(dataset)
        return self

    def rollouts(self, X: Sequence[TaskInstance], seed: int = 0) -> list:
        check_is_fitted(self, "bundle_")
        agent = PolicyAgent(self.bundle_, EVAL_TEMPERATURES)
        return [rollout(agent, t, episode_seed(t, seed), self.mode, "learned", self._world)
                for t in _check_tasks(X)]

    def predict(self, X: Sequence[TaskInstance]) -> np.ndarray:
        """Boolean success per task under greedy decoding."""
        return np.array([r.success for r in self.rollouts(X)], dtype=bool)

    def score(self, X: Sequence[TaskInstance], y=None) -> float:
        return float(np.mean(self.predict(X)))
