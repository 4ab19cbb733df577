"""Step-level hierarchical agents for a deterministic household text world."""

from .estimator import StepHRLAgent
from .exceptions import StepHRLError
from .policy import PolicyBundle
from .progress import GlobalProgress, LocalProgress, Subtask
from .training import TrainConfig, Trainer
from .worldsim import Action, Goal, TaskInstance, WorldConfig, generate_tasks, reset, step

__all__ = ["Action", "Goal", "GlobalProgress", "LocalProgress", "PolicyBundle", "StepHRLAgent",
           "StepHRLError", "Subtask", "TaskInstance", "TrainConfig", "Trainer", "WorldConfig",
           "generate_tasks", "reset", "step"]
__version__ = "0.1.0"
