"""Exception types shared across the package."""


class StepHRLError(Exception):
    pass


class InvalidTask(StepHRLError):
    pass


class EpisodeFinished(StepHRLError):
    pass


class RuleViolation(StepHRLError):
    pass


class OverLength(StepHRLError):
    pass


class Malformed(StepHRLError):
    """Token sequence outside the grammar of the thing being parsed."""


class ContextOverflow(StepHRLError):
    pass


class AnnotationGap(StepHRLError):
    pass


class PlanFailure(StepHRLError):
    pass


class EmptySource(StepHRLError):
    pass


class NotWarmedUp(StepHRLError):
    pass


class MissingCheckpoint(StepHRLError):
    pass


class MissingArtifact(StepHRLError):
    def __init__(self, path):
        super().__init__(f"missing artifact: {path}")
        self.path = path


class ConfigError(StepHRLError):
    pass
