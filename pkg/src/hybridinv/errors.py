"""Exception types shared across the toolkit."""


class ConfigError(ValueError):
    """A structural mismatch: wrong shapes, incompatible generator binding,
    malformed archives or config files."""


class DegenerateRegionError(ValueError):
    """A masked loss was requested over an empty region."""


class RefinementDiverged(RuntimeError):
    """Optimization produced a non-finite loss.

    Carries a diagnostic snapshot so blowups can be inspected instead of
    silently clamped away.
    """

    def __init__(self, step: int, branch: str, loss: float):
        self.step = step
        self.branch = branch
        self.loss = loss
        super().__init__(
            f"non-finite loss at step {step} in {branch!r} branch (loss={loss!r})"
        )


class StageError(RuntimeError):
    """A pipeline stage failed; `stage` tags which one."""

    def __init__(self, stage: str, message: str):
        self.stage = stage
        super().__init__(f"[{stage}] {message}")
