class LabError(Exception):
    exit_code = 1


class InvalidArgument(LabError, ValueError):
    exit_code = 2


class SupportViolation(InvalidArgument):
    def __init__(self, state, action, message=None):
        self.state = state
        self.action = action
        super().__init__(message or f"opponent policy has no support at state {state}, action {action}")


class ConfigError(LabError):
    exit_code = 2

    def __init__(self, violations):
        self.violations = list(violations) if isinstance(violations, (list, tuple)) else [violations]
        super().__init__('; '.join(self.violations))


class NumericalAbort(LabError):
    exit_code = 3


class ConvergenceError(NumericalAbort):
    def __init__(self, message, residual):
        self.residual = residual
        super().__init__(f"{message} (residual {residual:.3e})")


class StorageError(LabError):
    exit_code = 4
