from typing import Any, Dict, List, Optional


class DiffusivityError(RuntimeError):
  """Base error; carries machine-readable details for the CLI."""

  def __init__(self, message: str, **details: Any):
    super().__init__(message)
    self.message = message
    self.details = details

  def to_dict(self) -> Dict[str, Any]:
    payload = {"error": type(self).__name__, "message": self.message}
    payload.update(self.details)
    return payload

  def __reduce__(self):
    # subclasses have different __init__ signatures; restore state directly
    return (_restore, (type(self), self.args, self.__dict__))


def _restore(cls, args, state):
  error = cls.__new__(cls)
  RuntimeError.__init__(error, *args)
  error.__dict__.update(state)
  return error


class ConfigError(DiffusivityError):
  def __init__(self, violations: List[str], line: Optional[int] = None):
    message = "; ".join(violations)
    details: Dict[str, Any] = {"violations": list(violations)}
    if line is not None:
      details["line"] = line
    super().__init__(message, **details)
    self.violations = list(violations)


class UnknownProfileError(DiffusivityError):
  pass


class SupportOutOfDomainError(DiffusivityError):
  pass


class GridTooCoarseError(DiffusivityError):
  pass


class GridMismatchError(DiffusivityError):
  pass


class BlowUpError(DiffusivityError):
  pass


class InsufficientRunsError(DiffusivityError):
  pass


class EstimatorInapplicableError(DiffusivityError):
  """The estimator cannot be formed on this path; runs are excluded, not aborted."""


class DegenerateDenominatorError(EstimatorInapplicableError):
  pass


class ZeroSpotVolError(EstimatorInapplicableError):
  pass


class ConditioningEventError(EstimatorInapplicableError):
  pass


class RunError(DiffusivityError):
  def __init__(self, run_index: int, cause: Exception):
    details = cause.to_dict() if isinstance(cause, DiffusivityError) else {
      "cause": type(cause).__name__
    }
    details["run_index"] = run_index
    details.pop("error", None)
    details.pop("message", None)
    super().__init__(f"run {run_index} failed: {cause}", **details)
    self.run_index = run_index
    self.cause = cause
