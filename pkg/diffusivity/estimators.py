import logging
import math
from dataclasses import asdict, dataclass
from typing import Any, Dict, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.stats import norm

from diffusivity.errors import (
  ConditioningEventError,
  ConfigError,
  DegenerateDenominatorError,
  EstimatorInapplicableError,
  ZeroSpotVolError,
)
from diffusivity.kernel import DiscretizedKernel
from diffusivity.measurements import (
  LocalMeasurement,
  SpotVolSeries,
  default_window,
  spot_vol,
)
from diffusivity.simulator import SolutionPath, SpdeConfig

logger = logging.getLogger(__name__)

KINDS = ("ANE", "MNE", "SMNE")
DEFAULT_ALPHA = 0.05
DEFAULT_ZETA = 1e-6

EpsilonSetting = Union[float, str, None]


@dataclass
class EstimateReport:
  kind: str
  theta_hat: float
  numerator: float
  denominator: float
  I_term: float
  J_term: Optional[float]
  ci: Tuple[float, float]
  alpha: float
  epsilon_sq: Optional[float] = None
  delta: float = float("nan")

  @property
  def half_width(self) -> float:
    return 0.5 * (self.ci[1] - self.ci[0])

  def covers(self, theta: float) -> bool:
    return self.ci[0] <= theta <= self.ci[1]

  def to_dict(self) -> Dict[str, Any]:
    report = asdict(self)
    report["ci"] = list(self.ci)
    return report


@dataclass
class AsymptoticOracle:
  kind: str
  sd: float
  T_star: float
  theta: float
  delta: float

  def to_dict(self) -> Dict[str, Any]:
    return asdict(self)


def normal_quantile(alpha: float) -> float:
  if not 0.0 < alpha < 1.0:
    raise ConfigError([f"alpha must lie in (0, 1), got {alpha}"])
  return float(norm.ppf(1.0 - alpha / 2.0))


def _weighted_ratio(
  meas: LocalMeasurement, weights: Optional[np.ndarray]
) -> Tuple[float, float]:
  lap = meas.lap_left()
  weighted = lap if weights is None else weights * lap
  numerator = float(np.sum(weighted * meas.increments()))
  denominator = float(np.sum(weighted * lap) * meas.dt)
  if not (np.isfinite(denominator) and denominator > 0.0):
    raise DegenerateDenominatorError(
      "estimator denominator vanishes; theta is not identifiable from this path",
      denominator=denominator,
    )
  return numerator, denominator


def _report(
  kind: str,
  numerator: float,
  denominator: float,
  half_width: float,
  I_term: float,
  J_term: Optional[float],
  alpha: float,
  meas: LocalMeasurement,
  epsilon_sq: Optional[float] = None,
) -> EstimateReport:
  theta_hat = numerator / denominator
  return EstimateReport(
    kind=kind,
    theta_hat=theta_hat,
    numerator=numerator,
    denominator=denominator,
    I_term=I_term,
    J_term=J_term,
    ci=(theta_hat - half_width, theta_hat + half_width),
    alpha=alpha,
    epsilon_sq=epsilon_sq,
    delta=meas.delta,
  )


def _spot_or_default(
  meas: LocalMeasurement, spot: Optional[SpotVolSeries]
) -> SpotVolSeries:
  if spot is None:
    return spot_vol(meas, default_window(meas.dt))
  return spot


def ane(
  meas: LocalMeasurement,
  spot: Optional[SpotVolSeries] = None,
  alpha: float = DEFAULT_ALPHA,
) -> EstimateReport:
  """
  Compute the additive noise estimator.

  The point estimate only needs the measurement; the spot volatility enters
  the confidence interval through I_delta.
  """
  q = normal_quantile(alpha)
  numerator, denominator = _weighted_ratio(meas, None)
  lap = meas.lap_left()
  y_left = _spot_or_default(meas, spot).left_endpoints()
  I_term = float(np.sum(y_left * lap * lap) * meas.dt)
  half_width = q * math.sqrt(I_term) / denominator
  return _report(
    "ANE", numerator, denominator, half_width, I_term, denominator, alpha, meas
  )


def mne(
  meas: LocalMeasurement, spot: SpotVolSeries, alpha: float = DEFAULT_ALPHA
) -> EstimateReport:
  """Compute the multiplicative noise estimator with weights 1 / Y_hat."""
  q = normal_quantile(alpha)
  y_left = spot.left_endpoints()
  offending = np.flatnonzero(~(y_left > 0.0))
  if offending.size:
    index = int(offending[0])
    raise ZeroSpotVolError(
      f"spot volatility vanishes at t_{index}; use the stabilised estimator",
      time_index=index,
      count=int(offending.size),
    )
  numerator, denominator = _weighted_ratio(meas, 1.0 / y_left)
  half_width = q / math.sqrt(denominator)
  return _report(
    "MNE", numerator, denominator, half_width, denominator, None, alpha, meas
  )


def smne(
  meas: LocalMeasurement,
  spot: SpotVolSeries,
  epsilon_sq: float,
  alpha: float = DEFAULT_ALPHA,
) -> EstimateReport:
  """
  Compute the stabilised multiplicative noise estimator.

  epsilon_sq refers to a unit-gain kernel; it is rescaled with the squared
  kernel gain so that rescaling the kernel leaves the estimate unchanged.
  """
  if epsilon_sq < 0:
    raise ConfigError([f"epsilon_sq must be >= 0, got {epsilon_sq}"])
  q = normal_quantile(alpha)
  y_left = spot.left_endpoints()
  stabilised = y_left + epsilon_sq * meas.gain**2
  if not np.all(stabilised > 0.0):
    raise DegenerateDenominatorError(
      "stabilised weights are undefined where Y_hat + epsilon^2 = 0",
      time_index=int(np.flatnonzero(~(stabilised > 0.0))[0]),
    )
  weights = 1.0 / stabilised
  numerator, denominator = _weighted_ratio(meas, weights)
  lap = meas.lap_left()
  I_term = float(np.sum(y_left * weights * weights * lap * lap) * meas.dt)
  half_width = q * math.sqrt(I_term) / denominator
  return _report(
    "SMNE",
    numerator,
    denominator,
    half_width,
    I_term,
    denominator,
    alpha,
    meas,
    epsilon_sq=epsilon_sq,
  )


def default_epsilon_sq(delta: float) -> float:
  if not 0.0 < delta < 10.0:
    raise ConfigError([f"default epsilon^2 needs 0 < delta < 10, got {delta}"])
  return 0.001 / math.log(10.0 / delta)


def spot_epsilon_sq(spot: SpotVolSeries, gain: float = 1.0) -> float:
  """Return the median spot volatility, expressed for a unit-gain kernel."""
  return float(np.median(spot.y_hat)) / gain**2


def resolve_epsilon_sq(
  setting: EpsilonSetting, meas: LocalMeasurement, spot: SpotVolSeries
) -> float:
  if setting is None or setting == "auto":
    return default_epsilon_sq(meas.delta)
  if setting == "spot":
    return spot_epsilon_sq(spot, meas.gain)
  return float(setting)


def estimate(
  kind: str,
  meas: LocalMeasurement,
  spot: SpotVolSeries,
  epsilon_sq: EpsilonSetting = "auto",
  alpha: float = DEFAULT_ALPHA,
) -> EstimateReport:
  if kind == "ANE":
    return ane(meas, spot, alpha)
  if kind == "MNE":
    return mne(meas, spot, alpha)
  if kind == "SMNE":
    return smne(meas, spot, resolve_epsilon_sq(epsilon_sq, meas, spot), alpha)
  raise ConfigError([f"unknown estimator '{kind}', expected one of {list(KINDS)}"])


def estimate_all(
  meas: LocalMeasurement,
  spot: SpotVolSeries,
  kinds: Sequence[str] = KINDS,
  epsilon_sq: EpsilonSetting = "auto",
  alpha: float = DEFAULT_ALPHA,
) -> Tuple[Dict[str, EstimateReport], Dict[str, EstimatorInapplicableError]]:
  """Run every requested estimator, separating reports from inapplicable kinds."""
  reports, excluded = {}, {}
  for kind in kinds:
    try:
      reports[kind] = estimate(kind, meas, spot, epsilon_sq, alpha)
    except EstimatorInapplicableError as exc:
      logger.warning(f"{kind} not applicable: {exc}")
      excluded[kind] = exc
  return reports, excluded


def _sigma_at_x0(
  path: SolutionPath, config: SpdeConfig, kernel: DiscretizedKernel
) -> np.ndarray:
  series = path.column(path.node_index(kernel.x0))[:-1]
  return config.sigma.evaluate(series)


def asymptotic_oracle(
  kind: str,
  path: SolutionPath,
  config: SpdeConfig,
  kernel: DiscretizedKernel,
  zeta: float = DEFAULT_ZETA,
) -> AsymptoticOracle:
  """Evaluate the limiting standard deviation of (theta_hat - theta) / delta on the true path."""
  sigma = _sigma_at_x0(path, config, kernel)
  dt = config.dt
  T_star = dt * int(np.count_nonzero(np.abs(sigma) > zeta))
  sigma_sq = float(np.sum(sigma**2) * dt)
  base = math.sqrt(2.0 * config.theta) * kernel.norm_K / kernel.norm_Kprime

  if kind in ("ANE", "MNE") and not sigma_sq > 0.0:
    raise ConditioningEventError(
      f"{kind}: integral of sigma^2(X(t, x0)) is zero", kind=kind
    )
  if kind == "ANE":
    sd = base * math.sqrt(float(np.sum(sigma**4) * dt)) / sigma_sq
  elif kind == "MNE":
    sd = base / math.sqrt(config.T)
  elif kind == "SMNE":
    if not T_star > 0.0:
      raise ConditioningEventError(
        "SMNE: sigma(X(t, x0)) never exceeds zeta", kind=kind, zeta=zeta
      )
    sd = base / math.sqrt(T_star)
  else:
    raise ConfigError([f"unknown estimator '{kind}', expected one of {list(KINDS)}"])

  return AsymptoticOracle(
    kind=kind, sd=sd, T_star=T_star, theta=config.theta, delta=kernel.delta
  )


def functional_limits(
  path: SolutionPath,
  config: SpdeConfig,
  kernel: DiscretizedKernel,
  zeta: float = DEFAULT_ZETA,
) -> Dict[str, float]:
  """Return the small-delta limits of delta^2 times J, I, I_tilde, J_star and I_star."""
  sigma = _sigma_at_x0(path, config, kernel)
  dt = config.dt
  T_star = dt * int(np.count_nonzero(np.abs(sigma) > zeta))
  kp_sq = kernel.norm_Kprime**2
  k_sq = kernel.norm_K**2
  two_theta = 2.0 * config.theta
  return {
    "J": kp_sq / two_theta * float(np.sum(sigma**2) * dt),
    "I": kp_sq * k_sq / two_theta * float(np.sum(sigma**4) * dt),
    "I_tilde": config.T * kp_sq / (two_theta * k_sq),
    "J_star": T_star * kp_sq / (two_theta * k_sq),
    "I_star": T_star * kp_sq / (two_theta * k_sq),
  }
