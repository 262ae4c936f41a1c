import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy import stats

from diffusivity.errors import (
  ConfigError,
  DiffusivityError,
  EstimatorInapplicableError,
  InsufficientRunsError,
  RunError,
)
from diffusivity.estimators import (
  DEFAULT_ALPHA,
  DEFAULT_ZETA,
  AsymptoticOracle,
  EpsilonSetting,
  EstimateReport,
  asymptotic_oracle,
  estimate,
)
from diffusivity.kernel import DiscretizedKernel, KernelProfile, discretize
from diffusivity.measurements import default_window, measure, spot_vol
from diffusivity.noise import derive_seed
from diffusivity.simulator import SpdeConfig, simulate, streaming_columns

logger = logging.getLogger(__name__)

MIN_KS_RUNS = 50
MAX_HIST_BINS = 500
MIXTURE_SPAN = 8.0
MAX_MIXTURE_POINTS = 200001
OUTLIER_WINDOW = (0.0, 0.1)


@dataclass(frozen=True)
class Experiment:
  """Everything a worker needs to run one replication."""

  config: SpdeConfig
  kernels: Tuple[DiscretizedKernel, ...]
  kinds: Tuple[str, ...]
  window: Optional[int] = None
  epsilon_sq: EpsilonSetting = "auto"
  alpha: float = DEFAULT_ALPHA
  zeta: float = DEFAULT_ZETA

  @property
  def deltas(self) -> List[float]:
    return [kernel.delta for kernel in self.kernels]


@dataclass
class Outcome:
  kind: str
  delta: float
  report: Optional[EstimateReport] = None
  oracle: Optional[AsymptoticOracle] = None
  excluded: Optional[str] = None


@dataclass
class Replication:
  run_index: int
  seed: int
  outcomes: List[Outcome]


@dataclass
class McSummary:
  kind: str
  delta: float
  runs: int
  excluded: int
  mean: float
  sd: float
  rmse: float
  coverage: float
  outliers: int
  ks_stat: Optional[float]
  ks_pvalue: Optional[float]
  ks_pass: Optional[bool]
  hist_edges: np.ndarray = field(repr=False)
  hist_counts: np.ndarray = field(repr=False)
  hist_mixture: np.ndarray = field(repr=False)
  mixture_grid: np.ndarray = field(repr=False)
  mixture_density: np.ndarray = field(repr=False)

  @property
  def attempted(self) -> int:
    return self.runs + self.excluded


@dataclass
class RmseSweep:
  deltas: np.ndarray
  kinds: Tuple[str, ...]
  rmse_by_kind: Dict[str, np.ndarray]
  rmse_se_by_kind: Dict[str, np.ndarray]
  predicted_rmse_by_kind: Dict[str, np.ndarray]
  runs_by_kind: Dict[str, np.ndarray]
  fitted_slope: Dict[str, float]


@dataclass
class NormalityResult:
  kind: str
  delta: float
  runs: int
  ks_stat: float
  ks_pass: bool


@dataclass
class CoverageResult:
  kind: str
  runs: int
  coverage: float
  band: Tuple[float, float]

  @property
  def within_band(self) -> bool:
    return self.band[0] <= self.coverage <= self.band[1]


def build_kernels(
  profile: KernelProfile,
  x0: float,
  deltas: Iterable[float],
  config: SpdeConfig,
  laplacian: str = "cell",
) -> Tuple[DiscretizedKernel, ...]:
  """Discretize one kernel per delta, reporting every invalid delta at once."""
  kernels, violations = [], []
  for delta in deltas:
    try:
      kernels.append(discretize(profile, x0, delta, config.grid, laplacian))
    except DiffusivityError as exc:
      violations.append(f"delta={delta:g}: {exc.message}")
  if violations:
    raise ConfigError(violations)
  return tuple(kernels)


def run_replication(experiment: Experiment, run_index: int) -> Replication:
  """Simulate one path and evaluate every estimator at every kernel."""
  seed = derive_seed(experiment.config.seed, run_index)
  config = replace(experiment.config, seed=seed)
  retain = streaming_columns(config.grid, experiment.kernels, experiment.kernels[0].x0)
  path = simulate(config, retain)

  outcomes = []
  for kernel in experiment.kernels:
    meas = measure(path, kernel)
    spot = spot_vol(meas, experiment.window or default_window(meas.dt))
    for kind in experiment.kinds:
      try:
        report = estimate(kind, meas, spot, experiment.epsilon_sq, experiment.alpha)
        oracle = asymptotic_oracle(kind, path, config, kernel, experiment.zeta)
      except EstimatorInapplicableError as exc:
        logger.warning(f"Run {run_index}: {kind} at delta={kernel.delta:g} excluded ({exc})")
        outcomes.append(Outcome(kind, kernel.delta, excluded=type(exc).__name__))
        continue
      outcomes.append(Outcome(kind, kernel.delta, report, oracle))
  return Replication(run_index=run_index, seed=seed, outcomes=outcomes)


def _run_job(job: Tuple[Experiment, int]) -> Replication:
  experiment, run_index = job
  return run_replication(experiment, run_index)


def replicate(experiment: Experiment, R: int, parallelism: int = 1) -> List[Replication]:
  """
  Run R replications, ordered by run index whatever the parallelism.

  Seeds come from (master seed, run index) only, so the results do not depend
  on how the runs are spread over workers.
  """
  if R < 2:
    raise InsufficientRunsError(f"need at least 2 runs, got {R}", runs=R)
  jobs = [(experiment, run_index) for run_index in range(R)]

  executor = ProcessPoolExecutor(max_workers=parallelism) if parallelism > 1 else None
  results = executor.map(_run_job, jobs) if executor else map(_run_job, jobs)
  replications = []
  try:
    for run_index in range(R):
      try:
        replications.append(next(results))
      except Exception as exc:
        raise RunError(run_index, exc) from exc
      logger.info(f"run {run_index + 1}/{R} done")
  finally:
    if executor:
      executor.shutdown(cancel_futures=True)
  return replications


def ks_normality(z: np.ndarray, level: float) -> Tuple[float, float, bool]:
  stat, pvalue = stats.kstest(np.asarray(z, dtype=float), "norm")
  return float(stat), float(pvalue), bool(pvalue > level)


def studentize(
  reports: Sequence[EstimateReport], oracles: Sequence[AsymptoticOracle]
) -> np.ndarray:
  return np.array(
    [
      (report.theta_hat - oracle.theta) / (oracle.delta * oracle.sd)
      for report, oracle in zip(reports, oracles)
    ]
  )


def studentize_and_test(
  reports: Sequence[EstimateReport],
  oracles: Sequence[AsymptoticOracle],
  level: float = 0.01,
) -> Tuple[float, bool]:
  """KS-test the studentized errors delta^-1 (theta_hat - theta) / sd against N(0, 1)."""
  if len(reports) < MIN_KS_RUNS:
    raise InsufficientRunsError(
      f"normality test needs at least {MIN_KS_RUNS} runs, got {len(reports)}",
      runs=len(reports),
    )
  stat, _, passed = ks_normality(studentize(reports, oracles), level)
  return stat, passed


def histogram_edges(values: np.ndarray) -> np.ndarray:
  """Return Freedman-Diaconis bin edges, capped at MAX_HIST_BINS bins."""
  edges = np.histogram_bin_edges(values, bins="fd")
  if len(edges) - 1 > MAX_HIST_BINS:
    edges = np.histogram_bin_edges(values, bins=MAX_HIST_BINS)
  return edges


def mixture_density(
  theta: float, scales: np.ndarray, grid: np.ndarray
) -> np.ndarray:
  """Average the per-run Gaussian densities N(theta, scale_r^2) on grid."""
  density = np.zeros_like(grid)
  for scale in scales:
    density += stats.norm.pdf(grid, loc=theta, scale=scale)
  return density / len(scales)


def mixture_bin_density(
  theta: float, scales: np.ndarray, edges: np.ndarray
) -> np.ndarray:
  mass = np.zeros(len(edges) - 1)
  for scale in scales:
    cdf = stats.norm.cdf(edges, loc=theta, scale=scale)
    mass += np.diff(cdf)
  return mass / len(scales) / np.diff(edges)


def mixture_grid(theta: float, scales: np.ndarray) -> np.ndarray:
  span = MIXTURE_SPAN * float(np.max(scales))
  step = float(np.min(scales)) / 10.0
  points = int(min(MAX_MIXTURE_POINTS, np.ceil(2.0 * span / step) + 1))
  return np.linspace(theta - span, theta + span, max(points, 2001))


def summarize(
  kind: str,
  delta: float,
  outcomes: Sequence[Outcome],
  theta: float,
  level: float = 0.01,
  outlier_window: Tuple[float, float] = OUTLIER_WINDOW,
) -> McSummary:
  """Aggregate the outcomes of one estimator at one delta, in run order."""
  kept = [outcome for outcome in outcomes if outcome.report is not None]
  excluded = len(outcomes) - len(kept)
  if len(kept) < 2:
    raise InsufficientRunsError(
      f"{kind}: only {len(kept)} usable runs at delta={delta:g}",
      kind=kind,
      runs=len(kept),
      excluded=excluded,
    )
  reports = [outcome.report for outcome in kept]
  oracles = [outcome.oracle for outcome in kept]
  estimates = np.array([report.theta_hat for report in reports])
  scales = np.array([oracle.delta * oracle.sd for oracle in oracles])

  ks_stat = ks_pvalue = ks_pass = None
  if len(kept) >= MIN_KS_RUNS:
    ks_stat, ks_pvalue, ks_pass = ks_normality(studentize(reports, oracles), level)

  edges = histogram_edges(estimates)
  counts, _ = np.histogram(estimates, bins=edges)
  grid = mixture_grid(theta, scales)
  lo, hi = outlier_window

  return McSummary(
    kind=kind,
    delta=delta,
    runs=len(kept),
    excluded=excluded,
    mean=float(np.mean(estimates)),
    sd=float(np.std(estimates, ddof=1)),
    rmse=float(np.sqrt(np.mean((estimates - theta) ** 2))),
    coverage=float(np.mean([report.covers(theta) for report in reports])),
    outliers=int(np.count_nonzero((estimates < lo) | (estimates > hi))),
    ks_stat=ks_stat,
    ks_pvalue=ks_pvalue,
    ks_pass=ks_pass,
    hist_edges=edges,
    hist_counts=counts,
    hist_mixture=mixture_bin_density(theta, scales, edges),
    mixture_grid=grid,
    mixture_density=mixture_density(theta, scales, grid),
  )


def _outcomes_for(
  replications: Sequence[Replication], kind: str, delta: float
) -> List[Outcome]:
  return [
    outcome
    for replication in replications
    for outcome in replication.outcomes
    if outcome.kind == kind and outcome.delta == delta
  ]


def run_table(
  experiment: Experiment,
  R: int,
  parallelism: int = 1,
  level: float = 0.01,
  outlier_window: Tuple[float, float] = OUTLIER_WINDOW,
) -> Dict[str, McSummary]:
  """Replicate the experiment and summarize each estimator at the first kernel."""
  replications = replicate(experiment, R, parallelism)
  delta = experiment.kernels[0].delta
  theta = experiment.config.theta
  summaries = {}
  for kind in experiment.kinds:
    outcomes = _outcomes_for(replications, kind, delta)
    summaries[kind] = summarize(kind, delta, outcomes, theta, level, outlier_window)
    if summaries[kind].excluded:
      logger.warning(
        f"{kind}: {summaries[kind].excluded} of {R} runs excluded"
      )
  return summaries


def rmse_standard_error(errors: np.ndarray) -> float:
  """Delta-method standard error of sqrt(mean(e^2)) over independent runs."""
  squared = np.asarray(errors, dtype=float) ** 2
  if len(squared) < 2:
    return float("nan")
  rmse = np.sqrt(np.mean(squared))
  if rmse == 0.0:
    return 0.0
  return float(np.std(squared, ddof=1) / np.sqrt(len(squared)) / (2.0 * rmse))


def rmse_sweep(
  experiment: Experiment, R_per_delta: int, parallelism: int = 1
) -> RmseSweep:
  """
  Estimate the RMSE of each estimator over a decreasing grid of deltas.

  Each replication simulates one path and measures it at every kernel, so the
  runs at different deltas share their noise.
  """
  deltas = np.array(experiment.deltas, dtype=float)
  if len(deltas) < 2:
    raise ConfigError(["a delta sweep needs at least 2 grid points"])
  if not np.all(np.diff(deltas) < 0):
    raise ConfigError(["sweep deltas must be strictly decreasing"])

  replications = replicate(experiment, R_per_delta, parallelism)
  theta = experiment.config.theta
  rmse, rmse_se, predicted, runs, slopes = {}, {}, {}, {}, {}
  for kind in experiment.kinds:
    rmse[kind] = np.empty(len(deltas))
    rmse_se[kind] = np.empty(len(deltas))
    predicted[kind] = np.empty(len(deltas))
    runs[kind] = np.empty(len(deltas), dtype=int)
    for i, delta in enumerate(deltas):
      kept = [
        outcome
        for outcome in _outcomes_for(replications, kind, delta)
        if outcome.report is not None
      ]
      if not kept:
        raise InsufficientRunsError(
          f"{kind}: no usable runs at delta={delta:g}", kind=kind, delta=delta
        )
      errors = np.array([outcome.report.theta_hat - theta for outcome in kept])
      rmse[kind][i] = np.sqrt(np.mean(errors**2))
      rmse_se[kind][i] = rmse_standard_error(errors)
      predicted[kind][i] = np.mean([delta * outcome.oracle.sd for outcome in kept])
      runs[kind][i] = len(kept)
    slopes[kind] = float(np.polyfit(np.log10(deltas), np.log10(rmse[kind]), 1)[0])
    logger.info(f"{kind}: fitted log-log RMSE slope {slopes[kind]:.3f}")

  return RmseSweep(
    deltas=deltas,
    kinds=experiment.kinds,
    rmse_by_kind=rmse,
    rmse_se_by_kind=rmse_se,
    predicted_rmse_by_kind=predicted,
    runs_by_kind=runs,
    fitted_slope=slopes,
  )


def binomial_band(runs: int, alpha: float, level: float = 0.99) -> Tuple[float, float]:
  """Return the exact binomial band of coverage fractions around 1 - alpha."""
  lo, hi = stats.binom.interval(level, runs, 1.0 - alpha)
  return float(lo) / runs, float(hi) / runs


def coverage_study(
  experiment: Experiment, R: int, parallelism: int = 1, level: float = 0.99
) -> List[CoverageResult]:
  summaries = run_table(experiment, R, parallelism)
  return [
    CoverageResult(
      kind=kind,
      runs=summary.runs,
      coverage=summary.coverage,
      band=binomial_band(summary.runs, experiment.alpha, level),
    )
    for kind, summary in summaries.items()
  ]


def normality_study(
  experiment: Experiment, R: int, parallelism: int = 1, level: float = 0.01
) -> List[NormalityResult]:
  replications = replicate(experiment, R, parallelism)
  delta = experiment.kernels[0].delta
  results = []
  for kind in experiment.kinds:
    kept = [
      outcome
      for outcome in _outcomes_for(replications, kind, delta)
      if outcome.report is not None
    ]
    stat, passed = studentize_and_test(
      [outcome.report for outcome in kept],
      [outcome.oracle for outcome in kept],
      level,
    )
    logger.info(f"{kind}: KS statistic {stat:.4f} over {len(kept)} runs")
    results.append(NormalityResult(kind, delta, len(kept), stat, passed))
  return results
