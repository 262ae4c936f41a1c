import pickle

import numpy as np
import pytest
from scipy import integrate, stats

from diffusivity.errors import BlowUpError, ConfigError, InsufficientRunsError, RunError
from diffusivity.estimators import AsymptoticOracle, EstimateReport
from diffusivity.kernel import build_profile
from diffusivity.montecarlo import (
  MAX_HIST_BINS,
  Experiment,
  Outcome,
  binomial_band,
  build_kernels,
  histogram_edges,
  ks_normality,
  mixture_bin_density,
  mixture_density,
  mixture_grid,
  replicate,
  rmse_standard_error,
  rmse_sweep,
  run_table,
  studentize_and_test,
  summarize,
)
from diffusivity.noise import derive_seed
from diffusivity.simulator import SigmaSpec, SpdeConfig

# coarse grid so a replication takes milliseconds
SMALL = SpdeConfig(N=200, M=100, seed=77)


@pytest.fixture(scope="module")
def profile():
  return build_profile("normalized-bump")


@pytest.fixture(scope="module")
def experiment(profile):
  kernels = build_kernels(profile, 10.0, [2.0], SMALL)
  return Experiment(SMALL, kernels, ("ANE", "MNE", "SMNE"), window=10)


def _outcome(theta_hat, half_width=0.01, sd=0.02, delta=0.5, kind="ANE"):
  report = EstimateReport(
    kind=kind,
    theta_hat=theta_hat,
    numerator=theta_hat,
    denominator=1.0,
    I_term=1.0,
    J_term=1.0,
    ci=(theta_hat - half_width, theta_hat + half_width),
    alpha=0.05,
    delta=delta,
  )
  oracle = AsymptoticOracle(kind=kind, sd=sd, T_star=30.0, theta=0.05, delta=delta)
  return Outcome(kind, delta, report, oracle)


def test_build_kernels_reports_every_bad_delta(profile):
  with pytest.raises(ConfigError) as info:
    build_kernels(profile, 10.0, [2.0, 12.0, 11.0], SMALL)
  assert len(info.value.violations) == 2


def test_replications_are_ordered_and_seeded(experiment):
  replications = replicate(experiment, 3)
  assert [r.run_index for r in replications] == [0, 1, 2]
  assert [r.seed for r in replications] == [derive_seed(77, r) for r in range(3)]
  assert len(replications[0].outcomes) == 3


def test_parallelism_does_not_change_results(experiment):
  serial = replicate(experiment, 4, parallelism=1)
  parallel = replicate(experiment, 4, parallelism=2)
  for a, b in zip(serial, parallel):
    assert [o.report.theta_hat for o in a.outcomes] == [o.report.theta_hat for o in b.outcomes]


def test_too_few_runs(experiment):
  with pytest.raises(InsufficientRunsError):
    replicate(experiment, 1)


def test_run_errors_carry_the_run_index(profile):
  config = SpdeConfig(N=20, M=100, sigma=SigmaSpec("constant", {"c": 1e12}))
  exploding = Experiment(config, build_kernels(profile, 10.0, [2.0], config), ("ANE",))
  with pytest.raises(RunError) as info:
    replicate(exploding, 2)
  assert info.value.run_index == 0
  assert isinstance(info.value.cause, BlowUpError)
  assert info.value.details["run_index"] == 0


def test_errors_survive_pickling():
  error = RunError(5, BlowUpError("boom", step=3))
  restored = pickle.loads(pickle.dumps(error))
  assert restored.run_index == 5
  assert restored.details == error.details
  assert str(restored) == str(error)


def test_summary_statistics():
  estimates = [0.045, 0.05, 0.07, 0.052, 0.061]
  outcomes = [_outcome(value) for value in estimates]
  outcomes.append(Outcome("ANE", 0.5, excluded="ZeroSpotVolError"))
  summary = summarize("ANE", 0.5, outcomes, theta=0.05)
  values = np.array(estimates)
  assert summary.runs == 5 and summary.excluded == 1 and summary.attempted == 6
  assert summary.mean == pytest.approx(values.mean(), rel=1e-12)
  assert summary.sd == pytest.approx(values.std(ddof=1), rel=1e-12)
  R = summary.runs
  identity = (summary.mean - 0.05) ** 2 + summary.sd**2 * (R - 1) / R
  assert summary.rmse**2 == pytest.approx(identity, rel=1e-12)
  assert summary.coverage == pytest.approx(3 / 5)
  assert summary.hist_counts.sum() == R
  assert summary.ks_stat is None


def test_outliers_are_counted():
  outcomes = [_outcome(value) for value in (0.05, 0.2, -0.1, 0.06)]
  assert summarize("ANE", 0.5, outcomes, theta=0.05).outliers == 2


def test_summary_needs_two_usable_runs():
  outcomes = [_outcome(0.05), Outcome("ANE", 0.5, excluded="ZeroSpotVolError")]
  with pytest.raises(InsufficientRunsError):
    summarize("ANE", 0.5, outcomes, theta=0.05)


def test_mixture_density_integrates_to_one():
  scales = np.array([0.005, 0.01, 0.02])
  grid = mixture_grid(0.05, scales)
  density = mixture_density(0.05, scales, grid)
  assert integrate.trapezoid(density, grid) == pytest.approx(1.0, abs=1e-6)
  edges = np.linspace(0.0, 0.1, 21)
  binned = mixture_bin_density(0.05, scales, edges)
  assert np.sum(binned * np.diff(edges)) == pytest.approx(
    np.mean([stats.norm.cdf(0.05 / s) - stats.norm.cdf(-0.05 / s) for s in scales]), rel=1e-12
  )


def test_histogram_bins_are_capped():
  values = np.concatenate((np.linspace(0.0, 1.0, 5000), [1e3]))
  assert len(histogram_edges(values)) - 1 <= MAX_HIST_BINS


def test_ks_null_and_power():
  quantiles = stats.norm.ppf((np.arange(500) + 0.5) / 500)
  stat, pvalue, passed = ks_normality(quantiles, 0.01)
  assert passed and stat < 0.01
  shifted = ks_normality(quantiles + 1.0, 0.01)
  assert not shifted[2]
  widened = ks_normality(2.0 * quantiles, 0.01)
  assert not widened[2]


def test_studentize_and_test():
  quantiles = stats.norm.ppf((np.arange(100) + 0.5) / 100)
  # delta * sd = 0.01, so theta_hat = theta + 0.01 z
  outcomes = [_outcome(0.05 + 0.01 * z, sd=0.02, delta=0.5) for z in quantiles]
  reports = [o.report for o in outcomes]
  oracles = [o.oracle for o in outcomes]
  stat, passed = studentize_and_test(reports, oracles, 0.01)
  assert passed and stat < 0.02
  with pytest.raises(InsufficientRunsError):
    studentize_and_test(reports[:10], oracles[:10])


def test_run_table(experiment):
  summaries = run_table(experiment, 3)
  assert list(summaries) == ["ANE", "MNE", "SMNE"]
  for summary in summaries.values():
    assert summary.attempted == 3
    assert 0.0 <= summary.coverage <= 1.0


def test_sweep_validates_the_delta_grid(profile):
  single = Experiment(SMALL, build_kernels(profile, 10.0, [2.0], SMALL), ("ANE",))
  with pytest.raises(ConfigError):
    rmse_sweep(single, 2)
  rising = Experiment(SMALL, build_kernels(profile, 10.0, [1.5, 2.0], SMALL), ("ANE",))
  with pytest.raises(ConfigError):
    rmse_sweep(rising, 2)


def test_sweep_shares_paths(profile):
  experiment = Experiment(SMALL, build_kernels(profile, 10.0, [3.0, 2.0, 1.5], SMALL), ("ANE",))
  sweep = rmse_sweep(experiment, 3)
  assert sweep.rmse_by_kind["ANE"].shape == (3,)
  assert np.all(sweep.runs_by_kind["ANE"] == 3)
  assert np.isfinite(sweep.fitted_slope["ANE"])
  assert sweep.rmse_se_by_kind["ANE"].shape == (3,)
  assert np.all(sweep.rmse_se_by_kind["ANE"] > 0.0)


def test_rmse_standard_error():
  assert rmse_standard_error(np.array([0.0, 2.0])) == pytest.approx(np.sqrt(0.5), rel=1e-12)
  assert rmse_standard_error(np.array([1.0, -1.0, 1.0])) == 0.0
  assert rmse_standard_error(np.zeros(5)) == 0.0
  assert np.isnan(rmse_standard_error(np.array([0.3])))
  errors = 0.5 * np.random.default_rng(8).standard_normal(20000)
  assert rmse_standard_error(errors) == pytest.approx(0.5 / np.sqrt(2 * 20000), rel=0.1)


def test_binomial_band():
  lo, hi = binomial_band(300, 0.05)
  assert 0.90 < lo < 0.95 < hi < 0.99
  assert binomial_band(300, 0.05, level=0.5)[0] > lo


def test_two_run_table_matches_hand_computation(experiment):
  replications = replicate(experiment, 2)
  summaries = run_table(experiment, 2)
  for kind, summary in summaries.items():
    values = [
      outcome.report.theta_hat
      for replication in replications
      for outcome in replication.outcomes
      if outcome.kind == kind
    ]
    assert summary.mean == pytest.approx((values[0] + values[1]) / 2, rel=1e-12)
    assert summary.sd == pytest.approx(abs(values[0] - values[1]) / np.sqrt(2), rel=1e-9)
