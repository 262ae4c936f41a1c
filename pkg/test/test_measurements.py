import numpy as np
import pytest
from scipy import integrate

from diffusivity.errors import GridMismatchError
from diffusivity.kernel import SpatialGrid, build_profile, discretize
from diffusivity.measurements import (
  LocalMeasurement,
  SpotVolSeries,
  default_window,
  measure,
  spot_vol,
)
from diffusivity.simulator import SpdeConfig, SolutionPath, simulate, streaming_columns
from fake.regression import regression_measurement

GRID = SpatialGrid(20.0, 800)


@pytest.fixture(scope="module")
def profile():
  return build_profile("normalized-bump")


def _frozen_sine(grid, N=10):
  values = np.tile(np.sin(np.pi * grid.nodes / grid.L), (N + 1, 1))
  return SolutionPath(grid, np.linspace(0.0, 1.0, N + 1), np.arange(grid.M + 1), values)


def _ramp(c, N=100, T=1.0):
  times = np.linspace(0.0, T, N + 1)
  return LocalMeasurement(times, c * times, np.ones(N + 1), T / N)


def test_zero_path_gives_zero_series(profile):
  path = SolutionPath(GRID, np.linspace(0, 1, 6), np.arange(GRID.M + 1), np.zeros((6, 801)))
  meas = measure(path, discretize(profile, 10.0, 0.6, GRID))
  assert np.all(meas.x_delta == 0.0) and np.all(meas.x_delta_lap == 0.0)


FINE = SpatialGrid(20.0, 3200)


def _sine_oracle(profile, x0, delta, L):
  """<sin(pi y / L), K_{delta,x0}> and <sin(pi y / L), Delta K_{delta,x0}> by quadrature."""

  def against(weight, power):
    value, _ = integrate.quad(
      lambda u: float(np.sin(np.pi * (x0 + delta * u) / L) * weight(u)),
      -1.0,
      1.0,
      epsabs=1e-13,
      epsrel=1e-12,
      limit=200,
    )
    return delta**power * value

  return against(profile.eval, 0.5), against(profile.eval_second_derivative, -1.5)


@pytest.mark.parametrize("laplacian", ["cell", "point"])
@pytest.mark.parametrize("delta", [0.6, 0.3, 0.15])
def test_frozen_sine_matches_quadrature(profile, delta, laplacian):
  meas = measure(_frozen_sine(FINE), discretize(profile, 10.0, delta, FINE, laplacian))
  with_kernel, with_lap = _sine_oracle(profile, 10.0, delta, FINE.L)
  np.testing.assert_allclose(meas.x_delta, meas.x_delta[0])
  np.testing.assert_allclose(meas.x_delta, with_kernel, rtol=1e-8)
  np.testing.assert_allclose(meas.x_delta_lap, with_lap, rtol=1e-5)
  assert with_lap / with_kernel == pytest.approx(-((np.pi / FINE.L) ** 2), rel=1e-6)


@pytest.mark.parametrize("delta,rtol", [(0.6, 1e-4), (0.3, 1e-4), (0.15, 1e-2)])
def test_frozen_sine_with_cell_weights_on_the_paper_grid(profile, delta, rtol):
  meas = measure(_frozen_sine(GRID), discretize(profile, 10.0, delta, GRID))
  _, with_lap = _sine_oracle(profile, 10.0, delta, GRID.L)
  np.testing.assert_allclose(meas.x_delta_lap, with_lap, rtol=rtol)


def test_measurement_is_linear_and_scales_with_kernel(profile):
  kernel = discretize(profile, 10.0, 0.6, GRID)
  rng = np.random.default_rng(4)
  x, z = rng.normal(size=(2, 4, 801))
  times = np.linspace(0.0, 1.0, 4)
  mx = measure(SolutionPath(GRID, times, np.arange(801), x), kernel)
  mz = measure(SolutionPath(GRID, times, np.arange(801), z), kernel)
  mixed = measure(SolutionPath(GRID, times, np.arange(801), 2.0 * x - 3.0 * z), kernel)
  np.testing.assert_allclose(mixed.x_delta, 2.0 * mx.x_delta - 3.0 * mz.x_delta, atol=1e-12)
  scaled = measure(SolutionPath(GRID, times, np.arange(801), x), kernel.scaled(4.0))
  np.testing.assert_allclose(scaled.x_delta_lap, 4.0 * mx.x_delta_lap, rtol=1e-14)
  assert scaled.gain == 4.0


def test_streaming_path_gives_the_same_measurement(profile):
  config = SpdeConfig(N=60, M=400, seed=12)
  kernel = discretize(profile, 10.0, 0.6, config.grid)
  full = measure(simulate(config), kernel)
  streamed = measure(simulate(config, streaming_columns(config.grid, [kernel], 10.0)), kernel)
  np.testing.assert_allclose(full.x_delta, streamed.x_delta, rtol=1e-12)
  np.testing.assert_allclose(full.x_delta_lap, streamed.x_delta_lap, rtol=1e-12, atol=1e-10)


def test_grid_mismatch(profile):
  kernel = discretize(profile, 10.0, 0.6, SpatialGrid(20.0, 400))
  with pytest.raises(GridMismatchError):
    measure(_frozen_sine(GRID), kernel)


def test_constant_series_has_zero_spot_vol():
  meas = _ramp(0.0)
  assert np.all(spot_vol(meas, 10).y_hat == 0.0)


@pytest.mark.parametrize("D", [1, 7, 100, 500])
def test_linear_ramp_spot_vol(D):
  meas = _ramp(3.0, N=100, T=2.0)
  spot = spot_vol(meas, D)
  assert spot.y_hat.shape == (100,)
  np.testing.assert_allclose(spot.y_hat, 9.0 * 2.0 / 100, rtol=1e-12)


def test_spot_vol_follows_the_windowed_formula():
  rng = np.random.default_rng(3)
  times = np.linspace(0.0, 1.0, 51)
  meas = LocalMeasurement(times, rng.normal(size=51), np.ones(51), 0.02)
  spot = spot_vol(meas, 4)
  squared = np.diff(meas.x_delta) ** 2 / meas.dt
  for n in range(1, 51):
    lo = max(n - 4, 0)
    assert spot.y_hat[n - 1] == pytest.approx(np.mean(squared[lo:n]), rel=1e-12)
  assert np.all(spot.y_hat >= 0.0)


def test_full_window_is_realized_variance_at_the_end():
  meas = regression_measurement(0.0, 0.7, 400, 2.0, seed=1)
  spot = spot_vol(meas, 400)
  realized = np.sum(np.diff(meas.x_delta) ** 2)
  assert spot.y_hat[-1] == pytest.approx(realized / meas.T, rel=1e-12)


def test_brownian_surrogate_spot_vol():
  D = 800
  finals = [
    spot_vol(regression_measurement(0.0, 1.0, 2000, 2.0, seed=s), D).y_hat[-1]
    for s in range(200)
  ]
  assert abs(np.mean(finals) - 1.0) < 3.0 * np.sqrt(2.0 / D)


def test_settled_series_holds_the_first_full_window_value():
  spot = SpotVolSeries(np.array([1.0, 2.0, 3.0, 4.0, 5.0]), 3)
  np.testing.assert_array_equal(spot.settled(), [3.0, 3.0, 3.0, 3.0, 4.0, 5.0])
  np.testing.assert_array_equal(spot.left_endpoints(), [3.0, 3.0, 3.0, 3.0, 4.0])


def test_unit_window_repeats_the_first_value():
  spot = SpotVolSeries(np.array([1.0, 2.0, 3.0]), 1)
  np.testing.assert_array_equal(spot.left_endpoints(), [1.0, 1.0, 2.0])


def test_window_longer_than_the_series_settles_on_the_last_value():
  spot = SpotVolSeries(np.array([1.0, 2.0, 3.0]), 10)
  np.testing.assert_array_equal(spot.settled(), [3.0, 3.0, 3.0, 3.0])


def test_settled_weights_never_rest_on_a_single_increment():
  meas = regression_measurement(0.0, 1.0, 2000, 2.0, seed=5)
  spot = spot_vol(meas, 200)
  left = spot.left_endpoints()
  assert left.shape == (2000,)
  np.testing.assert_array_equal(left[:200], spot.y_hat[199])
  np.testing.assert_array_equal(left[200:], spot.y_hat[199:-1])
  assert np.min(left) > 0.5


def test_window_must_be_positive():
  with pytest.raises(ValueError):
    spot_vol(_ramp(1.0), 0)


def test_default_window():
  assert default_window(30.0 / 12000) == 200
  assert default_window(30.0 / 48000) == 800
