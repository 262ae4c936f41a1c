import warnings
from dataclasses import replace

import numpy as np
import pytest

from diffusivity.errors import BlowUpError, ConfigError, GridMismatchError
from diffusivity.kernel import SpatialGrid
from diffusivity.noise import derive_seed
from diffusivity.simulator import (
  SIGMA_PRESETS,
  InitialSpec,
  SigmaSpec,
  SpdeConfig,
  initial_condition,
  simulate,
)

SINE = InitialSpec("sine-mode", {"amplitude": 1.0, "mode": 1.0})


def test_zero_field_stays_zero():
  config = SpdeConfig(sigma=SIGMA_PRESETS["zero"], initial=InitialSpec("zero"), N=50, M=40)
  path = simulate(config)
  assert path.values.shape == (51, 41)
  assert np.all(path.values == 0.0)


def test_eigenmode_decay_on_fine_grid():
  config = SpdeConfig(sigma=SIGMA_PRESETS["zero"], initial=SINE, N=48000, M=800)
  path = simulate(config, retain=np.arange(0, config.M + 1, 8))
  x = path.columns * config.h
  decay = np.exp(-config.theta * (np.pi / config.L) ** 2 * config.T)
  exact = decay * np.sin(np.pi * x / config.L)
  error = np.max(np.abs(path.values[-1] - exact)) / np.max(np.abs(exact))
  assert error < 1e-3


def test_eigenmode_follows_implicit_euler_amplification():
  config = SpdeConfig(sigma=SIGMA_PRESETS["zero"], initial=SINE, N=200, M=50)
  path = simulate(config)
  eigenvalue = 4.0 / config.h**2 * np.sin(np.pi * config.h / (2.0 * config.L)) ** 2
  factor = 1.0 / (1.0 + config.theta * config.dt * eigenvalue)
  mid = config.M // 2
  expected = factor ** np.arange(config.N + 1) * path.values[0, mid]
  np.testing.assert_allclose(path.column(mid), expected, rtol=1e-10)


def test_same_seed_same_path():
  config = SpdeConfig(N=100, M=40, seed=7)
  first, second = simulate(config), simulate(config)
  np.testing.assert_array_equal(first.values, second.values)
  other = simulate(SpdeConfig(N=100, M=40, seed=8))
  assert not np.array_equal(first.values, other.values)


def test_retained_columns_match_full_path():
  config = SpdeConfig(N=100, M=40, seed=3)
  full = simulate(config)
  partial = simulate(config, retain=np.array([25, 5, 20, 5]))
  np.testing.assert_array_equal(partial.columns, [5, 20, 25])
  np.testing.assert_array_equal(partial.column(20), full.column(20))
  np.testing.assert_array_equal(partial.block(slice(20, 21)), full.values[:, 20:21])
  with pytest.raises(GridMismatchError):
    partial.column(21)


def test_boundaries_are_zero_after_start():
  path = simulate(SpdeConfig(N=30, M=40))
  assert path.values[0, 0] == pytest.approx(2.0)
  assert np.all(path.values[1:, 0] == 0.0)
  assert np.all(path.values[1:, -1] == 0.0)


def test_smooth_step_initial_condition():
  grid = SpatialGrid(20.0, 400)
  values = initial_condition(InitialSpec("smooth-step", {"hi": 4.0, "lo": 2.0}), grid)
  plateau = (grid.nodes >= grid.L / 4) & (grid.nodes <= 3 * grid.L / 4)
  np.testing.assert_allclose(values[plateau], 4.0)
  for k in (grid.M // 4, grid.M // 2, 3 * grid.M // 4):
    assert values[k] == pytest.approx(4.0)
  assert values[grid.M // 8] == pytest.approx(2.0)
  assert values[0] == pytest.approx(2.0)
  assert np.all((values >= 2.0) & (values <= 4.0))


def test_coarse_time_step_warns():
  with pytest.warns(RuntimeWarning, match="Mesh ratio"):
    simulate(SpdeConfig(N=10, M=400))


def test_desk_mesh_ratio_does_not_warn():
  config = SpdeConfig(T=0.25, N=100, M=400)
  assert config.mesh_ratio == pytest.approx(0.05)
  with warnings.catch_warnings(record=True) as caught:
    warnings.simplefilter("always")
    simulate(config)
  assert not [w for w in caught if "Mesh ratio" in str(w.message)]


def test_blow_up_is_reported():
  config = SpdeConfig(sigma=SigmaSpec("constant", {"c": 1e12}), N=20, M=40)
  with pytest.raises(BlowUpError) as info:
    simulate(config)
  assert info.value.details["step"] == 1


def test_invalid_config_is_rejected():
  with pytest.raises(ConfigError) as info:
    simulate(SpdeConfig(theta=-1.0, sigma=SigmaSpec("holder", {"a": 1.0}), N=10, M=10))
  assert len(info.value.violations) == 3


def _variance_oracle(config, node, steps):
  """Propagate the covariance of the linear scheme exactly."""
  n = config.M - 1
  A = np.eye(n) * (1.0 + 2.0 * config.mesh_ratio)
  A -= config.mesh_ratio * (np.eye(n, k=1) + np.eye(n, k=-1))
  inverse = np.linalg.inv(A)
  sigma = config.sigma.params["c"]
  cov = np.zeros((n, n))
  for _ in range(steps):
    cov = inverse @ (cov + sigma**2 * config.dt / config.h * np.eye(n)) @ inverse.T
  return cov[node - 1, node - 1]


def test_noise_variance_matches_linear_recursion():
  config = SpdeConfig(
    sigma=SigmaSpec("constant", {"c": 0.5}), initial=InitialSpec("zero"), N=40, M=16, T=4.0
  )
  node = 8
  finals = [
    simulate(
      replace(config, seed=derive_seed(2024, r)), retain=np.array([node])
    ).column(node)[-1]
    for r in range(2000)
  ]
  expected = _variance_oracle(config, node, config.N)
  assert np.var(finals, ddof=1) == pytest.approx(expected, rel=0.15)
