import math
from dataclasses import dataclass

import numpy as np

from diffusivity.errors import GridMismatchError
from diffusivity.kernel import DiscretizedKernel
from diffusivity.simulator import SolutionPath

# spot-volatility window length in time units
WINDOW_TIME = 0.5


@dataclass
class LocalMeasurement:
  """Local observations X_delta(t_j) and X_delta^Delta(t_j) at one kernel."""

  times: np.ndarray
  x_delta: np.ndarray
  x_delta_lap: np.ndarray
  dt: float
  delta: float = float("nan")
  gain: float = 1.0

  @property
  def N(self) -> int:
    return len(self.times) - 1

  @property
  def T(self) -> float:
    return self.N * self.dt

  def increments(self) -> np.ndarray:
    return np.diff(self.x_delta)

  def lap_left(self) -> np.ndarray:
    return self.x_delta_lap[:-1]


@dataclass
class SpotVolSeries:
  y_hat: np.ndarray
  window: int

  @property
  def settle_index(self) -> int:
    """Position of the first estimate averaged over a full window (or over all N)."""
    return min(self.window, len(self.y_hat)) - 1

  def settled(self) -> np.ndarray:
    """
    Return Y_hat(t_0), ..., Y_hat(t_N) as the estimators weight with them.

    An average over fewer than D squared increments can fall far below the
    level it estimates, so t_0 up to t_{D-1} take Y_hat(t_D), the first
    full-window value.
    """
    first = self.settle_index
    head = np.full(first + 1, self.y_hat[first])
    return np.concatenate((head, self.y_hat[first:]))

  def left_endpoints(self) -> np.ndarray:
    """Return the settled Y_hat(t_{j-1}) for j = 1..N."""
    return self.settled()[:-1]


def default_window(dt: float) -> int:
  return max(1, math.ceil(WINDOW_TIME / dt - 1e-9))


def measure(path: SolutionPath, kernel: DiscretizedKernel) -> LocalMeasurement:
  """Form the inner products of the path with K and with the kernel's Laplacian weights."""
  if kernel.grid != path.grid:
    raise GridMismatchError(
      "kernel and path live on different spatial grids",
      kernel_grid=[kernel.grid.L, kernel.grid.M],
      path_grid=[path.grid.L, path.grid.M],
    )
  h = path.grid.h
  block = path.block(kernel.stencil)
  x_delta = h * (block @ kernel.k_values[kernel.stencil])
  x_delta_lap = h * (block @ kernel.k_lap_values[kernel.stencil])
  return LocalMeasurement(
    times=path.times,
    x_delta=x_delta,
    x_delta_lap=x_delta_lap,
    dt=path.dt,
    delta=kernel.delta,
    gain=kernel.gain,
  )


def spot_vol(meas: LocalMeasurement, D: int) -> SpotVolSeries:
  """
  Estimate the spot squared volatility from the past D squared increments.

  Y_hat(t_n) averages (N/T) (X_delta(t_j) - X_delta(t_{j-1}))^2 over the
  min(n, D) most recent increments, n = 1..N.
  """
  if D < 1:
    raise ValueError(f"window D must be >= 1, got {D}")
  if meas.N < 1:
    raise ValueError("spot volatility needs at least one increment")
  squared = meas.increments() ** 2 / meas.dt
  # direct windowed sums keep every entry a sum of non-negative terms
  window_sums = np.convolve(squared, np.ones(D))[: meas.N]
  counts = np.minimum(np.arange(1, meas.N + 1), D)
  return SpotVolSeries(y_hat=window_sums / counts, window=D)
