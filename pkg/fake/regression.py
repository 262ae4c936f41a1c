from typing import Optional

import numpy as np

from diffusivity.measurements import LocalMeasurement


def regression_measurement(
  theta: float,
  noise_sd: float,
  N: int,
  T: float,
  seed: int,
  lap: Optional[np.ndarray] = None,
  delta: float = float("nan"),
) -> LocalMeasurement:
  """
  Build a measurement obeying dX_delta = theta X_delta^Delta dt + noise_sd dW exactly.

  lap gives X_delta^Delta on the N + 1 time nodes; by default a slow cosine
  that changes sign. With theta = 0 the measurement is a scaled Brownian motion.
  """
  dt = T / N
  times = np.arange(N + 1) * dt
  if lap is None:
    lap = 1.0 + 2.0 * np.cos(2.0 * np.pi * times / T)
  rng = np.random.default_rng(seed)
  steps = theta * lap[:-1] * dt + noise_sd * np.sqrt(dt) * rng.standard_normal(N)
  x_delta = np.concatenate(([0.0], np.cumsum(steps)))
  return LocalMeasurement(
    times=times, x_delta=x_delta, x_delta_lap=np.asarray(lap, dtype=float), dt=dt, delta=delta
  )
