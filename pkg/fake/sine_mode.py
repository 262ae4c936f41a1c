import argparse
import logging
from pathlib import Path
from typing import List, Optional

import numpy as np

from diffusivity.export import write_measurement
from diffusivity.kernel import SpatialGrid, build_profile, discretize
from diffusivity.measurements import measure
from diffusivity.simulator import SolutionPath

logger = logging.getLogger(__name__)


def decay_rate(theta: float, mode: int, L: float) -> float:
  return theta * (mode * np.pi / L) ** 2


def sine_mode_path(
  grid: SpatialGrid,
  theta: float,
  T: float,
  N: int,
  amplitude: float = 1.0,
  mode: int = 1,
) -> SolutionPath:
  """
  Sample the exact noiseless solution A exp(-theta (m pi / L)^2 t) sin(m pi x / L).

  Stands in for a simulated path wherever a test needs a field with known
  dynamics; the result is frozen, no scheme error enters it.
  """
  times = np.arange(N + 1) * (T / N)
  decay = np.exp(-decay_rate(theta, mode, grid.L) * times)
  profile = amplitude * np.sin(mode * np.pi * grid.nodes / grid.L)
  return SolutionPath(
    grid=grid,
    times=times,
    columns=np.arange(grid.M + 1),
    values=np.outer(decay, profile),
  )


def main(args: Optional[List[str]] = None):
  parser = argparse.ArgumentParser(description="Write the local measurement of a sine mode.")
  parser.add_argument("--theta", type=float, default=0.05)
  parser.add_argument("--L", type=float, default=20.0)
  parser.add_argument("--T", type=float, default=30.0)
  parser.add_argument("--N", type=int, default=3000)
  parser.add_argument("--M", type=int, default=400)
  parser.add_argument("--mode", type=int, default=1)
  parser.add_argument("--delta", type=float, default=0.6)
  parser.add_argument("--out", default="results/fake")
  parsed = parser.parse_args(args)
  logging.basicConfig(level=logging.INFO, format="[%(levelname)s] [%(name)s]: %(message)s")

  grid = SpatialGrid(parsed.L, parsed.M)
  path = sine_mode_path(grid, parsed.theta, parsed.T, parsed.N, mode=parsed.mode)
  kernel = discretize(build_profile("normalized-bump"), parsed.L / 2.0, parsed.delta, grid)
  write_measurement(Path(parsed.out), measure(path, kernel))
  rate = decay_rate(parsed.theta, parsed.mode, parsed.L)
  logger.info(f"Sine mode {parsed.mode} decays at rate {rate:.6g}")


if __name__ == "__main__":
  main()
