import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Dict

import numpy as np
from scipy import integrate

from diffusivity.errors import (
  ConfigError,
  GridTooCoarseError,
  SupportOutOfDomainError,
  UnknownProfileError,
)

logger = logging.getLogger(__name__)

MIN_SUPPORT_NODES = 8
QUAD_EPSREL = 1e-12
NORM_CHECK_RTOL = 1e-3
LAP_MOMENT_RTOL = 1e-4
LAPLACIAN_MODES = ("cell", "point")
# index rounding guard for nodes that sit exactly on the support edge
_EDGE_TOL = 1e-9


@dataclass(frozen=True)
class SpatialGrid:
  L: float
  M: int

  @property
  def h(self) -> float:
    return self.L / self.M

  @property
  def nodes(self) -> np.ndarray:
    return np.arange(self.M + 1) * self.h


def _squared_norm(func: Callable[[np.ndarray], np.ndarray]) -> float:
  value, _ = integrate.quad(
    lambda x: float(func(x)) ** 2, -1.0, 1.0, epsabs=0.0, epsrel=QUAD_EPSREL, limit=200
  )
  return value


class KernelProfile:
  """Compactly supported kernel K on [-1, 1] with its second derivative and norms."""

  def __init__(
    self,
    name: str,
    func: Callable[[np.ndarray], np.ndarray],
    first_derivative: Callable[[np.ndarray], np.ndarray],
    second_derivative: Callable[[np.ndarray], np.ndarray],
  ):
    self.name = name
    self._func = func
    self._first = first_derivative
    self._second = second_derivative

    raw_norm_sq = _squared_norm(self._func)
    raw_prime_sq = _squared_norm(self._first)
    self._scale = 1.0 / np.sqrt(raw_norm_sq)
    self.norm_K = float(np.sqrt(raw_norm_sq) * self._scale)
    self.norm_Kprime = float(np.sqrt(raw_prime_sq) * self._scale)

  def eval(self, x) -> np.ndarray:
    return self._scale * self._func(np.asarray(x, dtype=float))

  def eval_first_derivative(self, x) -> np.ndarray:
    return self._scale * self._first(np.asarray(x, dtype=float))

  def eval_second_derivative(self, x) -> np.ndarray:
    return self._scale * self._second(np.asarray(x, dtype=float))

  def __reduce__(self):
    return (build_profile, (self.name,))


def _bump_parts(x: np.ndarray, steepness: float):
  x = np.asarray(x, dtype=float)
  inside = np.abs(x) < 1.0
  u = np.where(inside, 1.0 - x**2, 1.0)
  value = np.where(inside, np.exp(-steepness / u), 0.0)
  return x, inside, u, value


def _bump(steepness: float):
  def func(x):
    _, _, _, value = _bump_parts(x, steepness)
    return value

  def first(x):
    x, inside, u, value = _bump_parts(x, steepness)
    g1 = -2.0 * steepness * x / u**2
    return np.where(inside, g1 * value, 0.0)

  def second(x):
    x, inside, u, value = _bump_parts(x, steepness)
    g1 = -2.0 * steepness * x / u**2
    g2 = -2.0 * steepness * (1.0 + 3.0 * x**2) / u**3
    return np.where(inside, (g2 + g1**2) * value, 0.0)

  return func, first, second


PROFILES: Dict[str, float] = {
  # exp(-10 / (1 - x^2)) on (-1, 1)
  "normalized-bump": 10.0,
}


def build_profile(name: str) -> KernelProfile:
  """Build a normalized kernel profile by name."""
  if name not in PROFILES:
    raise UnknownProfileError(
      f"unknown kernel profile '{name}'", profile=name, supported=sorted(PROFILES)
    )
  func, first, second = _bump(PROFILES[name])
  profile = KernelProfile(name, func, first, second)
  logger.debug(
    f"Profile {name}: |K|={profile.norm_K:.12g}, |K'|={profile.norm_Kprime:.12g}"
  )
  return profile


@dataclass(frozen=True)
class DiscretizedKernel:
  x0: float
  delta: float
  grid: SpatialGrid
  k_values: np.ndarray = field(repr=False)
  k_lap_values: np.ndarray = field(repr=False)
  norm_K: float
  norm_Kprime: float
  support: slice
  gain: float = 1.0
  laplacian: str = "cell"

  @property
  def support_nodes(self) -> int:
    return self.support.stop - self.support.start

  @property
  def stencil(self) -> slice:
    """Support plus one node on each side, where cell-averaged Laplacian weights can live."""
    return slice(max(self.support.start - 1, 0), min(self.support.stop + 1, self.grid.M + 1))

  def discrete_norm_sq(self) -> float:
    return float(self.grid.h * np.sum(self.k_values**2))

  def laplacian_moment_deviation(self) -> float:
    """Relative error in h sum k_lap (y - x0)^2 = 2 h sum k, exact for a resolved kernel."""
    offsets = self.grid.nodes - self.x0
    second_moment = self.grid.h * np.sum(self.k_lap_values * offsets**2)
    mass = 2.0 * self.grid.h * np.sum(self.k_values)
    return float(abs(second_moment / mass - 1.0))

  def scaled(self, c: float) -> "DiscretizedKernel":
    return replace(
      self,
      k_values=c * self.k_values,
      k_lap_values=c * self.k_lap_values,
      gain=c * self.gain,
    )


def support_slice(x0: float, delta: float, grid: SpatialGrid) -> slice:
  """Return the node range [x0 - delta, x0 + delta) as a slice into the grid."""
  k_lo = int(np.ceil((x0 - delta) / grid.h - _EDGE_TOL))
  k_hi = int(np.ceil((x0 + delta) / grid.h - _EDGE_TOL))
  return slice(max(k_lo, 0), min(k_hi, grid.M + 1))


def check_support(x0: float, delta: float, grid: SpatialGrid) -> slice:
  if not (x0 - delta > 0.0 and x0 + delta < grid.L):
    raise SupportOutOfDomainError(
      f"kernel support [{x0 - delta:g}, {x0 + delta:g}] not inside (0, {grid.L:g})",
      x0=x0,
      delta=delta,
      L=grid.L,
    )
  support = support_slice(x0, delta, grid)
  nodes = support.stop - support.start
  if nodes < MIN_SUPPORT_NODES:
    raise GridTooCoarseError(
      f"only {nodes} grid nodes inside kernel support, need {MIN_SUPPORT_NODES}",
      nodes=nodes,
      delta=delta,
      h=grid.h,
    )
  return support


def laplacian_weights(
  profile: KernelProfile, x0: float, delta: float, grid: SpatialGrid, laplacian: str
) -> np.ndarray:
  """
  Build weights w_k so that h sum_k X_k w_k stands in for <X, Delta K_{delta,x0}>.

  "cell" averages the analytic Delta K over each grid cell, which only needs
  K' at the cell faces and integrates the piecewise-constant field exactly.
  "point" samples the analytic Delta K at the nodes.
  """
  if laplacian not in LAPLACIAN_MODES:
    raise ConfigError(
      [f"kernel.laplacian '{laplacian}' not one of {list(LAPLACIAN_MODES)}"]
    )
  weights = np.zeros(grid.M + 1)
  if laplacian == "point":
    support = support_slice(x0, delta, grid)
    u = (grid.nodes[support] - x0) / delta
    # Laplacian picks up delta^-2 on top of the delta^-1/2 amplitude
    weights[support] = delta**-2.5 * profile.eval_second_derivative(u)
    return weights
  h = grid.h
  right = profile.eval_first_derivative((grid.nodes + h / 2.0 - x0) / delta)
  left = profile.eval_first_derivative((grid.nodes - h / 2.0 - x0) / delta)
  weights[:] = delta**-1.5 * (right - left) / h
  # boundary nodes carry no field under the Dirichlet data
  weights[0] = weights[-1] = 0.0
  return weights


def discretize(
  profile: KernelProfile,
  x0: float,
  delta: float,
  grid: SpatialGrid,
  laplacian: str = "cell",
) -> DiscretizedKernel:
  """Sample K_{delta,x0} inside its support and build the matching Laplacian weights."""
  support = check_support(x0, delta, grid)

  u = (grid.nodes[support] - x0) / delta
  k_values = np.zeros(grid.M + 1)
  k_values[support] = delta**-0.5 * profile.eval(u)

  kernel = DiscretizedKernel(
    x0=x0,
    delta=delta,
    grid=grid,
    k_values=k_values,
    k_lap_values=laplacian_weights(profile, x0, delta, grid, laplacian),
    norm_K=profile.norm_K,
    norm_Kprime=profile.norm_Kprime,
    support=support,
    laplacian=laplacian,
  )

  deviation = abs(kernel.discrete_norm_sq() / profile.norm_K**2 - 1.0)
  if deviation > NORM_CHECK_RTOL:
    logger.warning(
      f"Discrete |K_delta|^2 deviates {deviation:.2e} from |K|^2 "
      f"(delta={delta:g}, {kernel.support_nodes} nodes)"
    )
  moment = kernel.laplacian_moment_deviation()
  if moment > LAP_MOMENT_RTOL:
    logger.warning(
      f"Grid does not resolve Delta K_delta: second moment off by {moment:.2e} "
      f"(delta={delta:g}, {kernel.support_nodes} nodes, laplacian={laplacian})"
    )
  return kernel
