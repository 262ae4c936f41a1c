import logging
import warnings
from dataclasses import dataclass, field
from typing import Any, Dict, Iterable, List, Optional

import numpy as np

from diffusivity.errors import BlowUpError, ConfigError, GridMismatchError
from diffusivity.kernel import DiscretizedKernel, SpatialGrid
from diffusivity.noise import noise_increments
from diffusivity.tridiag import factor_tridiag, implicit_heat_operator, solve_factored

logger = logging.getLogger(__name__)

BLOWUP_LIMIT = 1e8
CFL_LIMIT = 0.5


@dataclass(frozen=True)
class SigmaSpec:
  """Pointwise noise amplitude sigma(x)."""

  kind: str
  params: Dict[str, float] = field(default_factory=dict)

  KINDS = {
    "constant": ("c",),
    "holder": ("a", "p", "b"),
    "double-exp": ("A", "lam", "c1", "c2"),
    "zero": (),
  }

  @property
  def is_zero(self) -> bool:
    return self.kind == "zero" or (
      self.kind == "constant" and self.params["c"] == 0.0
    )

  def evaluate(self, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    p = self.params
    if self.kind == "constant":
      return np.full_like(x, p["c"])
    if self.kind == "holder":
      return p["a"] * np.abs(x) ** p["p"] + p["b"]
    if self.kind == "double-exp":
      return p["A"] * (
        np.exp(-p["lam"] * np.abs(x - p["c1"]))
        + np.exp(-p["lam"] * np.abs(x - p["c2"]))
      )
    return np.zeros_like(x)

  def validate(self) -> List[str]:
    if self.kind not in self.KINDS:
      return [f"noise.kind '{self.kind}' not one of {sorted(self.KINDS)}"]
    missing = [name for name in self.KINDS[self.kind] if name not in self.params]
    return [f"noise.{name} missing for kind '{self.kind}'" for name in missing]

  def to_dict(self) -> Dict[str, Any]:
    return {"kind": self.kind, **self.params}


SIGMA_PRESETS: Dict[str, SigmaSpec] = {
  "sigma1": SigmaSpec("constant", {"c": 0.20}),
  "sigma2": SigmaSpec("holder", {"a": 0.20, "p": 0.80, "b": 0.01}),
  "sigma3": SigmaSpec("double-exp", {"A": 10.0, "lam": 10.0, "c1": 2.0, "c2": 4.0}),
  "zero": SigmaSpec("zero"),
}


@dataclass(frozen=True)
class InitialSpec:
  """Initial condition X_0 on the closed grid."""

  kind: str
  params: Dict[str, Optional[float]] = field(default_factory=dict)

  KINDS = {
    "smooth-step": ("hi", "lo", "width"),
    "sine-mode": ("amplitude", "mode"),
    "zero": (),
  }

  def validate(self) -> List[str]:
    if self.kind not in self.KINDS:
      return [f"initial.kind '{self.kind}' not one of {sorted(self.KINDS)}"]
    missing = [name for name in self.KINDS[self.kind] if name not in self.params]
    return [f"initial.{name} missing for kind '{self.kind}'" for name in missing]

  def to_dict(self) -> Dict[str, Any]:
    return {"kind": self.kind, **self.params}


DEFAULT_INITIAL = InitialSpec("smooth-step", {"hi": 4.0, "lo": 2.0, "width": None})


@dataclass(frozen=True)
class SpdeConfig:
  L: float = 20.0
  T: float = 30.0
  theta: float = 0.05
  sigma: SigmaSpec = SIGMA_PRESETS["sigma1"]
  initial: InitialSpec = DEFAULT_INITIAL
  N: int = 12000
  M: int = 400
  seed: int = 20240

  @property
  def dt(self) -> float:
    return self.T / self.N

  @property
  def h(self) -> float:
    return self.L / self.M

  @property
  def grid(self) -> SpatialGrid:
    return SpatialGrid(self.L, self.M)

  @property
  def mesh_ratio(self) -> float:
    return self.theta * self.dt / self.h**2

  def validate(self) -> List[str]:
    violations = []
    if not self.theta > 0:
      violations.append(f"spde.theta must be > 0, got {self.theta}")
    if not self.L > 0:
      violations.append(f"spde.L must be > 0, got {self.L}")
    if not self.T > 0:
      violations.append(f"spde.T must be > 0, got {self.T}")
    if self.N < 2:
      violations.append(f"spde.N must be >= 2, got {self.N}")
    if self.M < 2:
      violations.append(f"spde.M must be >= 2, got {self.M}")
    violations.extend(self.sigma.validate())
    violations.extend(self.initial.validate())
    return violations

  def to_dict(self) -> Dict[str, Any]:
    return {
      "L": self.L,
      "T": self.T,
      "theta": self.theta,
      "N": self.N,
      "M": self.M,
      "seed": self.seed,
      "sigma": self.sigma.to_dict(),
      "initial": self.initial.to_dict(),
    }


@dataclass
class SolutionPath:
  """Field values X(t_j, y_k) for the retained spatial nodes."""

  grid: SpatialGrid
  times: np.ndarray
  columns: np.ndarray
  values: np.ndarray

  @property
  def dt(self) -> float:
    return float(self.times[1] - self.times[0])

  @property
  def is_full(self) -> bool:
    return len(self.columns) == self.grid.M + 1

  def node_index(self, x: float) -> int:
    return int(round(x / self.grid.h))

  def _positions(self, nodes: np.ndarray) -> np.ndarray:
    if self.is_full:
      return nodes
    positions = np.searchsorted(self.columns, nodes)
    positions = np.clip(positions, 0, len(self.columns) - 1)
    if not np.array_equal(self.columns[positions], nodes):
      raise GridMismatchError(
        "requested nodes were not retained by the simulation",
        missing=sorted(set(nodes.tolist()) - set(self.columns.tolist())),
      )
    return positions

  def column(self, k: int) -> np.ndarray:
    return self.values[:, self._positions(np.array([k]))[0]]

  def block(self, support: slice) -> np.ndarray:
    nodes = np.arange(support.start, support.stop)
    if self.is_full:
      return self.values[:, support]
    return self.values[:, self._positions(nodes)]


def smootherstep(u: np.ndarray) -> np.ndarray:
  u = np.clip(u, 0.0, 1.0)
  return u**3 * (10.0 - 15.0 * u + 6.0 * u**2)


def initial_condition(initial: InitialSpec, grid: SpatialGrid) -> np.ndarray:
  """Evaluate X_0 on all M + 1 grid nodes."""
  x = grid.nodes
  if initial.kind == "smooth-step":
    hi, lo = initial.params["hi"], initial.params["lo"]
    width = initial.params.get("width") or grid.L / 40.0
    # ramps sit outside [L/4, 3L/4] so the plateau covers the whole interval
    left, right = grid.L / 4.0, 3.0 * grid.L / 4.0
    rise = smootherstep((x - left + width) / width)
    fall = smootherstep((right + width - x) / width)
    return lo + (hi - lo) * rise * fall
  if initial.kind == "sine-mode":
    mode = initial.params["mode"]
    return initial.params["amplitude"] * np.sin(mode * np.pi * x / grid.L)
  if initial.kind == "zero":
    return np.zeros_like(x)
  raise ConfigError([f"initial.kind '{initial.kind}' not supported"])


def streaming_columns(
  grid: SpatialGrid, kernels: Iterable[DiscretizedKernel], x0: float
) -> np.ndarray:
  """Return the nodes a streaming run must keep: kernel stencils and the x0 node."""
  nodes = {int(round(x0 / grid.h))}
  for kernel in kernels:
    nodes.update(range(kernel.stencil.start, kernel.stencil.stop))
  return np.array(sorted(nodes), dtype=np.int64)


def simulate(config: SpdeConfig, retain: Optional[np.ndarray] = None) -> SolutionPath:
  """
  Run the semi-implicit Euler-Maruyama scheme for the stochastic heat equation.

  The Laplacian is taken implicitly and sigma(X_j) explicitly; each step solves
  (I - theta dt A_h) X_{j+1} = X_j + sigma(X_j) xi_j sqrt(dt / h) on the
  interior nodes with zero Dirichlet data. retain selects the stored columns
  (all of them when None).
  """
  violations = config.validate()
  if violations:
    raise ConfigError(violations)
  if config.mesh_ratio > CFL_LIMIT:
    warnings.warn(
      f"Mesh ratio theta*dt/h^2 = {config.mesh_ratio:.3g} exceeds {CFL_LIMIT}; "
      "the implicit drift stays stable but accuracy degrades",
      RuntimeWarning,
      stacklevel=2,
    )

  grid = config.grid
  N, M = config.N, config.M
  columns = (
    np.arange(M + 1) if retain is None else np.unique(np.asarray(retain, dtype=np.int64))
  )

  state = initial_condition(config.initial, grid)
  values = np.empty((N + 1, len(columns)))
  values[0] = state[columns]
  state[0] = state[M] = 0.0

  lower, diag, upper = implicit_heat_operator(M - 1, config.mesh_ratio)
  cp, inv_denom = factor_tridiag(lower, diag, upper)

  interior = state[1:M].copy()
  rhs = np.empty(M - 1)
  noise_scale = np.sqrt(config.dt / config.h)
  noiseless = config.sigma.is_zero

  for j in range(N):
    if noiseless:
      rhs[:] = interior
    else:
      xi = noise_increments(config.seed, j, M)[1:]
      rhs = interior + config.sigma.evaluate(interior) * xi * noise_scale
    solve_factored(lower, cp, inv_denom, rhs, interior)

    peak = np.max(np.abs(interior))
    if not np.isfinite(peak) or peak > BLOWUP_LIMIT:
      raise BlowUpError(
        f"solution left the finite range at step {j + 1}",
        step=j + 1,
        max_abs=float(peak),
      )
    state[1:M] = interior
    values[j + 1] = state[columns]

  logger.debug(f"Simulated {N} steps on {M} cells (seed {config.seed})")
  return SolutionPath(
    grid=grid,
    times=np.arange(N + 1) * config.dt,
    columns=columns,
    values=values,
  )
