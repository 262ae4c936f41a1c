import copy
import logging
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import yaml

from diffusivity.errors import ConfigError, DiffusivityError
from diffusivity.estimators import KINDS, EpsilonSetting
from diffusivity.kernel import LAPLACIAN_MODES, PROFILES, check_support
from diffusivity.measurements import default_window
from diffusivity.simulator import SIGMA_PRESETS, InitialSpec, SigmaSpec, SpdeConfig

logger = logging.getLogger(__name__)

OUTPUT_DIR_ENV = "DIFFUSIVITY_OUTPUT_DIR"

SCALE_PROFILES: Dict[str, Dict[str, int]] = {
  "desk": {"N": 12000, "M": 400, "runs": 200},
  "full": {"N": 48000, "M": 800, "runs": 1000},
}

# None means "derived from other values" (scale profile, L, N/T)
DEFAULTS: Dict[str, Dict[str, Any]] = {
  "spde": {"L": 20.0, "T": 30.0, "theta": 0.05, "N": None, "M": None, "seed": 20240},
  "noise": {"preset": "sigma1"},
  "initial": {"kind": "smooth-step", "hi": 4.0, "lo": 2.0, "width": None},
  "kernel": {
    "profile": "normalized-bump",
    "x0": None,
    "delta": None,
    "deltas": None,
    "laplacian": "cell",
  },
  "estimation": {
    "kinds": list(KINDS),
    "window": None,
    "epsilon_sq": "auto",
    "alpha": 0.05,
    "zeta": 1e-6,
    "ks_level": 0.01,
  },
  "montecarlo": {"runs": None, "jobs": 1, "outlier_window": [0.0, 0.1]},
  "output": {"dir": "results", "dump": "none", "heatmap_stride": [1, 1]},
  "scale": "desk",
}

DUMP_FORMATS = ("none", "csv", "npy")


@dataclass(frozen=True)
class ExperimentSettings:
  spde: SpdeConfig
  profile: str
  x0: float
  delta: Optional[float]
  deltas: Optional[Tuple[float, ...]]
  laplacian: str
  window: Optional[int]
  epsilon_sq: EpsilonSetting
  alpha: float
  zeta: float
  ks_level: float
  kinds: Tuple[str, ...]
  runs: int
  jobs: int
  outlier_window: Tuple[float, float]
  output_dir: Path
  dump: str
  heatmap_stride: Tuple[int, int]
  scale: str
  raw: Dict[str, Any]

  @property
  def delta_grid(self) -> Tuple[float, ...]:
    return self.deltas if self.deltas is not None else (self.delta,)


def _merge(base: Dict[str, Any], overlay: Dict[str, Any], origin: str) -> List[str]:
  violations = []
  for section, values in overlay.items():
    if section not in DEFAULTS:
      violations.append(f"{origin}: unknown section '{section}'")
      continue
    if section == "scale":
      base["scale"] = values
      continue
    if not isinstance(values, dict):
      violations.append(f"{origin}: section '{section}' must be a mapping")
      continue
    if section == "noise" and ("preset" in values or "kind" in values):
      # a new noise block replaces the old one instead of mixing keys
      base["noise"] = {}
    for key, value in values.items():
      if section not in ("noise", "initial") and key not in DEFAULTS[section]:
        violations.append(f"{origin}: unknown key '{section}.{key}'")
        continue
      base[section][key] = value
  return violations


def _load_file(path: str) -> Dict[str, Any]:
  try:
    with open(path, "r") as stream:
      loaded = yaml.safe_load(stream)
  except FileNotFoundError:
    raise ConfigError([f"config file '{path}' does not exist"])
  except yaml.YAMLError as exc:
    mark = getattr(exc, "problem_mark", None)
    if mark is None:
      raise ConfigError([f"{path}: {exc}"])
    problem = getattr(exc, "problem", None) or str(exc)
    raise ConfigError(
      [f"{path}:{mark.line + 1}:{mark.column + 1}: {problem}"], line=mark.line + 1
    )
  if loaded is None:
    return {}
  if not isinstance(loaded, dict):
    raise ConfigError([f"{path}: top level must be a mapping of sections"])
  return loaded


def parse_override(assignment: str) -> Tuple[str, str, Any]:
  """Split a section.key=value override, typing the value as YAML."""
  name, sep, text = assignment.partition("=")
  section, dot, key = name.strip().partition(".")
  if not sep or not dot or not key:
    raise ConfigError([f"override '{assignment}' is not of the form section.key=value"])
  try:
    value = yaml.safe_load(text)
  except yaml.YAMLError as exc:
    raise ConfigError([f"override '{assignment}': {exc}"])
  return section, key, value


def _sigma_from(section: Dict[str, Any], violations: List[str]) -> SigmaSpec:
  if "preset" in section:
    preset = section["preset"]
    if preset not in SIGMA_PRESETS:
      violations.append(f"noise.preset '{preset}' not one of {sorted(SIGMA_PRESETS)}")
      return SIGMA_PRESETS["zero"]
    return SIGMA_PRESETS[preset]
  params = {key: float(value) for key, value in section.items() if key != "kind"}
  return SigmaSpec(str(section.get("kind")), params)


def _initial_from(section: Dict[str, Any]) -> InitialSpec:
  params = {
    key: (None if value is None else float(value))
    for key, value in section.items()
    if key != "kind"
  }
  return InitialSpec(str(section.get("kind")), params)


def _writable(directory: Path) -> bool:
  existing = directory.resolve()
  while not existing.exists():
    existing = existing.parent
  return existing.is_dir() and os.access(existing, os.W_OK)


def _build(raw: Dict[str, Any]) -> ExperimentSettings:
  violations: List[str] = []
  scale = raw["scale"]
  if scale not in SCALE_PROFILES:
    violations.append(f"scale '{scale}' not one of {sorted(SCALE_PROFILES)}")
    scale = "desk"
  profile_defaults = SCALE_PROFILES[scale]

  spde_section = raw["spde"]
  N = spde_section["N"] or profile_defaults["N"]
  M = spde_section["M"] or profile_defaults["M"]
  spde = SpdeConfig(
    L=float(spde_section["L"]),
    T=float(spde_section["T"]),
    theta=float(spde_section["theta"]),
    sigma=_sigma_from(raw["noise"], violations),
    initial=_initial_from(raw["initial"]),
    N=int(N),
    M=int(M),
    seed=int(spde_section["seed"]),
  )
  violations.extend(spde.validate())

  kernel = raw["kernel"]
  if kernel["profile"] not in PROFILES:
    violations.append(f"kernel.profile '{kernel['profile']}' not one of {sorted(PROFILES)}")
  if kernel["laplacian"] not in LAPLACIAN_MODES:
    violations.append(
      f"kernel.laplacian '{kernel['laplacian']}' not one of {list(LAPLACIAN_MODES)}"
    )
  x0 = spde.L / 2.0 if kernel["x0"] is None else float(kernel["x0"])
  delta, deltas = kernel["delta"], kernel["deltas"]
  if delta is not None and deltas is not None:
    violations.append("set exactly one of kernel.delta and kernel.deltas")
  if deltas is not None:
    deltas = tuple(float(value) for value in deltas)
  elif delta is None:
    delta = 0.03 * spde.L
  delta = None if delta is None else float(delta)
  for value in deltas if deltas is not None else (delta,):
    try:
      check_support(x0, value, spde.grid)
    except DiffusivityError as exc:
      violations.append(f"kernel.delta={value:g}: {exc.message}")

  estimation = raw["estimation"]
  kinds = tuple(estimation["kinds"])
  unknown = [kind for kind in kinds if kind not in KINDS]
  if unknown or not kinds:
    violations.append(
      f"estimation.kinds {list(kinds)} must be a non-empty subset of {list(KINDS)}"
    )
  alpha = float(estimation["alpha"])
  if not 0.0 < alpha < 1.0:
    violations.append(f"estimation.alpha must lie in (0, 1), got {alpha}")
  window = estimation["window"]
  if window is not None and int(window) < 1:
    violations.append(f"estimation.window must be >= 1, got {window}")
  if window is None:
    window = default_window(spde.T / spde.N)
  epsilon_sq = estimation["epsilon_sq"]
  if epsilon_sq not in ("auto", "spot"):
    try:
      epsilon_sq = float(epsilon_sq)
      if epsilon_sq < 0:
        violations.append(f"estimation.epsilon_sq must be >= 0, got {epsilon_sq}")
    except (TypeError, ValueError):
      violations.append(
        f"estimation.epsilon_sq must be 'auto', 'spot' or a number, got {epsilon_sq!r}"
      )

  montecarlo = raw["montecarlo"]
  runs = int(montecarlo["runs"] or profile_defaults["runs"])
  if runs < 2:
    violations.append(f"montecarlo.runs must be >= 2, got {runs}")
  jobs = int(montecarlo["jobs"])
  if jobs < 1:
    violations.append(f"montecarlo.jobs must be >= 1, got {jobs}")

  output = raw["output"]
  output_dir = Path(str(output["dir"]))
  if not _writable(output_dir):
    violations.append(f"output.dir '{output_dir}' is not writable")
  if output["dump"] not in DUMP_FORMATS:
    violations.append(f"output.dump '{output['dump']}' not one of {list(DUMP_FORMATS)}")

  if violations:
    raise ConfigError(violations)

  return ExperimentSettings(
    spde=spde,
    profile=kernel["profile"],
    x0=x0,
    delta=delta,
    deltas=deltas,
    laplacian=kernel["laplacian"],
    window=int(window),
    epsilon_sq=epsilon_sq,
    alpha=alpha,
    zeta=float(estimation["zeta"]),
    ks_level=float(estimation["ks_level"]),
    kinds=kinds,
    runs=runs,
    jobs=jobs,
    outlier_window=tuple(float(value) for value in montecarlo["outlier_window"]),
    output_dir=output_dir,
    dump=output["dump"],
    heatmap_stride=tuple(int(value) for value in output["heatmap_stride"]),
    scale=scale,
    raw=raw,
  )


def parse_config(
  path: Optional[str] = None,
  overrides: Optional[List[str]] = None,
  flags: Optional[Dict[str, Any]] = None,
) -> ExperimentSettings:
  """
  Build a validated ExperimentSettings from defaults, a YAML file and overrides.

  Precedence, lowest first: declared defaults, the file, the output-directory
  environment variable, --set overrides, then dedicated flags given as
  {"section.key": value}.
  """
  raw = copy.deepcopy(DEFAULTS)
  violations: List[str] = []
  if path is not None:
    violations.extend(_merge(raw, _load_file(path), path))

  env_dir = os.environ.get(OUTPUT_DIR_ENV)
  if env_dir:
    raw["output"]["dir"] = env_dir

  layered: Dict[str, Dict[str, Any]] = {}
  for assignment in overrides or []:
    section, key, value = parse_override(assignment)
    layered.setdefault(section, {})[key] = value
  for name, value in (flags or {}).items():
    if value is None:
      continue
    if name == "scale":
      layered["scale"] = value
      continue
    section, _, key = name.partition(".")
    layered.setdefault(section, {})[key] = value
  violations.extend(_merge(raw, layered, "flags"))

  if violations:
    raise ConfigError(violations)
  try:
    settings = _build(raw)
  except (TypeError, ValueError) as exc:
    raise ConfigError([f"malformed value: {exc}"])
  spde = settings.spde
  logger.debug(f"Parsed experiment settings (scale={settings.scale}, N={spde.N}, M={spde.M})")
  return settings
