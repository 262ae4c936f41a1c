import argparse
import json
import logging
import sys
import warnings
from typing import Any, Dict, List, Optional

from diffusivity import __version__
from diffusivity import export
from diffusivity.config import DUMP_FORMATS, ExperimentSettings, parse_config
from diffusivity.errors import ConfigError, DiffusivityError, EstimatorInapplicableError
from diffusivity.estimators import asymptotic_oracle, estimate_all, functional_limits
from diffusivity.kernel import build_profile
from diffusivity.measurements import measure, spot_vol
from diffusivity.montecarlo import (
  Experiment,
  NormalityResult,
  build_kernels,
  coverage_study,
  normality_study,
  rmse_sweep,
  run_table,
)
from diffusivity.simulator import simulate, streaming_columns

logger = logging.getLogger(__name__)

SUBCOMMANDS = ("simulate", "estimate", "mc", "sweep", "coverage", "normality")

# dedicated flag -> config key
FLAG_KEYS = {
  "theta": "spde.theta",
  "N": "spde.N",
  "M": "spde.M",
  "seed": "spde.seed",
  "sigma": "noise.preset",
  "delta": "kernel.delta",
  "deltas": "kernel.deltas",
  "alpha": "estimation.alpha",
  "epsilon_sq": "estimation.epsilon_sq",
  "window": "estimation.window",
  "runs": "montecarlo.runs",
  "jobs": "montecarlo.jobs",
  "out": "output.dir",
  "dump": "output.dump",
  "scale": "scale",
}


def _delta_list(text: str) -> List[float]:
  try:
    return [float(value) for value in text.split(",") if value.strip()]
  except ValueError:
    raise argparse.ArgumentTypeError(f"'{text}' is not a comma-separated list of numbers")


def _epsilon(text: str) -> Any:
  if text in ("auto", "spot"):
    return text
  try:
    return float(text)
  except ValueError:
    raise argparse.ArgumentTypeError(f"'{text}' is not 'auto', 'spot' or a number")


def build_parser() -> argparse.ArgumentParser:
  parser = argparse.ArgumentParser(
    prog="diffusivity",
    description="Simulate the stochastic heat equation and estimate its diffusivity "
    "from local measurements.",
  )
  parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
  parser.add_argument("subcommand", choices=SUBCOMMANDS)
  parser.add_argument("--config", help="YAML experiment file")
  parser.add_argument(
    "--set",
    dest="overrides",
    action="append",
    default=[],
    metavar="SECTION.KEY=VALUE",
    help="override one config value, may be repeated",
  )
  parser.add_argument("--theta", type=float)
  parser.add_argument("--N", type=int, help="number of time steps")
  parser.add_argument("--M", type=int, help="number of spatial cells")
  parser.add_argument("--seed", type=int, help="master seed")
  parser.add_argument("--sigma", help="noise preset (sigma1, sigma2, sigma3, zero)")
  parser.add_argument("--delta", type=float, help="kernel resolution")
  parser.add_argument("--deltas", type=_delta_list, help="decreasing list, e.g. 1.2,0.6,0.3")
  parser.add_argument("--alpha", type=float, help="confidence intervals at level 1 - alpha")
  parser.add_argument("--epsilon-sq", dest="epsilon_sq", type=_epsilon)
  parser.add_argument("--window", type=int, help="spot volatility window D")
  parser.add_argument("--runs", type=int, help="Monte Carlo replications")
  parser.add_argument("--jobs", type=int, help="worker processes")
  parser.add_argument("--out", help="output directory")
  parser.add_argument("--dump", choices=DUMP_FORMATS, help="path dump format")
  parser.add_argument("--scale", help="scale profile (desk, full)")
  parser.add_argument(
    "--log-level",
    default="INFO",
    choices=["DEBUG", "INFO", "WARNING", "ERROR"],
  )
  return parser


def flags_from(args: argparse.Namespace) -> Dict[str, Any]:
  flags = {key: getattr(args, name) for name, key in FLAG_KEYS.items()}
  return {key: value for key, value in flags.items() if value is not None}


def overrides_from(args: argparse.Namespace) -> List[str]:
  overrides = list(args.overrides)
  # a dedicated --delta or --deltas replaces whichever form the file used
  if args.deltas is not None and args.delta is None:
    overrides.append("kernel.delta=null")
  if args.delta is not None and args.deltas is None:
    overrides.append("kernel.deltas=null")
  return overrides


class ExperimentRunner:
  """Run one subcommand against a parsed experiment and write its artifacts."""

  def __init__(self, settings: ExperimentSettings):
    self.settings = settings
    self.out_dir = settings.output_dir
    self.profile = build_profile(settings.profile)
    self.kernels = build_kernels(
      self.profile, settings.x0, settings.delta_grid, settings.spde, settings.laplacian
    )

  def experiment(self) -> Experiment:
    return Experiment(
      config=self.settings.spde,
      kernels=self.kernels,
      kinds=self.settings.kinds,
      window=self.settings.window,
      epsilon_sq=self.settings.epsilon_sq,
      alpha=self.settings.alpha,
      zeta=self.settings.zeta,
    )

  def _require_single_delta(self, subcommand: str):
    if self.settings.deltas is not None:
      raise ConfigError([f"'{subcommand}' takes kernel.delta, not kernel.deltas"])

  def run(self, subcommand: str) -> Dict[str, Any]:
    handler = getattr(self, f"run_{subcommand}")
    result = handler()
    export.write_manifest(self.out_dir, self.settings.raw, self.settings.spde.seed, subcommand)
    return result

  def run_simulate(self) -> Dict[str, Any]:
    path = simulate(self.settings.spde)
    written = export.write_path(self.out_dir, path, self.settings.dump)
    if written is not None:
      export.write_heatmap(self.out_dir, path, self.settings.heatmap_stride)
    return {"steps": self.settings.spde.N, "cells": self.settings.spde.M, "dump": str(written)}

  def run_estimate(self) -> Dict[str, Any]:
    self._require_single_delta("estimate")
    config = self.settings.spde
    kernel = self.kernels[0]
    path = simulate(config, streaming_columns(config.grid, self.kernels, self.settings.x0))
    meas = measure(path, kernel)
    spot = spot_vol(meas, self.settings.window)
    export.write_measurement(self.out_dir, meas, spot)

    reports, excluded = estimate_all(
      meas, spot, self.settings.kinds, self.settings.epsilon_sq, self.settings.alpha
    )
    if not reports:
      raise next(iter(excluded.values()))

    entries = []
    for kind in self.settings.kinds:
      if kind in excluded:
        entries.append({"kind": kind, "excluded": excluded[kind].to_dict()})
        continue
      report = reports[kind]
      logger.info(
        f"{kind}: theta_hat={report.theta_hat:.6g} "
        f"CI=[{report.ci[0]:.6g}, {report.ci[1]:.6g}]"
      )
      entry = report.to_dict()
      try:
        oracle = asymptotic_oracle(kind, path, config, kernel, self.settings.zeta)
        entry["oracle"] = oracle.to_dict()
      except EstimatorInapplicableError as exc:
        entry["oracle"] = exc.to_dict()
      entries.append(entry)

    payload = {
      "theta": config.theta,
      "delta": kernel.delta,
      "window": spot.window,
      "reports": entries,
      "limits": functional_limits(path, config, kernel, self.settings.zeta),
    }
    export.write_json(payload, self.out_dir / "reports.json")
    return payload

  def run_mc(self) -> Dict[str, Any]:
    self._require_single_delta("mc")
    summaries = run_table(
      self.experiment(),
      self.settings.runs,
      self.settings.jobs,
      self.settings.ks_level,
      self.settings.outlier_window,
    )
    export.write_table(self.out_dir, summaries.values())
    export.write_histograms(self.out_dir, summaries.values())
    tested = [
      NormalityResult(s.kind, s.delta, s.runs, s.ks_stat, s.ks_pass)
      for s in summaries.values()
      if s.ks_stat is not None
    ]
    if tested:
      export.write_normality(self.out_dir, tested)
    return {
      kind: {"mean": s.mean, "sd": s.sd, "rmse": s.rmse, "coverage": s.coverage}
      for kind, s in summaries.items()
    }

  def run_sweep(self) -> Dict[str, Any]:
    if self.settings.deltas is None:
      raise ConfigError(["'sweep' needs kernel.deltas"])
    sweep = rmse_sweep(self.experiment(), self.settings.runs, self.settings.jobs)
    export.write_sweep(self.out_dir, sweep)
    return {"slopes": sweep.fitted_slope}

  def run_coverage(self) -> Dict[str, Any]:
    self._require_single_delta("coverage")
    results = coverage_study(self.experiment(), self.settings.runs, self.settings.jobs)
    export.write_coverage(self.out_dir, results)
    return {result.kind: result.coverage for result in results}

  def run_normality(self) -> Dict[str, Any]:
    self._require_single_delta("normality")
    results = normality_study(
      self.experiment(), self.settings.runs, self.settings.jobs, self.settings.ks_level
    )
    export.write_normality(self.out_dir, results)
    return {result.kind: result.ks_pass for result in results}


def _fail(exc: DiffusivityError) -> int:
  logger.error(exc.message)
  print(json.dumps(exc.to_dict(), default=str), file=sys.stderr)
  return 2 if isinstance(exc, ConfigError) else 1


def dispatch(settings: ExperimentSettings, subcommand: str) -> int:
  """Run a subcommand and return the process exit status."""
  try:
    result = ExperimentRunner(settings).run(subcommand)
  except DiffusivityError as exc:
    return _fail(exc)
  print(json.dumps(result, default=str, sort_keys=True))
  return 0


def main(args: Optional[List[str]] = None) -> int:
  parsed = build_parser().parse_args(args)
  logging.basicConfig(
    level=getattr(logging, parsed.log_level),
    format="[%(levelname)s] [%(name)s]: %(message)s",
  )
  logging.captureWarnings(True)
  warnings.simplefilter("default")

  try:
    settings = parse_config(parsed.config, overrides_from(parsed), flags_from(parsed))
  except DiffusivityError as exc:
    return _fail(exc)
  try:
    return dispatch(settings, parsed.subcommand)
  except KeyboardInterrupt:
    return 130


if __name__ == "__main__":
  sys.exit(main())
