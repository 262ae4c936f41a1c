import json
import logging
import subprocess
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional

import numpy as np
import pandas as pd

from diffusivity import __version__
from diffusivity.measurements import LocalMeasurement, SpotVolSeries
from diffusivity.montecarlo import CoverageResult, McSummary, NormalityResult, RmseSweep
from diffusivity.simulator import SolutionPath

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.17g"


def version_string() -> str:
  """Return git describe output for the source tree, or the package version."""
  try:
    described = subprocess.run(
      ["git", "describe", "--tags", "--always", "--dirty"],
      cwd=Path(__file__).resolve().parent,
      capture_output=True,
      text=True,
      check=True,
      timeout=10,
    )
  except (OSError, subprocess.SubprocessError):
    return __version__
  return described.stdout.strip() or __version__


def _write_csv(frame: pd.DataFrame, path: Path) -> Path:
  path.parent.mkdir(parents=True, exist_ok=True)
  frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
  logger.info(f"Wrote {path}")
  return path


def write_json(payload: Any, path: Path) -> Path:
  path.parent.mkdir(parents=True, exist_ok=True)
  with open(path, "w") as stream:
    json.dump(payload, stream, indent=2, sort_keys=True)
    stream.write("\n")
  logger.info(f"Wrote {path}")
  return path


def write_manifest(
  out_dir: Path, raw_config: Dict[str, Any], master_seed: int, subcommand: str
) -> Path:
  manifest = {
    "subcommand": subcommand,
    "version": version_string(),
    "master_seed": master_seed,
    "config": raw_config,
  }
  return write_json(manifest, out_dir / "manifest.json")


def write_table(out_dir: Path, summaries: Iterable[McSummary]) -> Path:
  rows = [
    {
      "kind": summary.kind,
      "mean": summary.mean,
      "sd": summary.sd,
      "rmse": summary.rmse,
      "coverage": summary.coverage,
      "excluded": summary.excluded,
      "runs": summary.runs,
      "delta": summary.delta,
      "outliers": summary.outliers,
      "ks_stat": summary.ks_stat,
      "ks_pvalue": summary.ks_pvalue,
    }
    for summary in summaries
  ]
  return _write_csv(pd.DataFrame(rows), out_dir / "table1.csv")


def write_histograms(out_dir: Path, summaries: Iterable[McSummary]) -> List[Path]:
  written = []
  for summary in summaries:
    hist = pd.DataFrame(
      {
        "bin_lo": summary.hist_edges[:-1],
        "bin_hi": summary.hist_edges[1:],
        "count": summary.hist_counts,
        "mixture_density": summary.hist_mixture,
      }
    )
    written.append(_write_csv(hist, out_dir / f"hist_{summary.kind}.csv"))
    mixture = pd.DataFrame(
      {"theta": summary.mixture_grid, "density": summary.mixture_density}
    )
    written.append(_write_csv(mixture, out_dir / f"mixture_{summary.kind}.csv"))
  return written


def write_normality(out_dir: Path, results: Iterable[NormalityResult]) -> Path:
  rows = [
    {
      "kind": result.kind,
      "delta": result.delta,
      "runs": result.runs,
      "ks_stat": result.ks_stat,
      "pass": result.ks_pass,
    }
    for result in results
  ]
  return _write_csv(pd.DataFrame(rows), out_dir / "normality.csv")


def write_coverage(out_dir: Path, results: Iterable[CoverageResult]) -> Path:
  rows = [
    {
      "kind": result.kind,
      "runs": result.runs,
      "coverage": result.coverage,
      "band_lo": result.band[0],
      "band_hi": result.band[1],
      "within_band": result.within_band,
    }
    for result in results
  ]
  return _write_csv(pd.DataFrame(rows), out_dir / "coverage.csv")


def write_sweep(out_dir: Path, sweep: RmseSweep) -> Path:
  rows = []
  for i, delta in enumerate(sweep.deltas):
    for kind in sweep.kinds:
      rows.append(
        {
          "delta": delta,
          "kind": kind,
          "rmse": sweep.rmse_by_kind[kind][i],
          "rmse_se": sweep.rmse_se_by_kind[kind][i],
          "slope": sweep.fitted_slope[kind],
          "predicted_rmse": sweep.predicted_rmse_by_kind[kind][i],
          "runs": int(sweep.runs_by_kind[kind][i]),
        }
      )
  return _write_csv(pd.DataFrame(rows), out_dir / "rmse_sweep.csv")


def write_measurement(
  out_dir: Path, meas: LocalMeasurement, spot: Optional[SpotVolSeries] = None
) -> Path:
  frame = pd.DataFrame(
    {"t": meas.times, "x_delta": meas.x_delta, "x_delta_lap": meas.x_delta_lap}
  )
  if spot is not None:
    # the values the estimators weight with; the first window repeats Y_hat(t_D)
    frame["y_hat"] = spot.settled()
  return _write_csv(frame, out_dir / "measurement.csv")


def write_path(out_dir: Path, path: SolutionPath, fmt: str) -> Optional[Path]:
  """Dump the path matrix, one row per time node."""
  if fmt == "none":
    return None
  out_dir.mkdir(parents=True, exist_ok=True)
  if fmt == "npy":
    target = out_dir / "path.npy"
    np.save(target, path.values)
    logger.info(f"Wrote {target}")
    return target
  columns = [f"x_{k}" for k in path.columns]
  frame = pd.DataFrame(path.values, columns=columns)
  frame.insert(0, "t", path.times)
  return _write_csv(frame, out_dir / "path.csv")


def write_heatmap(out_dir: Path, path: SolutionPath, stride=(1, 1)) -> Path:
  """Write (t, x, value) triplets on a strided subgrid for external plotting."""
  time_stride, space_stride = stride
  rows = np.arange(0, len(path.times), time_stride)
  cols = np.arange(0, len(path.columns), space_stride)
  t, x = np.meshgrid(path.times[rows], path.columns[cols] * path.grid.h, indexing="ij")
  frame = pd.DataFrame(
    {
      "t": t.ravel(),
      "x": x.ravel(),
      "value": path.values[np.ix_(rows, cols)].ravel(),
    }
  )
  return _write_csv(frame, out_dir / "heatmap.csv")
