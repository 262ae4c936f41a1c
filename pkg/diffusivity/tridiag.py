from typing import Tuple

import numpy as np
from numba import njit


@njit(cache=True)
def solve_tridiag(a, b, c, d):
  """
  Solve a tridiagonal system with the Thomas algorithm.

  a is the lower diagonal (a[0] unused), b the main diagonal, c the upper
  diagonal (c[-1] unused) and d the right hand side, all of length n.
  """
  n = d.shape[0]
  cp = np.empty(n)
  dp = np.empty(n)

  cp[0] = c[0] / b[0]
  dp[0] = d[0] / b[0]
  for k in range(1, n):
    denom = b[k] - a[k] * cp[k - 1]
    cp[k] = c[k] / denom
    dp[k] = (d[k] - a[k] * dp[k - 1]) / denom

  x = np.empty(n)
  x[n - 1] = dp[n - 1]
  for k in range(n - 2, -1, -1):
    x[k] = dp[k] - cp[k] * x[k + 1]
  return x


@njit(cache=True)
def factor_tridiag(a, b, c):
  """Run the forward elimination once for a fixed matrix."""
  n = b.shape[0]
  cp = np.empty(n)
  inv_denom = np.empty(n)

  inv_denom[0] = 1.0 / b[0]
  cp[0] = c[0] * inv_denom[0]
  for k in range(1, n):
    inv_denom[k] = 1.0 / (b[k] - a[k] * cp[k - 1])
    cp[k] = c[k] * inv_denom[k]
  return cp, inv_denom


@njit(cache=True)
def solve_factored(a, cp, inv_denom, d, out):
  """Solve with a matrix previously passed through factor_tridiag, writing into out."""
  n = d.shape[0]
  out[0] = d[0] * inv_denom[0]
  for k in range(1, n):
    out[k] = (d[k] - a[k] * out[k - 1]) * inv_denom[k]
  for k in range(n - 2, -1, -1):
    out[k] = out[k] - cp[k] * out[k + 1]
  return out


def implicit_heat_operator(
  n: int, ratio: float
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
  """Return the diagonals of I - ratio * tridiag(1, -2, 1) on n interior nodes."""
  lower = np.full(n, -ratio)
  diag = np.full(n, 1.0 + 2.0 * ratio)
  upper = np.full(n, -ratio)
  lower[0] = 0.0
  upper[-1] = 0.0
  return lower, diag, upper
