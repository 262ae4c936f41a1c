import numpy as np

_MASK64 = (1 << 64) - 1
_GOLDEN_GAMMA = 0x9E3779B97F4A7C15


def splitmix64(state: int) -> int:
  """Return the splitmix64 output for a 64-bit state."""
  z = (state + _GOLDEN_GAMMA) & _MASK64
  z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
  z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
  return z ^ (z >> 31)


def derive_seed(master_seed: int, run_index: int) -> int:
  """Derive the seed of replication run_index from the master seed."""
  state = (master_seed + run_index * _GOLDEN_GAMMA) & _MASK64
  return splitmix64(state)


def noise_increments(seed: int, j: int, M: int) -> np.ndarray:
  """
  Draw the M standard normals driving time step j.

  The stream is keyed by (seed, j) through a Philox counter generator, so the
  same triple (seed, j, k) always maps to the same variate no matter which
  steps were drawn before or on which worker.
  """
  key = np.random.SeedSequence([seed & _MASK64, j])
  rng = np.random.Generator(np.random.Philox(key))
  return rng.standard_normal(M)
