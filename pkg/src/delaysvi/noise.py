"""Counter-based Brownian increment streams.

Each simulated path owns a Philox stream keyed by ``(seed, path_index)``:
the increments a path sees depend only on that key, never on how paths are
batched or scheduled across workers.  Increments are indexed by the global
step index ``j = round(t / h)``, so two runs started at different times on
the same step grid consume identical noise on their common time range
(common random numbers).
"""

from __future__ import annotations

import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1


def _splitmix64(z: int) -> int:
    z = (z + 0x9E3779B97F4A7C15) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def stream_key(seed: int, *indices: int) -> np.ndarray:
    """Derive a 2x64-bit Philox key from a seed and a tuple of indices.

    With a single index the key is ``[seed, index]`` verbatim, which keeps
    per-path streams directly addressable.  Longer tuples (nested study
    substreams) are folded through splitmix64.
    """
    if len(indices) == 1:
        return np.array([seed & _MASK64, indices[0] & _MASK64], dtype=np.uint64)
    z = seed & _MASK64
    for ix in indices:
        z = _splitmix64(z ^ (ix & _MASK64))
    return np.array([seed & _MASK64, z], dtype=np.uint64)


def generator_for(seed: int, *indices: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=stream_key(seed, *indices)))


def brownian_increments(
    seed: int,
    path_index: int,
    first_step: int,
    n_steps: int,
    n_dims: int,
    h: float,
) -> np.ndarray:
    """Increments ``dW_j ~ N(0, h I)`` for global steps ``first_step .. first_step+n_steps-1``.

    The stream is always consumed from step 0 so that slices taken at
    different ``first_step`` values remain aligned.
    """
    gen = generator_for(seed, path_index)
    total = gen.standard_normal((first_step + n_steps, n_dims))
    return total[first_step:] * np.sqrt(h)


def nested_normals(
    seed: int, salt: int, outer_index: int, shape: tuple[int, ...]
) -> np.ndarray:
    """Standard normals from the substream owned by one outer path."""
    gen = generator_for(seed, salt, outer_index)
    return gen.standard_normal(shape)


def noise_checksum(seed: int, path_indices, first_step: int, n_steps: int, n_dims: int, h: float) -> str:
    """SHA-256 over the exact increments a run consumes, in path order."""
    digest = hashlib.sha256()
    for pi in path_indices:
        dw = brownian_increments(seed, int(pi), first_step, n_steps, n_dims, h)
        digest.update(np.ascontiguousarray(dw).tobytes())
    return digest.hexdigest()
