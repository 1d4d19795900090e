"""Counter-based random streams.

Every random draw in the simulator is a pure function of
(salt, seed, path_id, step, offset), so results never depend on scheduling
order or worker count.  The scalar chaining lives in the kernel backends;
this module provides the matching vectorized version for batched consumers
(route noise, Monte Carlo oracles) plus a small stream handle type.

The vectorized mix is bit-identical to the scalar one (tested).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kernels import mix64
from .kernels.layout import RGUMBEL_STRIDE, SALT_RGUMBEL

_GOLD = np.uint64(0x9E3779B97F4A7C15)
_C1 = np.uint64(0xBF58476D1CE4E5B9)
_C2 = np.uint64(0x94D049BB133111EB)
_U01 = 1.1102230246251565e-16  # 2**-53


def mix64_vec(h, k):
    """Vectorized counterpart of kernels.mix64; h and k broadcast as uint64."""
    h = np.asarray(h, dtype=np.uint64)
    k = np.asarray(k, dtype=np.uint64)
    x = h ^ (k + _GOLD)
    x = x + _GOLD
    x = (x ^ (x >> np.uint64(30))) * _C1
    x = (x ^ (x >> np.uint64(27))) * _C2
    return x ^ (x >> np.uint64(31))


def u01_vec(x):
    return ((x >> np.uint64(11)).astype(np.float64) + 0.5) * _U01


@dataclass(frozen=True)
class CounterStream:
    """Handle for one logical stream, keyed by (seed, path_id, step)."""

    seed: int
    path_id: int = 0
    step: int = 0

    def base(self, salt: int) -> int:
        h = mix64(salt, self.seed)
        h = mix64(h, self.path_id)
        return mix64(h, self.step)

    def uniforms(self, salt: int, offsets) -> np.ndarray:
        """Uniform(0,1) draws at the given integer offsets (any shape)."""
        off = np.asarray(offsets, dtype=np.uint64)
        return u01_vec(mix64_vec(np.uint64(self.base(salt)), off))

    def gumbels(self, salt: int, offsets) -> np.ndarray:
        u = self.uniforms(salt, offsets)
        return -np.log(-np.log(u))

    def normals(self, salt: int, offsets) -> np.ndarray:
        """Standard normals via Box-Muller on offset pairs (offset, offset+2**32)."""
        off = np.asarray(offsets, dtype=np.uint64)
        u1 = self.uniforms(salt, off)
        u2 = self.uniforms(salt, off + np.uint64(1 << 32))
        return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)


def route_gumbel_offsets(num_experts: int, routes) -> np.ndarray:
    """Offsets for (route k, expert e) Gumbel keys: k * stride + e."""
    routes = np.asarray(routes, dtype=np.uint64)
    experts = np.arange(num_experts, dtype=np.uint64)
    return routes[..., None] * np.uint64(RGUMBEL_STRIDE) + experts


def route_noise_block(run_seed: int, path_ids, step: int, num_experts: int, num_routes: int) -> np.ndarray:
    """Gumbel noise for noisy routes 1..K-1 of each path: shape (n, E, K-1).

    Matches CounterStream(run_seed, path_id, step).gumbels per path, so the
    batched pipeline and the per-path routing API draw identical noise.
    """
    path_ids = np.asarray(path_ids, dtype=np.uint64)
    n = path_ids.shape[0]
    if num_routes <= 1:
        return np.zeros((n, num_experts, 0), dtype=np.float64)
    bases = np.empty(n, dtype=np.uint64)
    for i in range(n):
        bases[i] = CounterStream(run_seed, int(path_ids[i]), step).base(SALT_RGUMBEL)
    ks = np.arange(1, num_routes, dtype=np.uint64)
    offs = route_gumbel_offsets(num_experts, ks)  # (K-1, E)
    words = mix64_vec(bases[:, None, None], offs[None, :, :])
    u = u01_vec(words)
    g = -np.log(-np.log(u))
    return np.transpose(g, (0, 2, 1))  # (n, E, K-1)
