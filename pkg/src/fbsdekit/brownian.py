"""Time grids and reproducible Brownian increments.

The increment store never materializes the full
``(num_paths, fine_n, dim_w)`` array: every entry is addressed by
``(seed, path, step, component)`` through the counter-based uniform stream
in :mod:`fbsdekit._philox`, so any sub-block can be generated
independently, in any order, on any number of workers, with bit-identical
results.  Gaussians come from inverting the standard normal CDF on that
stream.

Each increment is rounded to the nearest multiple of ``2**-40``.  The
rounding perturbs an increment by at most ``~5e-13`` (many orders below
Monte Carlo resolution) and buys an exact-summation property: all partial
sums of one path's increments stay far below ``2**53 * 2**-40``, so they
are computed without rounding error in double precision no matter how the
terms are grouped.  Coarse-grid increments derived from the same store
therefore telescope exactly, and every divisor chain ``n1 | n2 | fine_n``
coarsens consistently.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtri

from ._philox import uniform_stream
from .errors import InvalidArgument

__all__ = [
    "TimeGrid",
    "BrownianStore",
    "PathBatch",
    "make_time_grid",
    "sample_fine_increments",
    "coarsen_increments",
]

# Increments are multiples of this quantum; see module docstring.
_QUANTUM = 2.0**-40

# Values held in flight per streaming chunk (bounds transient memory).
_STREAM_VALUES = 1 << 23


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid ``t_i = i * h`` on ``[0, T]`` with ``h = T / n``."""

    horizon: float
    n: int
    h: float
    nodes: np.ndarray


def make_time_grid(horizon: float, n: int) -> TimeGrid:
    """Build the uniform grid with ``n`` steps on ``[0, horizon]``."""
    if horizon is None or not np.isfinite(horizon) or horizon <= 0.0:
        raise InvalidArgument(f"horizon must be positive, got {horizon}")
    if int(n) != n or n < 1:
        raise InvalidArgument(f"step count must be a positive integer, got {n}")
    n = int(n)
    h = horizon / n
    nodes = h * np.arange(n + 1, dtype=np.float64)
    nodes[-1] = horizon  # guard against the last multiply drifting off T
    return TimeGrid(horizon=float(horizon), n=n, h=h, nodes=nodes)


@dataclass(frozen=True)
class BrownianStore:
    """Seeded fine-grid Brownian increments, generated on demand.

    Entry ``(j, k, c)`` is a draw from ``N(0, horizon / fine_n)``,
    independent across all indices and fully determined by
    ``(seed, j, k, c)``.  ``fine_increments`` materializes any step
    window; the ``increments`` property materializes the whole array
    (only sensible for small stores).
    """

    seed: int
    num_paths: int
    fine_n: int
    dim_w: int
    horizon: float
    _coarse_cache: dict = field(
        default_factory=dict, compare=False, repr=False, hash=False
    )

    @property
    def fine_step_variance(self) -> float:
        return self.horizon / self.fine_n

    @property
    def increments(self) -> np.ndarray:
        return self.fine_increments(0, self.fine_n)

    def fine_increments(self, k0: int, k1: int) -> np.ndarray:
        """Increments for fine steps ``k0 <= k < k1``, all paths/components.

        Returns an array of shape ``(num_paths, k1 - k0, dim_w)``.
        """
        if not 0 <= k0 <= k1 <= self.fine_n:
            raise InvalidArgument(f"step window [{k0}, {k1}) out of range")
        n_blocks = (self.dim_w + 1) // 2
        uniforms = uniform_stream(self.seed, k0, self.num_paths, k1 - k0, n_blocks)
        out = ndtri(uniforms[:, :, : self.dim_w])
        scale = np.sqrt(self.fine_step_variance)
        np.multiply(out, scale / _QUANTUM, out=out)
        np.rint(out, out=out)
        out *= _QUANTUM
        return out

    def _note_coarse(self, n: int, increments: np.ndarray) -> None:
        """Cache window sums so later coarsenings can be derived exactly.

        Cached arrays are frozen: they are handed out by reference.
        """
        if n not in self._coarse_cache:
            increments.flags.writeable = False
            self._coarse_cache[n] = increments


def sample_fine_increments(
    seed: int, num_paths: int, fine_n: int, dim_w: int, horizon: float
) -> BrownianStore:
    """Create the increment store for ``num_paths`` paths on the fine grid."""
    for name, value in (
        ("num_paths", num_paths),
        ("fine_n", fine_n),
        ("dim_w", dim_w),
    ):
        if int(value) != value or value < 1:
            raise InvalidArgument(f"{name} must be a positive integer, got {value}")
    if horizon <= 0.0 or not np.isfinite(horizon):
        raise InvalidArgument(f"horizon must be positive, got {horizon}")
    return BrownianStore(
        seed=int(seed) & 0xFFFFFFFFFFFFFFFF,
        num_paths=int(num_paths),
        fine_n=int(fine_n),
        dim_w=int(dim_w),
        horizon=float(horizon),
    )


def coarsen_increments(store: BrownianStore, n: int) -> np.ndarray:
    """Sum fine increments into ``n`` coarse steps per path and component.

    Coarse increment ``i`` is the sum of fine increments over the window
    ``[i * fine_n / n, (i + 1) * fine_n / n)``.  Thanks to the quantized
    increments the result is independent of summation order, so the same
    array is obtained whether it is built from the fine grid directly or
    from any cached intermediate coarse level.
    """
    n = int(n)
    if n < 1:
        raise InvalidArgument(f"coarse step count must be positive, got {n}")
    if store.fine_n % n != 0:
        raise InvalidArgument(f"fine_n={store.fine_n} is not divisible by n={n}")
    cached = store._coarse_cache.get(n)
    if cached is not None:
        return cached
    for m in sorted(store._coarse_cache, reverse=True):
        if m % n == 0:
            arr = store._coarse_cache[m]
            out = arr.reshape(store.num_paths, n, m // n, store.dim_w).sum(axis=2)
            store._note_coarse(n, out)
            return out
    window = store.fine_n // n
    out = np.zeros((store.num_paths, n, store.dim_w))
    sub = max(1, _STREAM_VALUES // (store.num_paths * store.dim_w))
    for i in range(n):
        lo = i * window
        for s0 in range(lo, lo + window, sub):
            s1 = min(s0 + sub, lo + window)
            out[:, i, :] += store.fine_increments(s0, s1).sum(axis=1)
    store._note_coarse(n, out)
    return out


@dataclass
class PathBatch:
    """Simulated state, value, and gradient-value processes at grid nodes.

    ``x`` has shape ``(num_paths, num_nodes, dim_x)``, ``y`` has shape
    ``(num_paths, num_nodes)`` and ``z`` has shape
    ``(num_paths, num_nodes, dim_w)``.
    """

    x: np.ndarray
    y: np.ndarray
    z: np.ndarray

    @property
    def num_paths(self) -> int:
        return self.x.shape[0]

    @property
    def num_nodes(self) -> int:
        return self.x.shape[1]

    @property
    def dim(self) -> int:
        return self.x.shape[2]
