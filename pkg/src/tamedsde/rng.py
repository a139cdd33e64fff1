"""Deterministic random streams and dyadically refinable Brownian paths.

Every stream is keyed by ``(master_seed, path_index, stream_tag)`` and backed by
numpy's counter-based Philox generator, so a Monte Carlo ensemble produces the
same numbers no matter how the paths are batched or scheduled.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

MAX_LEVEL = 40


class AlignmentError(ValueError):
    """A partition point does not lie on the Brownian grid's dyadic lattice."""


@dataclass(frozen=True)
class SeedSpec:
    master_seed: int
    path_index: int = 0
    stream_tag: str = "bm"

    def __post_init__(self):
        if not 0 <= self.master_seed < 2**64:
            raise ValueError("master_seed must be a 64-bit unsigned integer")
        if self.path_index < 0:
            raise ValueError("path_index must be non-negative")

    def with_tag(self, tag: str) -> "SeedSpec":
        return SeedSpec(self.master_seed, self.path_index, tag)


def _tag_key(tag: str) -> int:
    # Python's hash() is salted per process, so use a fixed digest.
    return int.from_bytes(hashlib.blake2b(tag.encode(), digest_size=8).digest(), "little")


def derive_stream(seed: SeedSpec) -> np.random.Generator:
    """Return a fresh Philox generator that is a pure function of ``seed``."""
    ss = np.random.SeedSequence(
        entropy=seed.master_seed, spawn_key=(seed.path_index, _tag_key(seed.stream_tag))
    )
    return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True)
class Partition:
    """Time grid ``0 = t_0 < ... < t_n = T``."""

    times: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        if t.ndim != 1 or t.size < 2:
            raise ValueError("a partition needs at least two points")
        if t[0] != 0.0:
            raise ValueError("partition must start at 0")
        if np.any(np.diff(t) <= 0):
            raise ValueError("partition times must be strictly increasing")
        t.setflags(write=False)
        object.__setattr__(self, "times", t)

    @classmethod
    def uniform(cls, T: float, n: int) -> "Partition":
        if n < 1:
            raise ValueError("n must be >= 1")
        t = np.arange(n + 1, dtype=float) * (T / n)
        t[-1] = T
        return cls(t)

    @property
    def n(self) -> int:
        return self.times.size - 1

    @property
    def horizon(self) -> float:
        return float(self.times[-1])

    @property
    def mesh(self) -> float:
        return float(np.max(np.diff(self.times)))

    @property
    def steps(self) -> np.ndarray:
        return np.diff(self.times)


@dataclass(frozen=True)
class BrownianGrid:
    """Brownian increments on the uniform grid with ``2**level`` steps on ``[0, T]``.

    ``increments`` has shape ``(2**level, m)`` for one path, or ``(P, 2**level, m)``
    for a stacked ensemble of ``P`` paths. ``seeds`` records where the increments
    came from and ``source_level`` the level they were originally drawn at;
    both survive coarsening so that finer information can be regenerated.
    """

    increments: np.ndarray
    level: int
    horizon: float
    seeds: tuple = field(default=())
    source_level: int | None = None

    def __post_init__(self):
        inc = np.asarray(self.increments, dtype=float)
        if inc.ndim not in (2, 3):
            raise ValueError("increments must have shape (n, m) or (P, n, m)")
        if inc.shape[-2] != 2**self.level:
            raise ValueError("increment count does not match level")
        inc.setflags(write=False)
        object.__setattr__(self, "increments", inc)
        if self.source_level is None:
            object.__setattr__(self, "source_level", self.level)

    @property
    def dims(self) -> int:
        return self.increments.shape[-1]

    @property
    def n_steps(self) -> int:
        return 2**self.level

    @property
    def dt(self) -> float:
        return self.horizon / self.n_steps

    @property
    def batched(self) -> bool:
        return self.increments.ndim == 3

    def partition(self) -> Partition:
        return Partition.uniform(self.horizon, self.n_steps)

    def path_values(self) -> np.ndarray:
        """W at every lattice time, starting with W_0 = 0."""
        cum = _kahan_cumsum(self.increments)
        zero = np.zeros(cum.shape[:-2] + (1, cum.shape[-1]))
        return np.concatenate([zero, cum], axis=-2)

    def checksum(self) -> str:
        return hashlib.blake2b(self.increments.tobytes(), digest_size=16).hexdigest()


def _check_level(level: int) -> None:
    if level < 0:
        raise ValueError("level must be >= 0")
    if level > MAX_LEVEL:
        raise OverflowError(f"level {level} exceeds the supported maximum {MAX_LEVEL}")


def sample_brownian(seed: SeedSpec, m: int, level: int, T: float) -> BrownianGrid:
    """Draw ``2**level`` i.i.d. N(0, T/2**level) increments in ``m`` dimensions."""
    _check_level(level)
    if m < 1:
        raise ValueError("m must be >= 1")
    if T <= 0:
        raise ValueError("T must be positive")
    n = 2**level
    z = derive_stream(seed).standard_normal((n, m))
    return BrownianGrid(z * np.sqrt(T / n), level, float(T), (seed,), level)


def sample_brownian_batch(
    master_seed: int, path_indices: Sequence[int], m: int, level: int, T: float, tag: str = "bm"
) -> BrownianGrid:
    """Stack independent single-path grids, one per path index."""
    _check_level(level)
    if m < 1:
        raise ValueError("m must be >= 1")
    if T <= 0:
        raise ValueError("T must be positive")
    n = 2**level
    seeds = tuple(SeedSpec(master_seed, int(i), tag) for i in path_indices)
    out = np.empty((len(seeds), n, m))
    for k, s in enumerate(seeds):
        out[k] = derive_stream(s).standard_normal((n, m))
    out *= np.sqrt(T / n)
    return BrownianGrid(out, level, float(T), seeds, level)


def coarsen(grid: BrownianGrid, factor: int) -> BrownianGrid:
    """Sum consecutive blocks of ``factor`` increments.

    Blocks are reduced by repeated pairwise halving, so coarsening by 4 is
    bit-identical to coarsening by 2 twice.
    """
    if factor < 1 or factor & (factor - 1):
        raise ValueError("factor must be a power of two")
    shift = factor.bit_length() - 1
    if shift > grid.level:
        raise ValueError("factor exceeds the number of increments")
    inc = grid.increments
    for _ in range(shift):
        inc = inc[..., 0::2, :] + inc[..., 1::2, :]
    return BrownianGrid(inc, grid.level - shift, grid.horizon, grid.seeds, grid.source_level)


def coarsen_to(grid: BrownianGrid, level: int) -> BrownianGrid:
    if level > grid.level:
        raise ValueError("cannot refine a Brownian grid")
    return coarsen(grid, 2 ** (grid.level - level))


def _kahan_cumsum(x: np.ndarray) -> np.ndarray:
    """Compensated prefix sum along axis -2."""
    out = np.empty_like(x)
    s = np.zeros(x.shape[:-2] + x.shape[-1:])
    comp = np.zeros_like(s)
    for k in range(x.shape[-2]):
        y = x[..., k, :] - comp
        t = s + y
        comp = (t - s) - y
        s = t
        out[..., k, :] = s
    return out


def lattice_indices(grid: BrownianGrid, partition: Partition, tol: float = 1e-9) -> np.ndarray:
    """Map partition times to grid indices, rejecting off-lattice points."""
    if abs(partition.horizon - grid.horizon) > tol * grid.horizon:
        raise AlignmentError("partition horizon differs from the grid horizon")
    scaled = partition.times / grid.horizon * grid.n_steps
    idx = np.rint(scaled)
    bad = np.abs(scaled - idx) > tol * max(1.0, grid.n_steps)
    if np.any(bad):
        t = partition.times[np.argmax(bad)]
        raise AlignmentError(f"partition point {t!r} is not on the level-{grid.level} lattice")
    return idx.astype(np.int64)


def increment_on(grid: BrownianGrid, partition: Partition) -> np.ndarray:
    """Return ``W_{t_{k+1}} - W_{t_k}`` for each step of ``partition``.

    Output shape is ``(n, m)`` or ``(P, n, m)``; no interpolation is ever done.
    """
    idx = lattice_indices(grid, partition)
    n = partition.n
    # uniform dyadic partitions reuse the exact pairwise coarsening
    if n & (n - 1) == 0 and np.array_equal(idx, np.arange(n + 1) * (grid.n_steps // n)):
        return coarsen(grid, grid.n_steps // n).increments
    w = grid.path_values()
    return w[..., idx[1:], :] - w[..., idx[:-1], :]
