"""Block partitions, local magnetizations and mesoscopic phase labels."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .lattice import LatticeDomain, SpinConfig

__all__ = [
    "CoarseGrainConfig", "select_block_side", "BlockGrid", "partition", "block_magnetizations",
    "phase_labels", "BlockCounts", "count_blocks", "count_bad_blocks", "count_minus_blocks",
    "IncrementalBlocks", "spontaneous_magnetization_2d", "BETA_C_2D",
]

BETA_C_2D = 0.5 * math.log(1.0 + math.sqrt(2.0))


def spontaneous_magnetization_2d(beta: float) -> float:
    """Closed-form square-lattice magnetization; 0 at or below the critical point."""
    if beta <= BETA_C_2D:
        return 0.0
    return float((1.0 - math.sinh(2.0 * beta) ** -4) ** 0.125)


def select_block_side(N: int, b: float = 2.0, gamma: float = 1.0) -> int:
    """``K = ceil((b log N)^(1/gamma))`` clipped to ``[1, N]``."""
    if N <= 1:
        return 1
    k = math.ceil((b * math.log(N)) ** (1.0 / gamma))
    return int(min(max(k, 1), N))


@dataclass(frozen=True)
class CoarseGrainConfig:
    K: int
    m_star: float
    b: float = 2.0
    gamma: float = 1.0

    def __post_init__(self):
        if self.K < 1:
            raise ValueError(f"block side must be >= 1, got {self.K}")
        if not 0 < self.m_star <= 1:
            raise ValueError(f"m* must lie in (0, 1], got {self.m_star}")

    @classmethod
    def from_rule(cls, N: int, m_star: float, b: float = 2.0, gamma: float = 1.0) -> CoarseGrainConfig:
        return cls(select_block_side(N, b, gamma), m_star, b, gamma)


@dataclass(frozen=True, eq=False)
class BlockGrid:
    """Geometry of a block partition (immutable).

    Blocks are anchored at the corner; when ``K`` does not divide ``N`` the
    last block along each axis absorbs the remainder.
    """

    domain: LatticeDomain
    K: int
    block_of_site: np.ndarray
    per_axis: int

    @property
    def n_blocks(self) -> int:
        return self.per_axis**self.domain.d

    @cached_property
    def sizes(self) -> np.ndarray:
        return np.bincount(self.block_of_site, minlength=self.n_blocks).astype(np.int64)

    @cached_property
    def ptr_sites(self):
        """CSR layout ``(block_ptr, block_sites)`` of the site lists."""
        order = np.argsort(self.block_of_site, kind="stable").astype(np.int64)
        ptr = np.concatenate([[0], np.cumsum(self.sizes)]).astype(np.int64)
        return ptr, order

    def sites(self, block: int) -> np.ndarray:
        ptr, order = self.ptr_sites
        return order[ptr[block]:ptr[block + 1]]

    @property
    def volume(self) -> int:
        """Nominal block volume ``K^d`` used in prefactors."""
        return self.K**self.domain.d


def partition(domain: LatticeDomain, cfg: CoarseGrainConfig | int) -> BlockGrid:
    K = cfg if isinstance(cfg, int) else cfg.K
    if K > domain.N:
        raise ValueError(f"block side {K} exceeds the domain side {domain.N}")
    if K < 1:
        raise ValueError(f"block side must be >= 1, got {K}")
    per_axis = domain.N // K
    idx = np.minimum(domain.coords // K, per_axis - 1)
    block = np.ravel_multi_index(tuple(idx.T), (per_axis,) * domain.d).astype(np.int64)
    return BlockGrid(domain, K, block, per_axis)


def block_magnetizations(config: SpinConfig | np.ndarray, grid: BlockGrid) -> np.ndarray:
    """Average spin of every block."""
    spins = config.to_array() if isinstance(config, SpinConfig) else np.asarray(config)
    sums = np.bincount(grid.block_of_site, weights=spins.astype(float), minlength=grid.n_blocks)
    return sums / grid.sizes


def phase_labels(M, m_star: float) -> np.ndarray:
    """+1 within ``m*/4`` of ``m*``, -1 within ``m*/4`` of ``-m*``, else 0."""
    if not m_star > 0:
        raise ValueError("m* must be positive")
    M = np.asarray(M, dtype=float)
    w = 0.25 * m_star
    return (np.abs(M - m_star) <= w).astype(np.int8) - (np.abs(M + m_star) <= w).astype(np.int8)


@dataclass(frozen=True)
class BlockCounts:
    bad: int
    minus: int
    ramp: int


def count_bad_blocks(labels) -> int:
    return int(np.sum(np.asarray(labels) == 0))


def count_minus_blocks(M, m_star: float) -> int:
    """Blocks with magnetization below ``-m*/4``."""
    return int(np.sum(np.asarray(M) < -0.25 * m_star))


def count_blocks(M, m_star: float) -> BlockCounts:
    """Bad-label, minus and ramp (``-m*/2 <= M <= -m*/4``) block counts."""
    M = np.asarray(M, dtype=float)
    ramp = int(np.sum((M >= -0.5 * m_star) & (M <= -0.25 * m_star)))
    return BlockCounts(count_bad_blocks(phase_labels(M, m_star)), count_minus_blocks(M, m_star), ramp)


class IncrementalBlocks:
    """Block spin sums kept current under single flips (O(1) per flip)."""

    def __init__(self, config: SpinConfig, grid: BlockGrid):
        self.grid = grid
        self.spins = config.to_array().astype(np.int64)
        self.sums = np.bincount(grid.block_of_site, weights=self.spins, minlength=grid.n_blocks).astype(np.int64)

    def flip(self, site: int) -> None:
        self.spins[site] = -self.spins[site]
        self.sums[self.grid.block_of_site[site]] += 2 * self.spins[site]

    @property
    def magnetizations(self) -> np.ndarray:
        return self.sums / self.grid.sizes
