"""Lattice domains, spin configurations and exact-enumeration oracles.

Sites of a box ``{0, ..., N-1}^d`` are numbered in row-major order.  Kernels
work on a *padded* flat ``int8`` array of shape ``(N + 2)^d`` whose outer ring
holds the frozen boundary spins.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.special import logsumexp

MAX_ENUM_SITES = 20
MAX_GENERATOR_SITES = 12


class DomainTooLargeError(ValueError):
    """Raised when an exact oracle is asked to enumerate too many states."""


class NumericalDegeneracyError(ArithmeticError):
    """Raised when a spectral quantity is numerically indistinguishable from 0."""


@dataclass(frozen=True)
class LatticeDomain:
    """A box of side ``N`` in ``Z^d`` with a uniform frozen boundary."""

    d: int
    N: int
    boundary: int = 1

    def __post_init__(self):
        if self.d not in (2, 3):
            raise ValueError(f"dimension must be 2 or 3, got {self.d}")
        if self.N < 1:
            raise ValueError(f"side must be >= 1, got {self.N}")
        if self.boundary not in (-1, 1):
            raise ValueError(f"boundary value must be +1 or -1, got {self.boundary}")

    @property
    def n_sites(self) -> int:
        return self.N**self.d

    @property
    def padded_shape(self) -> tuple[int, ...]:
        return (self.N + 2,) * self.d

    @cached_property
    def coords(self) -> np.ndarray:
        """``(n_sites, d)`` integer coordinates in row-major site order."""
        grids = np.indices((self.N,) * self.d).reshape(self.d, -1)
        return grids.T.copy()

    @cached_property
    def site_pad(self) -> np.ndarray:
        """Flat padded index of every interior site."""
        return np.ravel_multi_index(tuple((self.coords + 1).T), self.padded_shape).astype(np.int64)

    @cached_property
    def pad_site(self) -> np.ndarray:
        """Inverse of :attr:`site_pad`; ``-1`` on the boundary ring."""
        out = np.full(int(np.prod(self.padded_shape)), -1, dtype=np.int64)
        out[self.site_pad] = np.arange(self.n_sites)
        return out

    @cached_property
    def neighbor_offsets(self) -> np.ndarray:
        """The ``2d`` offsets of nearest neighbours in the padded flat array."""
        strides = [(self.N + 2) ** (self.d - 1 - a) for a in range(self.d)]
        return np.array([s for st in strides for s in (st, -st)], dtype=np.int64)

    @cached_property
    def center(self) -> int:
        """Site closest to the geometric centre of the box."""
        return self.site_index((self.N // 2,) * self.d)

    def site_index(self, coord) -> int:
        coord = tuple(int(c) for c in coord)
        if len(coord) != self.d or any(not 0 <= c < self.N for c in coord):
            raise IndexError(f"coordinate {coord} outside the box of side {self.N}")
        return int(np.ravel_multi_index(coord, (self.N,) * self.d))

    def neighbors(self, site: int) -> list[int]:
        """Neighbour sites of ``site``; ``-1`` marks a boundary neighbour."""
        self._check_site(site)
        p = self.site_pad[site]
        return [int(self.pad_site[p + off]) for off in self.neighbor_offsets]

    def empty_padded(self) -> np.ndarray:
        """Padded flat array with every entry set to the boundary value."""
        return np.full(int(np.prod(self.padded_shape)), self.boundary, dtype=np.int8)

    def _check_site(self, site):
        if not 0 <= int(site) < self.n_sites:
            raise IndexError(f"site {site} out of range [0, {self.n_sites})")


class SpinConfig:
    """Bit-packed ``+-1`` spins on a :class:`LatticeDomain` (bit set = +1).

    Single-writer: :meth:`flip` mutates in place.
    """

    __slots__ = ("domain", "bits")

    def __init__(self, domain: LatticeDomain, bits: np.ndarray):
        nbytes = (domain.n_sites + 7) // 8
        bits = np.asarray(bits, dtype=np.uint8)
        if bits.shape != (nbytes,):
            raise ValueError(f"expected {nbytes} packed bytes, got shape {bits.shape}")
        self.domain = domain
        self.bits = bits

    @classmethod
    def from_array(cls, domain: LatticeDomain, spins) -> SpinConfig:
        spins = np.asarray(spins).reshape(-1)
        if spins.shape[0] != domain.n_sites:
            raise ValueError(f"expected {domain.n_sites} spins, got {spins.shape[0]}")
        if not np.all(np.abs(spins) == 1):
            raise ValueError("spins must be +1 or -1")
        return cls(domain, np.packbits(spins > 0, bitorder="little"))

    @classmethod
    def from_padded(cls, domain: LatticeDomain, padded: np.ndarray) -> SpinConfig:
        return cls.from_array(domain, padded[domain.site_pad])

    @classmethod
    def uniform(cls, domain: LatticeDomain, value: int) -> SpinConfig:
        return cls.from_array(domain, np.full(domain.n_sites, value, dtype=np.int8))

    @classmethod
    def all_plus(cls, domain: LatticeDomain) -> SpinConfig:
        return cls.uniform(domain, 1)

    @classmethod
    def all_minus(cls, domain: LatticeDomain) -> SpinConfig:
        return cls.uniform(domain, -1)

    @classmethod
    def random(cls, domain: LatticeDomain, rng: np.random.Generator) -> SpinConfig:
        return cls.from_array(domain, rng.choice(np.array([-1, 1], dtype=np.int8), domain.n_sites))

    @classmethod
    def from_code(cls, domain: LatticeDomain, code: int) -> SpinConfig:
        """Configuration whose site ``i`` is +1 iff bit ``i`` of ``code`` is set."""
        bits = (int(code) >> np.arange(domain.n_sites)) & 1
        return cls.from_array(domain, 2 * bits - 1)

    def to_array(self) -> np.ndarray:
        raw = np.unpackbits(self.bits, count=self.domain.n_sites, bitorder="little")
        return (2 * raw.astype(np.int8) - 1).astype(np.int8)

    def padded(self) -> np.ndarray:
        out = self.domain.empty_padded()
        out[self.domain.site_pad] = self.to_array()
        return out

    def code(self) -> int:
        """Integer code (inverse of :meth:`from_code`)."""
        up = self.to_array() > 0
        return int(np.sum(up.astype(np.int64) << np.arange(self.domain.n_sites, dtype=np.int64)))

    def spin(self, site: int) -> int:
        self.domain._check_site(site)
        return 1 if (self.bits[site >> 3] >> (site & 7)) & 1 else -1

    def flip(self, site: int) -> None:
        self.domain._check_site(site)
        self.bits[site >> 3] ^= np.uint8(1 << (site & 7))

    def flipped(self, site: int) -> SpinConfig:
        out = self.copy()
        out.flip(site)
        return out

    def copy(self) -> SpinConfig:
        return SpinConfig(self.domain, self.bits.copy())

    def magnetization(self) -> float:
        return float(self.to_array().mean())

    def __le__(self, other: SpinConfig) -> bool:
        return bool(np.all(self.to_array() <= other.to_array()))

    def __eq__(self, other):
        if not isinstance(other, SpinConfig):
            return NotImplemented
        return self.domain == other.domain and np.array_equal(self.bits, other.bits)

    def __repr__(self):
        return f"SpinConfig(d={self.domain.d}, N={self.domain.N}, m={self.magnetization():+.4f})"


@dataclass(frozen=True)
class GibbsSpec:
    """Inverse temperature on a domain; weights are ``exp(-beta * H)``."""

    beta: float
    domain: LatticeDomain

    def __post_init__(self):
        if not self.beta >= 0:
            raise ValueError(f"beta must be >= 0, got {self.beta}")


def _padded_batch(domain: LatticeDomain, spins: np.ndarray) -> np.ndarray:
    spins = np.atleast_2d(spins)
    pad = np.full((spins.shape[0],) + domain.padded_shape, domain.boundary, dtype=np.int64)
    inner = (slice(None),) + (slice(1, domain.N + 1),) * domain.d
    pad[inner] = spins.reshape((spins.shape[0],) + (domain.N,) * domain.d)
    return pad


def energies(domain: LatticeDomain, spins: np.ndarray) -> np.ndarray:
    """Energies of a batch ``(n_configs, n_sites)`` of spin arrays."""
    pad = _padded_batch(domain, spins)
    total = np.zeros(pad.shape[0], dtype=np.int64)
    for axis in range(1, domain.d + 1):
        # bonds along `axis` between positions k and k+1, k = 0..N, other axes interior
        lo = [slice(None)] + [slice(1, domain.N + 1)] * domain.d
        hi = list(lo)
        lo[axis] = slice(0, domain.N + 1)
        hi[axis] = slice(1, domain.N + 2)
        prod = pad[tuple(lo)] * pad[tuple(hi)]
        total -= prod.reshape(prod.shape[0], -1).sum(axis=1)
    return total


def energy(config: SpinConfig) -> int:
    """Ising energy with the frozen boundary, in units of the coupling.

    Every interior bond and every interior-boundary bond is counted once.
    """
    return int(energies(config.domain, config.to_array()[None, :])[0])


def local_fields(domain: LatticeDomain, spins: np.ndarray) -> np.ndarray:
    """Neighbour sums ``(n_configs, n_sites)`` including boundary spins."""
    pad = _padded_batch(domain, spins).reshape(np.atleast_2d(spins).shape[0], -1)
    idx = domain.site_pad[:, None] + domain.neighbor_offsets[None, :]
    return pad[:, idx].sum(axis=2)


def local_field(config: SpinConfig, site: int) -> int:
    """Sum of the ``2d`` neighbour spins of ``site`` (boundary at its frozen value)."""
    config.domain._check_site(site)
    pad = config.padded()
    p = config.domain.site_pad[site]
    return int(pad[p + config.domain.neighbor_offsets].sum())


def all_states(domain: LatticeDomain) -> np.ndarray:
    """All ``2^n`` configurations as an ``int8`` matrix; row ``s`` has bit ``i`` of ``s`` at site ``i``."""
    n = domain.n_sites
    codes = np.arange(2**n, dtype=np.int64)
    bits = (codes[:, None] >> np.arange(n)[None, :]) & 1
    return (2 * bits - 1).astype(np.int8)


@dataclass
class GibbsTable:
    """Exact Gibbs measure of a small domain."""

    spec: GibbsSpec
    states: np.ndarray
    energies: np.ndarray
    log_probs: np.ndarray
    probs: np.ndarray = field(repr=False)


def enumerate_gibbs(spec: GibbsSpec) -> GibbsTable:
    """Exact Gibbs probabilities over all ``2^(N^d)`` states."""
    n = spec.domain.n_sites
    if n > MAX_ENUM_SITES:
        raise DomainTooLargeError(f"{n} sites exceeds the enumeration limit {MAX_ENUM_SITES}")
    states = all_states(spec.domain)
    en = energies(spec.domain, states)
    logw = -spec.beta * en.astype(float)
    logp = logw - logsumexp(logw)
    return GibbsTable(spec, states, en, logp, np.exp(logp))


@dataclass
class ExactGenerator:
    """Dense generator of a reversible chain together with its stationary law."""

    matrix: np.ndarray
    log_mu: np.ndarray
    states: np.ndarray | None = None

    @property
    def mu(self) -> np.ndarray:
        return np.exp(self.log_mu)

    def symmetrized(self) -> np.ndarray:
        """``D^{1/2} (-L) D^{-1/2}`` with ``D = diag(mu)``; symmetric under detailed balance."""
        half = 0.5 * self.log_mu
        return -self.matrix * np.exp(half[:, None] - half[None, :])

    def edges(self):
        """Undirected edges ``(i, j, mu_i L_ij)`` with ``i < j``."""
        i, j = np.nonzero(np.triu(self.matrix, 1))
        return i, j, self.mu[i] * self.matrix[i, j]


def exact_generator(spec: GibbsSpec, rates) -> ExactGenerator:
    """Dense single-spin-flip generator for all states of a tiny domain.

    ``rates`` is a :class:`~kinising.rates.RateModel` (anything with
    ``rate(delta_h)``); its ``beta`` is ignored in favour of ``spec.beta``.
    """
    dom = spec.domain
    n = dom.n_sites
    if n > MAX_GENERATOR_SITES:
        raise DomainTooLargeError(f"{n} sites exceeds the dense-generator limit {MAX_GENERATOR_SITES}")
    if getattr(rates, "beta", spec.beta) != spec.beta:
        rates = type(rates)(rates.kind, spec.beta)
    table = enumerate_gibbs(spec)
    states = table.states
    dh = 2 * states.astype(np.int64) * local_fields(dom, states)
    c = rates.rate(dh)
    Q = np.zeros((2**n, 2**n))
    rows = np.repeat(np.arange(2**n), n)
    cols = (rows ^ (1 << np.tile(np.arange(n), 2**n))).astype(np.int64)
    Q[rows, cols] = c.reshape(-1)
    Q[np.diag_indices_from(Q)] = -c.sum(axis=1)
    return ExactGenerator(Q, table.log_probs, states)


def exact_inverse_gap(generator: ExactGenerator) -> float:
    """Inverse of the smallest non-zero eigenvalue of ``-L``."""
    ev = np.linalg.eigvalsh(generator.symmetrized())
    if ev.shape[0] < 2:
        raise NumericalDegeneracyError("a one-state chain has no spectral gap")
    gap = ev[1]
    if gap < 1e-13:
        raise NumericalDegeneracyError(f"spectral gap {gap:.3e} below 1e-13")
    return float(1.0 / gap)
