"""Glauber dynamics: rates, continuous-time simulation and monotone coupling."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .lattice import GibbsSpec, LatticeDomain, SpinConfig, energy, local_field
from .rates import HEAT_BATH, METROPOLIS, RateModel
from .stats import stream

__all__ = [
    "HEAT_BATH", "METROPOLIS", "RateModel", "flip_rate", "check_detailed_balance",
    "Trajectory", "simulate_ct", "advance", "equilibrate", "CouplingState",
    "simulate_coupled", "AgreementResult", "agreement_experiment",
]

_CHUNK = 1 << 18


def flip_rate(model: RateModel, config: SpinConfig, site: int) -> float:
    """Rate at which the spin at ``site`` flips in ``config``."""
    dh = 2 * config.spin(site) * local_field(config, site)
    return float(model.rate(dh))


@dataclass
class BalanceReport:
    max_violation: float
    n_samples: int
    min_rate: float
    max_rate: float
    bound: float

    @property
    def rates_within_bound(self) -> bool:
        # heat-bath attains 1/k exactly at dH = 4d; allow rounding
        tol = 1e-12
        return (1.0 - tol) / self.bound <= self.min_rate and self.max_rate <= self.bound * (1.0 + tol)


def check_detailed_balance(model: RateModel, spec: GibbsSpec, samples: int, seed: int = 0) -> BalanceReport:
    """Largest ``|log mu(s) c_x(s) - log mu(s^x) c_x(s^x)|`` over random pairs.

    Uses full energies of both configurations, not just the local difference.
    """
    if model.beta != spec.beta:
        model = RateModel(model.kind, spec.beta)
    rng = stream(seed)
    dom = spec.domain
    worst = 0.0
    lo, hi = np.inf, -np.inf
    for _ in range(samples):
        cfg = SpinConfig.random(dom, rng)
        x = int(rng.integers(dom.n_sites))
        other = cfg.flipped(x)
        h = local_field(cfg, x)
        c_fwd = model.log_rate(2 * cfg.spin(x) * h)
        c_bwd = model.log_rate(2 * other.spin(x) * h)
        lhs = -spec.beta * energy(cfg) + c_fwd
        rhs = -spec.beta * energy(other) + c_bwd
        worst = max(worst, abs(float(lhs - rhs)))
        for c in (np.exp(c_fwd), np.exp(c_bwd)):
            lo, hi = min(lo, float(c)), max(hi, float(c))
    return BalanceReport(worst, samples, lo, hi, model.bound(dom.d))


@dataclass
class Trajectory:
    """Initial state plus the ordered list of flips up to ``horizon``."""

    initial: SpinConfig
    times: np.ndarray
    sites: np.ndarray
    spins: np.ndarray
    horizon: float

    def __len__(self):
        return self.times.shape[0]

    def final(self) -> SpinConfig:
        """Replay all events on a copy of the initial state."""
        arr = self.initial.to_array()
        if len(self):
            # the last write to a site wins
            rev_sites = self.sites[::-1]
            uniq, first = np.unique(rev_sites, return_index=True)
            arr[uniq] = self.spins[::-1][first]
        return SpinConfig.from_array(self.initial.domain, arr)

    def segments(self):
        """Durations and integer state codes of the piecewise-constant path.

        Only for domains with at most 62 sites.
        """
        n = self.initial.domain.n_sites
        if n > 62:
            raise ValueError("state codes need at most 62 sites")
        code0 = self.initial.code()
        toggles = np.left_shift(np.int64(1), self.sites.astype(np.int64))
        codes = np.concatenate([[code0], code0 ^ np.bitwise_xor.accumulate(toggles)]) if len(self) else np.array([code0])
        edges = np.concatenate([[0.0], self.times, [self.horizon]])
        return np.diff(edges), codes

    def occupation(self):
        """Fraction of time spent in each visited state, as a dict code -> fraction."""
        dur, codes = self.segments()
        out: dict[int, float] = {}
        for c, t in zip(codes.tolist(), dur.tolist()):
            out[c] = out.get(c, 0.0) + t
        total = self.horizon if self.horizon > 0 else 1.0
        return {c: t / total for c, t in out.items()}

    def spin_time_average(self, site: int) -> float:
        """Time average of the spin at ``site`` over ``[0, horizon]``."""
        mask = self.sites == site
        t = np.concatenate([[0.0], self.times[mask], [self.horizon]])
        vals = np.concatenate([[self.initial.spin(site)], self.spins[mask]])
        return float(np.sum(np.diff(t) * vals) / self.horizon) if self.horizon > 0 else float(vals[0])


def _class_state(domain: LatticeDomain, pad: np.ndarray):
    nd = 2 * domain.d
    spins = pad[domain.site_pad].astype(np.int64)
    h = pad[domain.site_pad[:, None] + domain.neighbor_offsets[None, :]].sum(axis=1).astype(np.int64)
    cls = ((spins + 1) // 2) * (nd + 1) + (h + nd) // 2
    nclass = 2 * (nd + 1)
    members = np.zeros((nclass, domain.n_sites), dtype=np.int64)
    counts = np.zeros(nclass, dtype=np.int64)
    pos = np.zeros(domain.n_sites, dtype=np.int64)
    for x, c in enumerate(cls):
        members[c, counts[c]] = x
        pos[x] = counts[c]
        counts[c] += 1
    return cls, members, counts, pos


def simulate_ct(model: RateModel, config: SpinConfig, horizon: float, seed: int, *, use_jit: bool | None = None) -> Trajectory:
    """Event-driven continuous-time Glauber dynamics on ``[0, horizon]``.

    Sites are grouped by (spin, local field); the total rate is the sum over
    classes, waiting times are exponential and the flipping site is chosen
    with probability proportional to its rate.  Deterministic in ``seed``.
    """
    if horizon < 0:
        raise ValueError("horizon must be >= 0")
    fn = _pick(kernels.nfold_run, use_jit)
    dom = config.domain
    pad = config.padded()
    cls, members, counts, pos = _class_state(dom, pad)
    class_rate = model.class_rates(dom.d).ravel()
    rng = stream(seed)
    t = 0.0
    chunks_t, chunks_s, chunks_v = [], [], []
    while True:
        u = rng.random(2 * _CHUNK)
        ev_t = np.empty(_CHUNK)
        ev_s = np.empty(_CHUNK, dtype=np.int64)
        ev_v = np.empty(_CHUNK, dtype=np.int8)
        n, t, done = fn(pad, dom.site_pad, dom.pad_site, dom.neighbor_offsets, class_rate,
                        cls, members, counts, pos, t, float(horizon), u, ev_t, ev_s, ev_v)
        chunks_t.append(ev_t[:n])
        chunks_s.append(ev_s[:n])
        chunks_v.append(ev_v[:n])
        if done:
            break
    return Trajectory(config.copy(), np.concatenate(chunks_t), np.concatenate(chunks_s),
                      np.concatenate(chunks_v), float(horizon))


def _pick(k, use_jit):
    if use_jit is None:
        return k
    return getattr(k, "jit" if use_jit else "py", k)


def advance(pad: np.ndarray, domain: LatticeDomain, model: RateModel, duration: float,
            rng: np.random.Generator, *, use_jit: bool | None = None) -> int:
    """Run the uniformized dynamics for ``duration`` time units in place.

    Every site carries a rate-1 clock; a ring resamples the spin with the
    rule of :meth:`RateModel.plus_table`.  Since all rates are <= 1 this is
    the same continuous-time process.  Returns the number of clock rings.
    """
    fn = _pick(kernels.apply_updates, use_jit)
    table = model.plus_table(domain.d)
    n_rings = int(rng.poisson(domain.n_sites * duration)) if duration > 0 else 0
    left = n_rings
    while left > 0:
        m = min(left, _CHUNK)
        fn(pad, domain.site_pad, domain.neighbor_offsets, table, rng.integers(0, domain.n_sites, m), rng.random(m))
        left -= m
    return n_rings


def equilibrate(spec: GibbsSpec, model: RateModel, burn_in: float, rng: np.random.Generator,
                start: SpinConfig | None = None) -> np.ndarray:
    """Padded lattice after ``burn_in`` time units from ``start`` (default: the boundary phase)."""
    dom = spec.domain
    pad = (start or SpinConfig.uniform(dom, dom.boundary)).padded()
    advance(pad, dom, RateModel(model.kind, spec.beta), burn_in, rng)
    return pad


@dataclass
class CouplingState:
    """Two heat-bath chains driven by one randomness stream."""

    a: SpinConfig
    b: SpinConfig
    stream_id: tuple
    time: float
    n_updates: int = 0
    n_checks: int = 0
    order_violations: int = 0
    check_times: list = field(default_factory=list)


def simulate_coupled(model: RateModel, state_a: SpinConfig, state_b: SpinConfig, horizon: float,
                     seed: int, *, n_checks: int = 0, stream_id: tuple = ()) -> CouplingState:
    """Grand coupling of two heat-bath chains up to ``horizon``.

    Both chains use the same clock rings and the same uniform per ring with
    the heat-bath threshold rule, so ``a <= b`` is preserved.  With
    ``n_checks > 0`` the full sitewise order is verified at that many evenly
    spaced times.
    """
    if not model.monotone:
        raise ValueError(f"grand coupling requires heat-bath rates, got {model.kind}")
    if state_a.domain != state_b.domain:
        raise ValueError("coupled states must live on the same domain")
    dom = state_a.domain
    pa, pb = state_a.padded(), state_b.padded()
    sid = (seed,) + tuple(stream_id)
    rng = stream(*sid)
    table = model.plus_table(dom.d)
    checkpoints = np.linspace(0, horizon, n_checks + 1)[1:] if n_checks else np.array([horizon])
    st = CouplingState(state_a, state_b, sid, 0.0)
    t = 0.0
    for tc in checkpoints:
        left = int(rng.poisson(dom.n_sites * (tc - t)))
        st.n_updates += left
        while left > 0:
            m = min(left, _CHUNK)
            st.order_violations += kernels.apply_updates_coupled(
                pa, pb, dom.site_pad, dom.neighbor_offsets, table, rng.integers(0, dom.n_sites, m), rng.random(m))
            left -= m
        t = tc
        if n_checks:
            st.n_checks += 1
            st.check_times.append(float(tc))
            if np.any(pa[dom.site_pad] > pb[dom.site_pad]):
                st.order_violations += 1
    st.a = SpinConfig.from_padded(dom, pa)
    st.b = SpinConfig.from_padded(dom, pb)
    st.time = float(horizon)
    return st


@dataclass
class AgreementResult:
    times: np.ndarray
    disagreement: np.ndarray
    stderr: np.ndarray
    plus_fraction: float
    replicas: int

    def rows(self):
        for t, p, s in zip(self.times, self.disagreement, self.stderr):
            yield {"t": float(t), "disagreement": float(p), "stderr": float(s)}


def agreement_experiment(spec: GibbsSpec, model: RateModel, t_grid, replicas: int, seed: int,
                         burn_in: float = 200.0) -> AgreementResult:
    """Probability that two coupled chains disagree at the centre site.

    Initial pairs are independent equilibrium draws (long runs from the
    boundary phase); each replica then runs the grand coupling and records
    the centre disagreement at every time in ``t_grid``.
    """
    if not model.monotone:
        raise ValueError("the agreement experiment uses the heat-bath grand coupling")
    model = RateModel(model.kind, spec.beta)
    dom = spec.domain
    t_grid = np.sort(np.asarray(t_grid, dtype=float))
    c = dom.site_pad[dom.center]
    table = model.plus_table(dom.d)
    hits = np.zeros((replicas, t_grid.shape[0]))
    plus = 0
    for r in range(replicas):
        rng = stream(seed, r)
        pa = equilibrate(spec, model, burn_in, rng)
        pb = equilibrate(spec, model, burn_in, rng)
        plus += int(pa[c] > 0) + int(pb[c] > 0)
        t = 0.0
        for j, tg in enumerate(t_grid):
            left = int(rng.poisson(dom.n_sites * (tg - t)))
            while left > 0:
                m = min(left, _CHUNK)
                kernels.apply_updates_coupled(pa, pb, dom.site_pad, dom.neighbor_offsets, table,
                                              rng.integers(0, dom.n_sites, m), rng.random(m))
                left -= m
            t = tg
            hits[r, j] = float(pa[c] != pb[c])
    mean = hits.mean(axis=0)
    se = hits.std(axis=0, ddof=1) / np.sqrt(replicas) if replicas > 1 else np.zeros_like(mean)
    return AgreementResult(t_grid, mean, se, plus / (2 * replicas), replicas)
