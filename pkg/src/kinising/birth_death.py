"""Birth-death chain with stretched-exponential stationary law.

States are ``{0, ..., N^d}``, ``mu(x) ~ exp(-x^alpha)`` with
``alpha = (d - 1) / d``, birth rate ``(x v 1)^alpha`` and the death rate
fixed by reversibility.  Everything that can overflow is kept in logs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.special import logsumexp

from ._jit import kernel
from .functional import LSMaximum, maximize_ls_ratio
from .lattice import NumericalDegeneracyError
from .stats import SlopeFit, loglog_slope, stream
from .tridiag import tridiagonal_eigenvalue

__all__ = [
    "BirthDeathChain", "build_chain", "stationary", "HardyScan", "HardyReport", "hardy_gap_bound",
    "hardy_ls_bound", "hardy_report", "exact_inverse_gap", "expected_hitting_time", "LSBound",
    "ls_lower_bound_numeric", "BDTrajectory", "simulate_bd", "empirical_hitting_times",
    "ScalingRow", "ScalingReport", "scaling_experiment", "MAX_GAP_STATES", "MAX_LS_STATES",
]

MAX_GAP_STATES = 20000
MAX_LS_STATES = 2000
GAP_COLLISION = 1e-13


@dataclass(frozen=True)
class BirthDeathChain:
    d: int
    N: int

    def __post_init__(self):
        if self.d < 2:
            raise ValueError(f"dimension must be >= 2, got {self.d}")
        if self.N < 1:
            raise ValueError(f"N must be >= 1, got {self.N}")

    @property
    def alpha(self) -> float:
        return (self.d - 1) / self.d

    @property
    def top(self) -> int:
        """Largest state ``N^d``."""
        return self.N**self.d

    @property
    def n_states(self) -> int:
        return self.top + 1

    @cached_property
    def states(self) -> np.ndarray:
        return np.arange(self.n_states, dtype=float)

    @cached_property
    def log_weight(self) -> np.ndarray:
        """Unnormalized ``log mu(x) = -x^alpha``."""
        return -(self.states**self.alpha)

    @cached_property
    def log_birth(self) -> np.ndarray:
        lb = self.alpha * np.log(np.maximum(self.states, 1.0))
        lb[-1] = -math.inf
        return lb

    @cached_property
    def log_death(self) -> np.ndarray:
        x = self.states[:-1]
        # (x + 1)^a - x^a without cancellation
        inc = np.where(x > 0, x**self.alpha * np.expm1(self.alpha * np.log1p(1.0 / np.maximum(x, 1.0))), 1.0)
        ld = np.empty(self.n_states)
        ld[0] = -math.inf
        ld[1:] = self.alpha * np.log(np.maximum(x, 1.0)) + inc
        return ld

    @property
    def birth(self) -> np.ndarray:
        return np.exp(self.log_birth)

    @property
    def death(self) -> np.ndarray:
        return np.exp(self.log_death)

    @cached_property
    def log_mu(self) -> np.ndarray:
        """Normalized log stationary law."""
        return self.log_weight - logsumexp(self.log_weight)

    @cached_property
    def log_tail(self) -> np.ndarray:
        """``log sum_{y >= x} mu(y)``."""
        return np.logaddexp.accumulate(self.log_mu[::-1])[::-1]

    @cached_property
    def log_head(self) -> np.ndarray:
        """``log sum_{y <= x} mu(y)``, taken as the complement of the tail."""
        lh = np.zeros(self.n_states)
        lh[:-1] = np.log1p(-np.exp(self.log_tail[1:]))
        return lh

    @cached_property
    def log_resistance(self) -> np.ndarray:
        """``log R(x)``, ``R(x) = sum_{y < x} 1 / (mu(y) b(y))``; ``R(0) = 0``."""
        lc = self.log_mu[:-1] + self.log_birth[:-1]
        lr = np.empty(self.n_states)
        lr[0] = -math.inf
        lr[1:] = np.logaddexp.accumulate(-lc)
        return lr

    def detailed_balance_error(self) -> float:
        """Largest ``|log mu(x) + log b(x) - log mu(x+1) - log d(x+1)|``."""
        lhs = self.log_weight[:-1] + self.log_birth[:-1]
        rhs = self.log_weight[1:] + self.log_death[1:]
        return float(np.max(np.abs(lhs - rhs))) if self.top > 0 else 0.0

    def edges(self):
        """Edge list ``(x, x+1, mu(x) b(x))`` for :mod:`kinising.functional`."""
        x = np.arange(self.top)
        return x, x + 1, np.exp(self.log_mu[:-1] + self.log_birth[:-1])


def build_chain(d: int, N: int) -> BirthDeathChain:
    return BirthDeathChain(int(d), int(N))


def stationary(chain: BirthDeathChain) -> np.ndarray:
    return np.exp(chain.log_mu)


@kernel
def hardy_scan(log_r, log_t, log_h, w_t, w_h, out_plus, out_minus, arg_plus, arg_minus):
    """Per-anchor ``log B+(i)`` and ``log B-(i)`` in ``O(M^2)``.

    ``B+(i) = max_{x > i} (R(x) - R(i)) T(x) W_T(x)`` and
    ``B-(i) = max_{x < i} (R(i) - R(x)) H(x) W_H(x)`` with the optional
    log weights ``w_t``, ``w_h``.  Empty maxima give ``-inf``.
    """
    m = log_r.shape[0]
    for i in range(m):
        if i < m - 1:
            up = log_r[i + 1:]
            v = up + np.log1p(-np.exp(log_r[i] - up)) + log_t[i + 1:] + w_t[i + 1:]
            j = np.argmax(v)
            out_plus[i] = v[j]
            arg_plus[i] = i + 1 + j
        else:
            out_plus[i] = -np.inf
            arg_plus[i] = -1
        if i > 0:
            v = log_r[i] + np.log1p(-np.exp(log_r[:i] - log_r[i])) + log_h[:i] + w_h[:i]
            j = np.argmax(v)
            out_minus[i] = v[j]
            arg_minus[i] = j
        else:
            out_minus[i] = -np.inf
            arg_minus[i] = -1


@dataclass
class HardyScan:
    """Per-anchor Hardy quantities and their minimax."""

    plus: np.ndarray
    minus: np.ndarray
    arg_plus: np.ndarray
    arg_minus: np.ndarray

    @property
    def per_anchor(self) -> np.ndarray:
        return np.maximum(self.plus, self.minus)

    @property
    def anchor(self) -> int:
        return int(np.argmin(self.per_anchor))

    @property
    def value(self) -> float:
        return float(self.per_anchor[self.anchor])

    @property
    def attaining(self) -> tuple[int, int]:
        """Points attaining the plus and minus suprema at the optimal anchor."""
        i = self.anchor
        return int(self.arg_plus[i]), int(self.arg_minus[i])


@dataclass
class HardyReport:
    gap: HardyScan | None = None
    ls: HardyScan | None = None

    @property
    def B(self) -> float:
        return self.gap.value

    @property
    def A(self) -> float:
        return self.ls.value

    def log_factor_diagnostic(self) -> float | None:
        """``A / B`` when both minimax values are attained at the same point, else None."""
        if self.gap is None or self.ls is None or self.gap.attaining != self.ls.attaining:
            return None
        return self.A / self.B


def _scan(chain: BirthDeathChain, with_log: bool) -> HardyScan:
    m = chain.n_states
    lt, lh = chain.log_tail, chain.log_head
    if with_log:
        with np.errstate(divide="ignore"):
            wt, wh = np.log(np.maximum(-lt, 0.0)), np.log(np.maximum(-lh, 0.0))
    else:
        wt = wh = np.zeros(m)
    bp, bm = np.empty(m), np.empty(m)
    ap, am = np.empty(m, dtype=np.int64), np.empty(m, dtype=np.int64)
    with np.errstate(divide="ignore", invalid="ignore"):
        hardy_scan(chain.log_resistance, lt, lh, wt, wh, bp, bm, ap, am)
    return HardyScan(np.exp(bp), np.exp(bm), ap, am)


def hardy_gap_bound(chain: BirthDeathChain) -> HardyReport:
    """Hardy constant ``B``, with ``B / 2 <= S <= 4 B``."""
    return HardyReport(gap=_scan(chain, False))


def hardy_ls_bound(chain: BirthDeathChain) -> HardyReport:
    """Hardy constant ``A`` (tails weighted by ``log 1/tail``), with ``A / 20 <= L <= 20 A``."""
    return HardyReport(ls=_scan(chain, True))


def hardy_report(chain: BirthDeathChain) -> HardyReport:
    return HardyReport(gap=_scan(chain, False), ls=_scan(chain, True))


def _symmetrized(chain: BirthDeathChain):
    diag = chain.birth + chain.death
    off = -np.exp(0.5 * (chain.log_birth[:-1] + chain.log_death[1:]))
    return diag, off


def exact_inverse_gap(chain: BirthDeathChain) -> float:
    """``1 / lambda_1`` of ``-L``, from the mu-symmetrized tridiagonal form."""
    if chain.top > MAX_GAP_STATES:
        raise ValueError(f"N^d = {chain.top} exceeds the solver budget {MAX_GAP_STATES}")
    diag, off = _symmetrized(chain)
    lam0 = tridiagonal_eigenvalue(diag, off, 0)
    lam1 = tridiagonal_eigenvalue(diag, off, 1)
    if lam1 - lam0 < GAP_COLLISION:
        raise NumericalDegeneracyError(f"lowest eigenvalues collide: {lam0!r}, {lam1!r}")
    return 1.0 / lam1


def expected_hitting_time(chain: BirthDeathChain, start: int, target: int = 0) -> float:
    """``E_start[T_0] = sum_{x=1}^{start} T(x) / (mu(x) d(x))``."""
    if target != 0:
        raise ValueError("only hitting times of 0 are supported")
    if not 0 <= start <= chain.top:
        raise ValueError(f"start {start} outside [0, {chain.top}]")
    if start == 0:
        return 0.0
    terms = chain.log_tail[1:start + 1] - chain.log_mu[1:start + 1] - chain.log_death[1:start + 1]
    return float(np.exp(logsumexp(terms)))


@dataclass
class LSBound:
    value: float
    A: float
    f: np.ndarray
    inconclusive: bool
    maximum: LSMaximum = field(repr=False, default=None)


def ls_lower_bound_numeric(chain: BirthDeathChain, iterations: int = 500, seed: int = 0,
                           n_random: int = 2) -> LSBound:
    """Best ``Ent(f^2) / E(f)`` found by local search; a valid lower bound on ``L``.

    Starts include step profiles ``f = tail(x0)^{-1/2} 1[x >= x0]`` (smoothed
    to stay positive) at the points attaining the Hardy ``A`` suprema.
    """
    if chain.top > MAX_LS_STATES:
        raise ValueError(f"N^d = {chain.top} exceeds the optimizer budget {MAX_LS_STATES}")
    rep = hardy_ls_bound(chain)
    A = rep.A
    mu = stationary(chain)
    x = np.arange(chain.n_states)
    xp, xm = rep.ls.attaining
    cands = {p for p in (xp, xm + 1, rep.ls.anchor, chain.n_states // 2, 1) if 1 <= p <= chain.top}
    starts = []
    for x0 in sorted(cands):
        height = -0.5 * chain.log_tail[x0]
        starts.append(np.exp(np.where(x >= x0, height, 0.0)))
    starts.append(np.exp(0.5 * (np.log(2.0) - chain.log_tail) * np.clip(x / max(chain.top, 1), 0, 1)))
    best = maximize_ls_ratio(mu, chain.edges(), starts, iterations, stream(seed), n_random)
    return LSBound(best.value, A, best.f, best.value < A / 20.0, best)


@kernel
def bd_path(log_birth, log_death, x, t, horizon, u, ev_t, ev_x):
    """Jump chain until ``horizon``; two uniforms per jump.  Returns ``(n, x, t, reached)``."""
    cap = ev_t.shape[0]
    n = 0
    k = 0
    while n < cap and k + 1 < u.shape[0]:
        b = math.exp(log_birth[x])
        dth = math.exp(log_death[x])
        tot = b + dth
        dt = -math.log(1.0 - u[k]) / tot
        if t + dt > horizon:
            return n, x, horizon, True
        t += dt
        if u[k + 1] * tot < b:
            x += 1
        else:
            x -= 1
        k += 2
        ev_t[n] = t
        ev_x[n] = x
        n += 1
    return n, x, t, False


@kernel
def bd_hitting(log_birth, log_death, start, u, out, carry):
    """Hitting times of 0 for consecutive runs from ``start``.

    ``carry = [run, x, t]`` lets the caller resume with a fresh batch of
    uniforms.  Returns the number of uniforms consumed.
    """
    k = 0
    run = int(carry[0])
    x = int(carry[1])
    t = carry[2]
    while run < out.shape[0]:
        if x == 0:
            out[run] = t
            run += 1
            x = start
            t = 0.0
            continue
        if k + 1 >= u.shape[0]:
            break
        b = math.exp(log_birth[x])
        dth = math.exp(log_death[x])
        tot = b + dth
        t += -math.log(1.0 - u[k]) / tot
        if u[k + 1] * tot < b:
            x += 1
        else:
            x -= 1
        k += 2
    carry[0] = run
    carry[1] = x
    carry[2] = t
    return k


@dataclass
class BDTrajectory:
    start: int
    times: np.ndarray
    states: np.ndarray
    horizon: float

    def occupation(self, n_states: int) -> np.ndarray:
        """Fraction of ``[0, horizon]`` spent in every state."""
        pts = np.concatenate([[0.0], self.times, [self.horizon]])
        xs = np.concatenate([[self.start], self.states])
        occ = np.bincount(xs, weights=np.diff(pts), minlength=n_states)
        return occ / self.horizon if self.horizon > 0 else occ


def simulate_bd(chain: BirthDeathChain, start: int, horizon: float, seed: int, chunk: int = 1 << 16) -> BDTrajectory:
    if not 0 <= start <= chain.top:
        raise ValueError(f"start {start} outside [0, {chain.top}]")
    rng = stream(seed)
    lb, ld = chain.log_birth, chain.log_death
    x, t = int(start), 0.0
    times, states = [], []
    while horizon > 0:
        ev_t, ev_x = np.empty(chunk), np.empty(chunk, dtype=np.int64)
        n, x, t, reached = bd_path(lb, ld, x, t, float(horizon), rng.random(2 * chunk), ev_t, ev_x)
        times.append(ev_t[:n])
        states.append(ev_x[:n])
        if reached:
            break
    t_all = np.concatenate(times) if times else np.empty(0)
    x_all = np.concatenate(states) if states else np.empty(0, dtype=np.int64)
    return BDTrajectory(int(start), t_all, x_all, float(horizon))


def empirical_hitting_times(chain: BirthDeathChain, start: int, runs: int, seed: int,
                            chunk: int = 1 << 16) -> np.ndarray:
    """Independent samples of the hitting time of 0 from ``start``."""
    if not 0 <= start <= chain.top:
        raise ValueError(f"start {start} outside [0, {chain.top}]")
    rng = stream(seed)
    out = np.zeros(runs)
    carry = np.array([0.0, float(start), 0.0])
    while carry[0] < runs:
        bd_hitting(chain.log_birth, chain.log_death, int(start), rng.random(2 * chunk), out, carry)
    return out


@dataclass
class ScalingRow:
    N: int
    S: float
    B: float
    A: float
    hitting: float

    @property
    def sandwich_ok(self) -> bool:
        return self.B / 2 - 1e-9 <= self.S <= 4 * self.B + 1e-9


@dataclass
class ScalingReport:
    d: int
    rows: list
    slopes: dict

    @property
    def N(self) -> np.ndarray:
        return np.array([r.N for r in self.rows])

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.rows])

    @property
    def S_ratio(self) -> float:
        """``max S / min S`` over the grid (the summary used for ``d >= 3``)."""
        s = self.column("S")
        return float(s.max() / s.min())


def scaling_experiment(d: int, N_grid) -> ScalingReport:
    """Exact ``S``, Hardy ``B``, ``A`` and ``E_top[T_0]`` over ``N_grid`` with log-log slopes."""
    N_grid = sorted(int(n) for n in N_grid)
    if len(N_grid) < 5:
        raise ValueError("need at least 5 values of N")
    rows = []
    for N in N_grid:
        ch = build_chain(d, N)
        rep = hardy_report(ch)
        rows.append(ScalingRow(N, exact_inverse_gap(ch), rep.B, rep.A, expected_hitting_time(ch, ch.top)))
    rep = ScalingReport(d, rows, {})
    slopes: dict[str, SlopeFit] = {}
    for name in ("S", "B", "A", "hitting"):
        slopes[name] = loglog_slope(rep.N, rep.column(name))
    rep.slopes = slopes
    return rep
