"""Block test function, its moments under the Gibbs measure and plug-in bounds.

The test function is ``f = exp(pref * sum_blocks g(M_block))`` with
``pref = lambda K^d / N`` and ``g`` a cubic smoothstep falling from 1 at
``-m*/2`` to 0 at ``-m*/4``.  All arithmetic is carried out on ``log f``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import kernels
from .coarse import (BlockGrid, block_magnetizations, count_minus_blocks, partition, select_block_side,
                     spontaneous_magnetization_2d)
from .glauber import _CHUNK, advance
from .lattice import GibbsSpec, LatticeDomain, SpinConfig, enumerate_gibbs, local_fields
from .rates import RateModel
from .stats import batch_matrix, batch_means, delta_se, stream, weighted_ess

__all__ = [
    "YauTestFunction", "g_eval", "g_deriv", "log_f", "log_f_batch", "grad_sq_f", "Moments",
    "exact_moments", "estimate_moments", "direct_moments", "tilted_moments", "BoundEstimate",
    "gap_lower_bound", "ls_lower_bound",
    "psi_observable", "DropletCurve", "droplet_relaxation_experiment", "EquilibriumSample",
    "sample_equilibrium", "estimate_m_star", "ls_reference",
]

LOG_SCALE_HEADROOM = 200.0
MIN_ESS = 10.0
DEFAULT_TILT = 3.0


def g_eval(s, m_star: float):
    """Cutoff profile: 1 below ``-m*/2``, 0 above ``-m*/4``, smoothstep between."""
    u = np.clip((np.asarray(s, dtype=float) + 0.5 * m_star) / (0.25 * m_star), 0.0, 1.0)
    return 1.0 - u * u * (3.0 - 2.0 * u)


def g_deriv(s, m_star: float):
    """Derivative of :func:`g_eval`; ``sup |g'| = 6 / m*``."""
    s = np.asarray(s, dtype=float)
    u = (s + 0.5 * m_star) / (0.25 * m_star)
    inside = (u > 0) & (u < 1)
    return np.where(inside, -6.0 * u * (1.0 - u) / (0.25 * m_star), 0.0)


@dataclass(frozen=True)
class YauTestFunction:
    lam: float
    m_star: float
    K: int
    N: int
    d: int

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError(f"lambda must be positive, got {self.lam}")
        if not 0 < self.m_star <= 1:
            raise ValueError(f"m* must lie in (0, 1], got {self.m_star}")
        if not 1 <= self.K <= self.N:
            raise ValueError(f"need 1 <= K <= N, got K={self.K}, N={self.N}")

    @classmethod
    def for_domain(cls, domain: LatticeDomain, lam: float, m_star: float, K: int | None = None,
                   b: float = 2.0, gamma: float = 1.0) -> YauTestFunction:
        K = select_block_side(domain.N, b, gamma) if K is None else K
        return cls(lam, m_star, K, domain.N, domain.d)

    @property
    def prefactor(self) -> float:
        return self.lam * self.K**self.d / self.N

    @property
    def g_sup_deriv(self) -> float:
        return 6.0 / self.m_star

    def grid(self, domain: LatticeDomain) -> BlockGrid:
        if (domain.N, domain.d) != (self.N, self.d):
            raise ValueError("test function and domain disagree on (N, d)")
        return partition(domain, self.K)

    def log_scale(self, grid: BlockGrid) -> float:
        """Shift subtracted from ``log f`` before exponentiating."""
        return max(0.0, self.prefactor * grid.n_blocks - LOG_SCALE_HEADROOM)


def _check(grid: BlockGrid, tf: YauTestFunction):
    if (grid.domain.N, grid.domain.d, grid.K) != (tf.N, tf.d, tf.K):
        raise ValueError("block grid does not match the test function (N, d, K)")


def log_f_batch(spins: np.ndarray, grid: BlockGrid, tf: YauTestFunction) -> np.ndarray:
    """``log f`` for a batch ``(n_configs, n_sites)`` of spin arrays."""
    _check(grid, tf)
    spins = np.atleast_2d(spins).astype(float)
    onehot = np.zeros((grid.domain.n_sites, grid.n_blocks))
    onehot[np.arange(grid.domain.n_sites), grid.block_of_site] = 1.0
    M = spins @ onehot / grid.sizes
    return tf.prefactor * g_eval(M, tf.m_star).sum(axis=1)


def log_f(config: SpinConfig, grid: BlockGrid, tf: YauTestFunction) -> float:
    return float(log_f_batch(config.to_array()[None, :], grid, tf)[0])


def grad_sq_f(config: SpinConfig, grid: BlockGrid, tf: YauTestFunction) -> float:
    """``sum_x |f(s^x) - f(s)|^2 / f(s)^2``, using only the flipped site's block."""
    _check(grid, tf)
    spins = config.to_array().astype(np.int64)
    sums = np.bincount(grid.block_of_site, weights=spins, minlength=grid.n_blocks)
    b = grid.block_of_site
    size = grid.sizes[b]
    before = g_eval(sums[b] / size, tf.m_star)
    after = g_eval((sums[b] - 2 * spins) / size, tf.m_star)
    return float(np.sum(np.expm1(tf.prefactor * (after - before)) ** 2))


@dataclass
class Moments:
    """Functionals of ``f`` under the Gibbs measure.

    ``f`` is represented as ``f * exp(-log_scale)``; every entry refers to
    the scaled function (ratios used by the bounds are scale-free).
    ``dirichlet`` is the unit-rate form ``mu(sum_x |grad_x f|^2)``,
    ``dirichlet_gen`` the generator form ``-<f, L f>``.
    """

    mean_f: float
    mean_f2: float
    var_f: float
    entropy_f2: float
    dirichlet: float
    dirichlet_gen: float
    se: dict = field(default_factory=dict)
    log_scale: float = 0.0
    n_samples: int = 0
    ess: float = math.inf
    exact: bool = False
    flags: list = field(default_factory=list)

    NAMES = ("mean_f", "mean_f2", "var_f", "entropy_f2", "dirichlet", "dirichlet_gen")

    def value(self, name: str) -> float:
        return float(getattr(self, name))

    def stderr(self, name: str) -> float:
        return float(self.se.get(name, 0.0))

    def unscaled(self) -> Moments:
        """Same moments for ``f`` itself (may overflow for large domains)."""
        s = self.log_scale
        k1, k2 = math.exp(s), math.exp(2 * s)
        mult = {"mean_f": k1, "mean_f2": k2, "var_f": k2, "dirichlet": k2, "dirichlet_gen": k2}
        vals = {n: self.value(n) * mult.get(n, 1.0) for n in self.NAMES}
        # Ent(c^2 h) = c^2 Ent(h)
        vals["entropy_f2"] = self.entropy_f2 * k2
        se = {n: self.stderr(n) * (k2 if n != "mean_f" else k1) for n in self.se}
        return replace(self, **vals, se=se, log_scale=0.0)


def exact_moments(spec: GibbsSpec, rates: RateModel, tf: YauTestFunction) -> Moments:
    """All moments by enumeration of the ``2^(N^d)`` states."""
    dom = spec.domain
    grid = tf.grid(dom)
    table = enumerate_gibbs(spec)
    p = table.probs
    states = table.states
    lf = log_f_batch(states, grid, tf)
    scale = tf.log_scale(grid)
    n = dom.n_sites
    codes = np.arange(states.shape[0])
    flipped = codes[:, None] ^ (1 << np.arange(n))[None, :]
    rel = np.expm1(lf[flipped] - lf[:, None]) ** 2
    c = RateModel(rates.kind, spec.beta).rate(2 * states.astype(np.int64) * local_fields(dom, states))
    F = np.exp(lf - scale)
    h = F * F
    mf = float(p @ F)
    mh = float(p @ h)
    ent = float(p @ (h * (2.0 * (lf - scale) - math.log(mh))))
    return Moments(
        mean_f=mf, mean_f2=mh, var_f=float(p @ (F - mf) ** 2), entropy_f2=max(ent, 0.0),
        dirichlet=float(p @ (h * rel.sum(axis=1))), dirichlet_gen=float(p @ (h * 0.5 * (c * rel).sum(axis=1))),
        log_scale=scale, n_samples=states.shape[0], exact=True,
    )


def _run_sampler(spec: GibbsSpec, model: RateModel, tf: YauTestFunction, n_rows: int, sweep_len: int,
                 rng: np.random.Generator, pad: np.ndarray | None = None, burn_in_rows: int = 0,
                 tilt: float = 0.0):
    """Random-scan updates with observables recorded every ``sweep_len`` updates."""
    dom = spec.domain
    grid = tf.grid(dom)
    model = RateModel(model.kind, spec.beta)
    pad = SpinConfig.uniform(dom, dom.boundary).padded() if pad is None else pad
    bsum = np.bincount(grid.block_of_site, weights=pad[dom.site_pad].astype(np.int64),
                       minlength=grid.n_blocks).astype(np.int64)
    ptr, bsites = grid.ptr_sites
    table = model.plus_table(dom.d)
    crate = model.class_rates(dom.d).ravel()
    out = np.empty((n_rows, kernels.N_OBS))
    rows_per_chunk = max(1, _CHUNK // sweep_len)
    total = burn_in_rows + n_rows
    done = 0
    while done < total:
        m = min(rows_per_chunk, total - done)
        buf = np.empty((m, kernels.N_OBS))
        kernels.sample_observables(pad, dom.site_pad, dom.neighbor_offsets, table, crate,
                                   rng.integers(0, dom.n_sites, m * sweep_len), rng.random(m * sweep_len),
                                   sweep_len, grid.block_of_site, bsum, ptr, bsites, grid.sizes,
                                   float(tf.m_star), float(tf.prefactor), int(dom.center),
                                   float(spec.beta), float(tilt), buf)
        lo = done - burn_in_rows
        if lo + m > 0:
            keep = buf[max(0, -lo):]
            out[max(0, lo):max(0, lo) + keep.shape[0]] = keep
        done += m
    return out, pad


def estimate_moments(spec: GibbsSpec, model: RateModel, tf: YauTestFunction, sweeps: int, seed: int,
                     burn_in: int = 1000, n_batches: int = 50, method: str = "tilted",
                     tilt: float = DEFAULT_TILT) -> Moments:
    """Monte-Carlo moments from one random-scan stream, one sample per sweep.

    ``method="tilted"`` samples the measure proportional to ``f^tilt dmu`` and
    reweights by ``f^-tilt``; every average is then of a bounded quantity, so
    the rare configurations that dominate ``mu(f^2)`` are actually visited.
    ``method="direct"`` samples ``mu`` itself.  Standard errors come from
    batch means propagated with the delta method.
    """
    dom = spec.domain
    grid = tf.grid(dom)
    rng = stream(seed)
    if method not in ("tilted", "direct"):
        raise ValueError(f"unknown method {method!r}")
    obs, _ = _run_sampler(spec, model, tf, sweeps, dom.n_sites, rng, burn_in_rows=burn_in,
                          tilt=tilt if method == "tilted" else 0.0)
    cols = (obs[:, kernels.OBS_LOGF], obs[:, kernels.OBS_GRAD], obs[:, kernels.OBS_GRAD_GEN])
    if method == "tilted":
        return tilted_moments(*cols, log_scale=tf.log_scale(grid), n_batches=n_batches, tilt=tilt)
    return direct_moments(*cols, log_scale=tf.log_scale(grid), n_batches=n_batches)


def _flags(ess):
    return [f"effective sample size {ess:.1f} < {MIN_ESS:g}"] if ess < MIN_ESS else []


def direct_moments(logf, grad, grad_gen, log_scale: float = 0.0, n_batches: int = 50) -> Moments:
    """Moments from samples of ``mu`` itself."""
    logf = np.asarray(logf, dtype=float)
    F = np.exp(logf - log_scale)
    h = F * F
    cols = np.column_stack([F, h, h * 2.0 * (logf - log_scale), h * grad, h * grad_gen])
    bm = batch_matrix(cols, n_batches)
    cov = np.cov(bm, rowvar=False)
    a, b, c, dg, dgg = cols.mean(axis=0)
    var = b - a * a
    ent = c - b * math.log(b)
    se = {
        "mean_f": delta_se([1, 0, 0, 0, 0], cov, n_batches),
        "mean_f2": delta_se([0, 1, 0, 0, 0], cov, n_batches),
        "var_f": delta_se([-2 * a, 1, 0, 0, 0], cov, n_batches),
        "entropy_f2": delta_se([0, -math.log(b) - 1.0, 1, 0, 0], cov, n_batches),
        "dirichlet": delta_se([0, 0, 0, 1, 0], cov, n_batches),
        "dirichlet_gen": delta_se([0, 0, 0, 0, 1], cov, n_batches),
    }
    ess = weighted_ess(h, n_batches)
    return Moments(float(a), float(b), float(max(var, 0.0)), float(max(ent, 0.0)), float(dg), float(dgg),
                   se=se, log_scale=log_scale, n_samples=logf.shape[0], ess=ess, flags=_flags(ess))


def tilted_moments(logf, grad, grad_gen, log_scale: float = 0.0, n_batches: int = 50,
                   tilt: float = DEFAULT_TILT) -> Moments:
    """Moments from samples of ``f^tilt dmu`` (normalized), ``tilt >= 2``.

    ``mu(phi) = nu(phi f^-tilt) / nu(f^-tilt)``.  Everything is computed
    for ``f / f_min`` with ``f_min`` the smallest sampled value, so every
    weight lies in ``(0, 1]``, then rescaled.
    """
    if tilt < 2:
        raise ValueError("tilt must be >= 2 for bounded weights")
    logf = np.asarray(logf, dtype=float)
    c = float(logf.min())
    z = logf - c
    w0 = np.exp(-tilt * z)
    w2 = np.exp((2.0 - tilt) * z)
    cols = np.column_stack([w0, np.exp((1.0 - tilt) * z), w2, w2 * 2.0 * logf, w2 * grad, w2 * grad_gen])
    bm = batch_matrix(cols, n_batches)
    cov = np.cov(bm, rowvar=False)
    m0, m1, m2, m3, m4, m5 = cols.mean(axis=0)
    A, B = m1 / m0, m2 / m0
    m3c = m3 - 2.0 * c * m2
    E = m3c / m0 - B * math.log(B)
    k1 = math.exp(c - log_scale)
    k2 = k1 * k1
    vals = (k1 * A, k2 * B, k2 * (B - A * A), k2 * E, k2 * m4 / m0, k2 * m5 / m0)
    dB = np.array([-B / m0, 0, 1 / m0, 0, 0, 0])
    dA = np.array([-A / m0, 1 / m0, 0, 0, 0, 0])
    dE = np.array([-m3c / m0**2, 0, -2.0 * c / m0, 1 / m0, 0, 0]) - (math.log(B) + 1.0) * dB
    grads = (
        (k1, dA), (k2, dB), (k2, dB - 2 * A * dA), (k2, dE),
        (k2, np.array([-m4 / m0**2, 0, 0, 0, 1 / m0, 0])),
        (k2, np.array([-m5 / m0**2, 0, 0, 0, 0, 1 / m0])),
    )
    se = {n: k * delta_se(g, cov, n_batches) for n, (k, g) in zip(Moments.NAMES, grads)}
    ess = weighted_ess(w0, n_batches)
    return Moments(float(vals[0]), float(vals[1]), float(max(vals[2], 0.0)), float(max(vals[3], 0.0)),
                   float(vals[4]), float(vals[5]),
                   se=se, log_scale=log_scale, n_samples=logf.shape[0], ess=ess, flags=_flags(ess))


@dataclass
class BoundEstimate:
    numerator: float
    numerator_se: float
    denominator: float
    denominator_se: float
    ratio: float | None
    n_samples: int
    ess: float
    flagged: bool = False
    reason: str = ""

    @property
    def ratio_se(self) -> float:
        if self.ratio is None:
            return math.nan
        rn = self.numerator_se / self.numerator if self.numerator > 0 else 0.0
        rd = self.denominator_se / self.denominator
        return abs(self.ratio) * math.hypot(rn, rd)


def _bound(num, num_se, den, den_se, mom: Moments) -> BoundEstimate:
    degenerate = den <= 0 or (den_se > 0 and den <= 3 * den_se) or den <= 1e-300
    if mom.exact and den <= 1e-14 * max(mom.mean_f2, 1e-300):
        degenerate = True
    if degenerate:
        return BoundEstimate(num, num_se, den, den_se, None, mom.n_samples, mom.ess, True,
                             "Dirichlet form consistent with zero; no bound")
    flagged = bool(mom.flags)
    return BoundEstimate(num, num_se, den, den_se, num / den, mom.n_samples, mom.ess, flagged, "; ".join(mom.flags))


def gap_lower_bound(moments: Moments, form: str = "unit") -> BoundEstimate:
    """``var(f) / dirichlet(f)``, a lower bound on the inverse spectral gap.

    ``form="unit"`` uses the unit-rate Dirichlet form (valid because both
    rate families are bounded by 1), ``form="generator"`` the exact one.
    """
    den, den_se = _dirichlet(moments, form)
    return _bound(moments.var_f, moments.stderr("var_f"), den, den_se, moments)


def ls_lower_bound(moments: Moments, form: str = "unit") -> BoundEstimate:
    """``Ent(f^2) / dirichlet(f)``, a lower bound on the log-Sobolev constant."""
    den, den_se = _dirichlet(moments, form)
    return _bound(moments.entropy_f2, moments.stderr("entropy_f2"), den, den_se, moments)


def _dirichlet(m: Moments, form: str):
    if form == "unit":
        return m.dirichlet, m.stderr("dirichlet")
    if form == "generator":
        return m.dirichlet_gen, m.stderr("dirichlet_gen")
    raise ValueError(f"unknown Dirichlet form {form!r}")


def psi_observable(config: SpinConfig, grid: BlockGrid, lam: float, m_star: float) -> float:
    """``log Psi = (lambda K^d / N) * #{blocks with M < -m*/4}``."""
    pref = lam * grid.volume / grid.domain.N
    return pref * count_minus_blocks(block_magnetizations(config, grid), m_star)


@dataclass
class DropletCurve:
    N: int
    K: int
    times: np.ndarray
    mean_log_psi: np.ndarray
    se_log_psi: np.ndarray
    eq_mean: float
    eq_se: float
    initial_log_psi: float

    @property
    def crossing_time(self) -> float:
        """First grid time at which the mean is within one combined error of equilibrium."""
        gap = self.mean_log_psi - self.eq_mean
        tol = np.hypot(self.se_log_psi, self.eq_se)
        hit = np.nonzero(gap <= tol)[0]
        return float(self.times[hit[0]]) if hit.size else math.inf


def droplet_relaxation_experiment(beta: float, model: RateModel, N_grid, t_grid, replicas: int, seed: int,
                                  lam: float = 1.0, m_star: float | None = None, d: int = 2,
                                  b: float = 2.0, gamma: float = 1.0, eq_burn_in: float = 200.0,
                                  eq_samples: int = 20, eq_spacing: float = 10.0) -> list[DropletCurve]:
    """``log Psi`` along heat-bath runs from all-minus under plus boundary.

    The equilibrium reference uses independent runs from all-plus, sampled
    ``eq_samples`` times ``eq_spacing`` apart after ``eq_burn_in``.
    """
    if not model.monotone:
        raise ValueError("the droplet experiment uses heat-bath rates")
    if m_star is None:
        m_star = spontaneous_magnetization_2d(beta)
        if m_star <= 0:
            raise ValueError("beta is not in the ordered phase; pass m_star explicitly")
    model = RateModel(model.kind, beta)
    t_grid = np.sort(np.asarray(t_grid, dtype=float))
    curves = []
    for N in N_grid:
        dom = LatticeDomain(d, int(N))
        K = select_block_side(dom.N, b, gamma)
        grid = partition(dom, K)
        pref = lam * K**d / dom.N
        thr = -0.25 * m_star * grid.sizes

        def lpsi(pad):
            sums = np.bincount(grid.block_of_site, weights=pad[dom.site_pad], minlength=grid.n_blocks)
            return pref * np.count_nonzero(sums < thr)

        vals = np.zeros((replicas, t_grid.shape[0]))
        eq = np.zeros((replicas, eq_samples))
        for r in range(replicas):
            rng = stream(seed, int(N), r)
            pad = SpinConfig.all_minus(dom).padded()
            t = 0.0
            for j, tg in enumerate(t_grid):
                advance(pad, dom, model, tg - t, rng)
                t = tg
                vals[r, j] = lpsi(pad)
            pad = SpinConfig.all_plus(dom).padded()
            advance(pad, dom, model, eq_burn_in, rng)
            for j in range(eq_samples):
                advance(pad, dom, model, eq_spacing, rng)
                eq[r, j] = lpsi(pad)
        rep_eq = eq.mean(axis=1)
        se = vals.std(axis=0, ddof=1) / math.sqrt(replicas) if replicas > 1 else np.zeros(t_grid.shape[0])
        eq_se = float(rep_eq.std(ddof=1) / math.sqrt(replicas)) if replicas > 1 else 0.0
        curves.append(DropletCurve(dom.N, K, t_grid, vals.mean(axis=0), se, float(rep_eq.mean()), eq_se,
                                   pref * grid.n_blocks))
    return curves


@dataclass
class EquilibriumSample:
    """Per-sweep equilibrium observables from one random-scan run."""

    magnetization: np.ndarray
    center: np.ndarray
    bad: np.ndarray
    minus: np.ndarray
    ramp: np.ndarray
    n_blocks: int

    def m_star_estimate(self, n_batches: int = 50) -> tuple[float, float]:
        """Mean centre spin under the boundary phase, with batch-means error."""
        m, se = batch_means(self.center, n_batches)
        return float(m), float(se)

    def label_histogram(self) -> dict[str, np.ndarray]:
        """How often each count of bad and minus blocks occurred."""
        k = self.n_blocks + 1
        return {"bad": np.bincount(self.bad.astype(np.int64), minlength=k),
                "minus": np.bincount(self.minus.astype(np.int64), minlength=k)}


def sample_equilibrium(spec: GibbsSpec, model: RateModel, tf: YauTestFunction, sweeps: int, seed: int,
                       burn_in: int = 1000) -> EquilibriumSample:
    dom = spec.domain
    obs, _ = _run_sampler(spec, model, tf, sweeps, dom.n_sites, stream(seed), burn_in_rows=burn_in)
    return EquilibriumSample(obs[:, kernels.OBS_MAG].copy(), obs[:, kernels.OBS_CENTER].copy(),
                             obs[:, kernels.OBS_BAD].copy(), obs[:, kernels.OBS_MINUS].copy(),
                             obs[:, kernels.OBS_Q].copy(), tf.grid(dom).n_blocks)


def estimate_m_star(spec: GibbsSpec, model: RateModel, sweeps: int, seed: int, burn_in: int = 1000) -> float:
    """Centre magnetization under plus boundary, a finite-volume proxy for ``m*``."""
    dom = spec.domain
    tf = YauTestFunction(1.0, 1.0, 1, dom.N, dom.d)
    m, _ = sample_equilibrium(spec, model, tf, sweeps, seed, burn_in).m_star_estimate()
    return m


def ls_reference(spec: GibbsSpec, rates: RateModel, tf: YauTestFunction, iterations: int = 300,
                 seed: int = 0, n_random: int = 2):
    """Numerically maximized ``Ent(g^2) / E(g)`` on the exact generator, started from ``f``.

    Any ``g`` gives a lower bound on the log-Sobolev constant; starting at
    ``f`` guarantees the result is at least the ratio of ``f`` itself.
    """
    from .functional import maximize_ls_ratio
    from .lattice import exact_generator

    gen = exact_generator(spec, RateModel(rates.kind, spec.beta))
    grid = tf.grid(spec.domain)
    lf = log_f_batch(gen.states, grid, tf)
    f0 = np.exp(lf - lf.max())
    return maximize_ls_ratio(gen.mu, gen.edges(), [f0], iterations, stream(seed), n_random)
