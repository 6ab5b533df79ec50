"""Command-line driver.

Usage::

    kinising <subcommand> [--config FILE] [--seed SEED] [--out PATH] [key=value ...]

Settings are resolved in increasing priority: built-in defaults, the
``key = value`` config file, ``key=value`` arguments, then ``--seed`` and
``--out``.  Exit codes: 0 success, 1 configuration error, 2 numerical
degeneracy, 3 I/O error.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import math
import sys
from dataclasses import dataclass, fields

import numpy as np

from . import __version__
from .csvio import Column, CSVWriteError, Schema, emit_csv
from .lattice import NumericalDegeneracyError

log = logging.getLogger("kinising")

EXIT_OK, EXIT_CONFIG, EXIT_DEGENERATE, EXIT_IO = 0, 1, 2, 3

SUBCOMMANDS = ("bd-gap", "bd-scaling", "bd-hit", "ising-sample", "ising-bound", "ising-couple", "ising-droplet")

# grids used when N_grid / t_grid are left empty
DEFAULT_N_GRIDS = {
    ("bd-gap", 2): "1,2,4,8,16,32,64",
    ("bd-gap", 3): "1,2,4,8,16",
    ("bd-scaling", 2): "8,12,16,24,32,48,64",
    ("bd-scaling", 3): "4,6,8,10,12,14,16",
    ("bd-hit", 2): "8,12,16,24,32,48,64",
    ("bd-hit", 3): "4,6,8,10,12,14,16",
    ("ising-droplet", 2): "16,32,64",
    ("ising-droplet", 3): "4,6,8",
}
DEFAULT_T_GRIDS = {
    "ising-couple": "0,0.5,1,2,4,8,16,32",
    "ising-droplet": "0,10,20,40,60,80,100,150,200,300,400,600,800,1200,1600,2000,3000,4000,6000",
}


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    """Every run parameter with its default.

    ``N_grid`` and ``t_grid`` are comma-separated lists (empty picks a
    per-subcommand grid); ``K = 0`` selects the side ``ceil((b log N)^(1/gamma))``;
    ``m_star`` is ``exact`` (square-lattice closed form), ``mcmc`` (centre
    magnetization of a plus-boundary run) or a number; ``sweeps`` and
    ``burn_in`` count sweeps of ``N^d`` updates; ``horizon > 0`` with an
    empty ``t_grid`` gives 21 equally spaced times on ``[0, horizon]``.
    """

    experiment: str = ""
    d: int = 2
    N: int = 3
    N_grid: str = ""
    beta: float = 0.6
    K: int = 0
    b: float = 2.0
    gamma: float = 1.0
    m_star: str = "exact"
    lam: float = 1.0
    rates: str = "heat-bath"
    method: str = "tilted"
    tilt: float = 3.0
    sweeps: int = 100000
    burn_in: int = 1000
    horizon: float = 0.0
    t_grid: str = ""
    replicas: int = 20
    eq_burn_in: float = 200.0
    iterations: int = 300
    runs: int = 0
    seed: int = 0
    out: str = ""

    @classmethod
    def keys(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    def update(self, values: dict, source: str) -> RunConfig:
        types = {f.name: f.type for f in fields(self)}
        out = dataclasses.replace(self)
        for k, v in values.items():
            if k not in types:
                raise ConfigError(f"unknown key {k!r} in {source}")
            conv = {"int": int, "float": float, "str": str}[types[k]]
            try:
                setattr(out, k, conv(v))
            except ValueError as exc:
                raise ConfigError(f"bad value for {k!r} in {source}: {v!r}") from exc
        return out

    def validate(self) -> None:
        if self.experiment not in SUBCOMMANDS:
            raise ConfigError(f"unknown experiment {self.experiment!r}")
        if self.d < 2:
            raise ConfigError("d must be >= 2")
        if self.experiment.startswith("ising") and self.d not in (2, 3):
            raise ConfigError("Ising experiments support d = 2 or 3")
        if self.N < 1:
            raise ConfigError("N must be >= 1")
        if self.horizon < 0:
            raise ConfigError("horizon must be >= 0")
        if self.beta < 0:
            raise ConfigError("beta must be >= 0")
        if self.rates not in ("heat-bath", "metropolis"):
            raise ConfigError(f"unknown rate model {self.rates!r}")
        if self.method not in ("tilted", "direct"):
            raise ConfigError(f"unknown sampling method {self.method!r}")
        if self.lam <= 0:
            raise ConfigError("lam must be positive")
        if self.sweeps < 50 or self.replicas < 1 or self.burn_in < 0:
            raise ConfigError("need sweeps >= 50, replicas >= 1, burn_in >= 0")
        self.n_grid()
        self.times()
        if self.m_star not in ("exact", "mcmc"):
            try:
                m = float(self.m_star)
            except ValueError as exc:
                raise ConfigError(f"m_star must be 'exact', 'mcmc' or a number, got {self.m_star!r}") from exc
            if not 0 < m <= 1:
                raise ConfigError("m_star must lie in (0, 1]")

    def n_grid(self) -> list[int]:
        text = self.N_grid or DEFAULT_N_GRIDS.get((self.experiment, self.d), "") or str(self.N)
        try:
            grid = [int(x) for x in text.split(",") if x.strip()]
        except ValueError as exc:
            raise ConfigError(f"bad N_grid {text!r}") from exc
        if not grid or min(grid) < 1:
            raise ConfigError(f"bad N_grid {text!r}")
        return grid

    def times(self) -> list[float]:
        if not self.t_grid and self.horizon > 0:
            return [float(t) for t in np.linspace(0.0, self.horizon, 21)]
        text = self.t_grid or DEFAULT_T_GRIDS.get(self.experiment, "")
        try:
            grid = [float(x) for x in text.split(",") if x.strip()]
        except ValueError as exc:
            raise ConfigError(f"bad t_grid {text!r}") from exc
        if any(t < 0 for t in grid):
            raise ConfigError("times must be >= 0")
        return grid

    def as_meta(self) -> dict:
        meta = {"tool": f"kinising {__version__}"}
        meta.update({f"config.{k}": getattr(self, k) for k in self.keys()})
        return meta


def parse_config_file(path: str) -> dict:
    values = {}
    try:
        with open(path) as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    for n, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{n}: expected key = value")
        k, v = (s.strip() for s in line.split("=", 1))
        values[k] = v
    return values


def parse_overrides(items) -> dict:
    values = {}
    for item in items:
        if "=" not in item:
            raise ConfigError(f"expected key=value, got {item!r}")
        k, v = item.split("=", 1)
        values[k.strip()] = v.strip()
    return values


def resolve_config(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig(experiment=args.subcommand)
    if args.config:
        cfg = cfg.update(parse_config_file(args.config), args.config)
    cfg = cfg.update(parse_overrides(args.overrides), "command line")
    if "experiment" in parse_overrides(args.overrides) and cfg.experiment != args.subcommand:
        raise ConfigError("experiment must match the subcommand")
    cfg.experiment = args.subcommand
    flags = {}
    if args.seed is not None:
        flags["seed"] = args.seed
    if args.out is not None:
        flags["out"] = args.out
    cfg = cfg.update(flags, "flags")
    if not cfg.out:
        cfg.out = f"{cfg.experiment}.csv"
    cfg.validate()
    return cfg


# experiment runners: each returns (schema, rows, degenerate)

def _rate_model(cfg):
    from .rates import RateModel
    return RateModel(cfg.rates, cfg.beta)


def _resolve_m_star(cfg, spec, model) -> float:
    from .coarse import spontaneous_magnetization_2d
    from .yau import estimate_m_star
    if cfg.m_star == "exact":
        if cfg.d != 2:
            raise ConfigError("m_star=exact is only available for d = 2")
        m = spontaneous_magnetization_2d(cfg.beta)
        if m <= 0:
            raise ConfigError("beta is not in the ordered phase; set m_star to a number or 'mcmc'")
        return m
    if cfg.m_star == "mcmc":
        m = estimate_m_star(spec, model, max(cfg.sweeps // 10, 1000), cfg.seed, cfg.burn_in)
        if not 0 < m <= 1:
            raise NumericalDegeneracyError(f"MCMC centre magnetization {m:.4g} is not a usable m*")
        return m
    return float(cfg.m_star)


def run_bd_gap(cfg):
    from .birth_death import build_chain, exact_inverse_gap, hardy_report
    schema = Schema(Column("d", "1", int), Column("N", "1", int), Column("n_states", "1", int),
                    Column("S", "time"), Column("B", "time"), Column("A", "time"),
                    Column("anchor_B", "state", int), Column("sandwich", "-", str))
    rows = []
    for N in cfg.n_grid():
        ch = build_chain(cfg.d, N)
        rep = hardy_report(ch)
        S = exact_inverse_gap(ch)
        ok = rep.B / 2 - 1e-9 <= S <= 4 * rep.B + 1e-9
        rows.append({"d": cfg.d, "N": N, "n_states": ch.n_states, "S": S, "B": rep.B, "A": rep.A,
                     "anchor_B": rep.gap.anchor, "sandwich": "PASS" if ok else "FAIL"})
    return schema, rows, False


_REGRESSION = Schema(Column("record", "-", str), Column("quantity", "-", str), Column("N", "1", int),
                     Column("value", "-"), Column("stderr", "-"), Column("ci_low", "-"), Column("ci_high", "-"))


def _slope_row(name, fit):
    return {"record": "slope", "quantity": name, "value": fit.slope, "stderr": fit.stderr,
            "ci_low": fit.ci_low, "ci_high": fit.ci_high}


def run_bd_scaling(cfg):
    from .birth_death import scaling_experiment
    rep = scaling_experiment(cfg.d, cfg.n_grid())
    rows = []
    for r in rep.rows:
        for q in ("S", "B", "A", "hitting"):
            rows.append({"record": "value", "quantity": q, "N": r.N, "value": getattr(r, q)})
    for q, fit in rep.slopes.items():
        rows.append(_slope_row(q, fit))
    rows.append({"record": "ratio", "quantity": "S_max_over_min", "value": rep.S_ratio})
    return _REGRESSION, rows, False


def run_bd_hit(cfg):
    from .birth_death import build_chain, empirical_hitting_times, expected_hitting_time
    from .stats import loglog_slope
    grid = cfg.n_grid()
    rows, exact = [], []
    for N in grid:
        ch = build_chain(cfg.d, N)
        t = expected_hitting_time(ch, ch.top)
        exact.append(t)
        rows.append({"record": "value", "quantity": "expected_hitting", "N": N, "value": t})
        if cfg.runs > 0:
            h = empirical_hitting_times(ch, ch.top, cfg.runs, cfg.seed + N)
            se = h.std(ddof=1) / math.sqrt(h.shape[0]) if h.shape[0] > 1 else math.nan
            rows.append({"record": "value", "quantity": "empirical_hitting", "N": N, "value": h.mean(), "stderr": se})
    if len(grid) >= 3:
        rows.append(_slope_row("expected_hitting", loglog_slope(grid, exact)))
    return _REGRESSION, rows, False


def _ising_setup(cfg):
    from .lattice import GibbsSpec, LatticeDomain
    from .yau import YauTestFunction
    spec = GibbsSpec(cfg.beta, LatticeDomain(cfg.d, cfg.N))
    model = _rate_model(cfg)
    m_star = _resolve_m_star(cfg, spec, model)
    if cfg.K > cfg.N:
        raise ConfigError("K must not exceed N")
    tf = YauTestFunction.for_domain(spec.domain, cfg.lam, m_star, cfg.K or None, cfg.b, cfg.gamma)
    return spec, model, tf


def run_ising_sample(cfg):
    from .yau import sample_equilibrium
    spec, model, tf = _ising_setup(cfg)
    s = sample_equilibrium(spec, model, tf, cfg.sweeps, cfg.seed, cfg.burn_in)
    from .stats import batch_means
    schema = Schema(Column("quantity", "-", str), Column("index", "1", int), Column("value", "1"),
                    Column("stderr", "1"))
    rows = []
    for name, x in (("magnetization", s.magnetization), ("center_spin", s.center),
                    ("bad_blocks", s.bad), ("minus_blocks", s.minus), ("ramp_blocks", s.ramp)):
        m, se = batch_means(x)
        rows.append({"quantity": name, "value": m, "stderr": se})
    rows.append({"quantity": "m_star_used", "value": tf.m_star})
    for name, hist in s.label_histogram().items():
        for k, c in enumerate(hist):
            rows.append({"quantity": f"{name}_count_frequency", "index": k, "value": c / s.magnetization.shape[0]})
    return schema, rows, False


def run_ising_bound(cfg):
    from .lattice import MAX_ENUM_SITES, MAX_GENERATOR_SITES, exact_generator
    from .lattice import exact_inverse_gap as ising_gap
    from .yau import estimate_moments, exact_moments, gap_lower_bound, ls_lower_bound, ls_reference
    spec, model, tf = _ising_setup(cfg)
    n = spec.domain.n_sites
    schema = Schema(Column("source", "-", str), Column("kind", "-", str), Column("form", "-", str),
                    Column("bound", "time"), Column("bound_se", "time"), Column("exact", "time"),
                    Column("exact_kind", "-", str), Column("ess", "1"), Column("within", "-", str))
    gap_ref = ls_ref = None
    if n <= MAX_GENERATOR_SITES:
        gap_ref = ising_gap(exact_generator(spec, model))
        ls_ref = ls_reference(spec, model, tf, cfg.iterations, cfg.seed).value
    sources = [("mcmc", estimate_moments(spec, model, tf, cfg.sweeps, cfg.seed, cfg.burn_in,
                                          method=cfg.method, tilt=cfg.tilt))]
    if n <= MAX_ENUM_SITES:
        sources.append(("enumeration", exact_moments(spec, model, tf)))
    rows, degenerate = [], False
    for src, mom in sources:
        for kind, fn, ref, ref_kind in (("gap", gap_lower_bound, gap_ref, "inverse_gap"),
                                        ("log_sobolev", ls_lower_bound, ls_ref, "maximized_ls_ratio")):
            for form in ("unit", "generator"):
                be = fn(mom, form)
                row = {"source": src, "kind": kind, "form": form, "ess": None if mom.exact else be.ess}
                if be.ratio is None:
                    degenerate = True
                    row["status"] = "degenerate"
                else:
                    row.update(bound=be.ratio, bound_se=0.0 if mom.exact else be.ratio_se)
                    if be.flagged:
                        row["status"] = "flagged"
                if ref is not None:
                    row.update(exact=ref, exact_kind=ref_kind)
                    if be.ratio is not None:
                        slack = 3 * row["bound_se"]
                        row["within"] = "PASS" if be.ratio <= ref * (1 + 1e-9) + slack else "FAIL"
                rows.append(row)
    return schema, rows, degenerate


def run_ising_couple(cfg):
    from .glauber import agreement_experiment
    from .lattice import GibbsSpec, LatticeDomain
    if cfg.rates != "heat-bath":
        raise ConfigError("ising-couple uses the heat-bath grand coupling")
    spec = GibbsSpec(cfg.beta, LatticeDomain(cfg.d, cfg.N))
    res = agreement_experiment(spec, _rate_model(cfg), cfg.times(), cfg.replicas, cfg.seed, cfg.eq_burn_in)
    schema = Schema(Column("t", "time"), Column("disagreement", "1"), Column("stderr", "1"),
                    Column("replicas", "1", int), Column("plus_fraction", "1"))
    rows = [dict(r, replicas=res.replicas, plus_fraction=res.plus_fraction) for r in res.rows()]
    return schema, rows, False


def run_ising_droplet(cfg):
    from .yau import droplet_relaxation_experiment
    if cfg.rates != "heat-bath":
        raise ConfigError("ising-droplet uses heat-bath rates")
    if cfg.m_star == "mcmc":
        raise ConfigError("ising-droplet needs m_star=exact or a number")
    m_star = None if cfg.m_star == "exact" else float(cfg.m_star)
    curves = droplet_relaxation_experiment(cfg.beta, _rate_model(cfg), cfg.n_grid(), cfg.times(), cfg.replicas,
                                           cfg.seed, cfg.lam, m_star, cfg.d,
                                           cfg.b, cfg.gamma, cfg.eq_burn_in)
    schema = Schema(Column("record", "-", str), Column("N", "1", int), Column("K", "1", int), Column("t", "time"),
                    Column("mean_log_psi", "1"), Column("stderr", "1"), Column("eq_mean_log_psi", "1"),
                    Column("eq_stderr", "1"))
    rows = []
    for c in curves:
        for t, m, s in zip(c.times, c.mean_log_psi, c.se_log_psi):
            rows.append({"record": "curve", "N": c.N, "K": c.K, "t": t, "mean_log_psi": m, "stderr": s,
                         "eq_mean_log_psi": c.eq_mean, "eq_stderr": c.eq_se})
        ct = c.crossing_time
        rows.append({"record": "crossing", "N": c.N, "K": c.K, "t": ct,
                     "status": "ok" if math.isfinite(ct) else "not_crossed"})
    return schema, rows, False


RUNNERS = {
    "bd-gap": run_bd_gap, "bd-scaling": run_bd_scaling, "bd-hit": run_bd_hit,
    "ising-sample": run_ising_sample, "ising-bound": run_ising_bound,
    "ising-couple": run_ising_couple, "ising-droplet": run_ising_droplet,
}


def run(cfg: RunConfig) -> int:
    """Run one experiment and write its CSV; returns the exit status."""
    schema, rows, degenerate = RUNNERS[cfg.experiment](cfg)
    emit_csv(rows, schema, cfg.out, cfg.as_meta())
    return EXIT_DEGENERATE if degenerate else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="kinising", description="Glauber-dynamics and birth-death experiments.",
                                epilog="Configuration keys: " + ", ".join(RunConfig.keys()[1:]))
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="subcommand", required=True)
    for name in SUBCOMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", help="key = value file")
        s.add_argument("--seed", type=int, help="master seed (overrides the config)")
        s.add_argument("--out", help="output CSV path (default <subcommand>.csv)")
        s.add_argument("overrides", nargs="*", metavar="key=value")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = resolve_config(args)
        log.info("running %s -> %s", cfg.experiment, cfg.out)
        with np.errstate(all="ignore"):
            return run(cfg)
    except NumericalDegeneracyError as exc:
        print(f"numerical degeneracy: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE
    except (CSVWriteError, OSError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:  # ConfigError and invalid model parameters
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
