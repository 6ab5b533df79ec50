"""Variance, entropy and Dirichlet forms of functions on a finite reversible chain.

A chain is described by its stationary law ``mu`` and an edge list
``(i, j, w)`` with ``w = mu_i Q_ij = mu_j Q_ji``, so the Dirichlet form is
``E(f) = sum_edges w (f_i - f_j)^2``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

__all__ = ["variance", "entropy", "dirichlet", "gap_ratio", "ls_ratio", "LSMaximum", "maximize_ls_ratio"]


def variance(mu, f) -> float:
    mu = np.asarray(mu, dtype=float)
    f = np.asarray(f, dtype=float)
    m = mu @ f
    return float(mu @ (f - m) ** 2)


def entropy(mu, h) -> float:
    """``Ent(h) = mu(h log h) - mu(h) log mu(h)`` for ``h >= 0``."""
    mu = np.asarray(mu, dtype=float)
    h = np.asarray(h, dtype=float)
    m = float(mu @ h)
    if m <= 0:
        return 0.0
    x = h / m
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(x > 0, x * np.log(x), 0.0)
    return max(float(mu @ t) * m, 0.0)


def dirichlet(edges, f) -> float:
    i, j, w = edges
    f = np.asarray(f, dtype=float)
    return float(w @ (f[i] - f[j]) ** 2)


def _ratio(num: float, den: float) -> float:
    if den > 0:
        return num / den
    return math.nan if num <= 0 else math.inf


def gap_ratio(mu, edges, f) -> float:
    """``var(f) / E(f)``; NaN for constant ``f``."""
    return _ratio(variance(mu, f), dirichlet(edges, f))


def ls_ratio(mu, edges, f) -> float:
    """``Ent(f^2) / E(f)``; any ``f`` gives a lower bound on the log-Sobolev constant."""
    return _ratio(entropy(mu, np.asarray(f, dtype=float) ** 2), dirichlet(edges, f))


@dataclass
class LSMaximum:
    value: float
    f: np.ndarray
    start_values: list
    n_starts: int


def _objective(h, mu, ei, ej, w):
    """``-log Ent(f^2) + log E(f)`` with ``f = exp(h)`` and its gradient in ``h``."""
    f = np.exp(h - h.max())
    F = f * f
    m = mu @ F
    x = F / m
    ent = m * float(mu @ (x * np.log(np.maximum(x, 1e-300))))
    df = f[ei] - f[ej]
    E = float(w @ (df * df))
    if not (ent > 0 and E > 0):
        return math.inf, np.zeros_like(h)
    g_ent = 2.0 * F * mu * np.log(np.maximum(x, 1e-300))
    gf = np.zeros_like(h)
    np.add.at(gf, ei, 2.0 * w * df)
    np.add.at(gf, ej, -2.0 * w * df)
    g_E = f * gf
    return -math.log(ent) + math.log(E), -g_ent / ent + g_E / E


def maximize_ls_ratio(mu, edges, starts, iterations: int = 500, rng: np.random.Generator | None = None,
                      n_random: int = 0) -> LSMaximum:
    """Maximize ``Ent(f^2) / E(f)`` over positive ``f`` from several starts.

    The search runs L-BFGS-B on ``log f``.  The ratio is invariant under
    ``f -> c f`` and ``Ent(|f|^2) / E(|f|) >= Ent(f^2) / E(f)``, so positive
    functions lose nothing.  Starts must be strictly positive.
    """
    mu = np.asarray(mu, dtype=float)
    ei, ej, w = (np.asarray(a) for a in edges)
    starts = [np.asarray(s, dtype=float) for s in starts]
    if rng is not None:
        starts += [np.exp(rng.normal(size=mu.shape[0])) for _ in range(n_random)]
    best_val, best_f, vals = -math.inf, None, []
    for s in starts:
        if np.any(s <= 0):
            raise ValueError("starting functions must be strictly positive")
        h0 = np.log(s)
        r0 = ls_ratio(mu, edges, s)
        r0 = r0 if np.isfinite(r0) else -math.inf
        res = minimize(_objective, h0, args=(mu, ei, ej, w), jac=True, method="L-BFGS-B",
                       options={"maxiter": iterations})
        f = np.exp(res.x - res.x.max())
        r = ls_ratio(mu, edges, f)
        cand, val = (f, r) if np.isfinite(r) and r >= r0 else (s, r0)
        vals.append(val)
        if val > best_val:
            best_val, best_f = val, cand
    return LSMaximum(float(best_val), best_f, vals, len(starts))
