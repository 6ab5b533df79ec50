"""Single-site flip-rate families."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

HEAT_BATH = "heat-bath"
METROPOLIS = "metropolis"
KINDS = (HEAT_BATH, METROPOLIS)


@dataclass(frozen=True)
class RateModel:
    """Flip rate ``c_x(sigma)`` as a function of ``dH = 2 sigma_x h_x``.

    heat-bath: ``1 / (1 + exp(beta dH))``; metropolis: ``min(1, exp(-beta dH))``.
    Both are bounded by 1, which the uniformized kernels rely on.
    """

    kind: str
    beta: float

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown rate model {self.kind!r}; expected one of {KINDS}")
        if not self.beta >= 0:
            raise ValueError(f"beta must be >= 0, got {self.beta}")

    @property
    def code(self) -> int:
        return KINDS.index(self.kind)

    @property
    def monotone(self) -> bool:
        return self.kind == HEAT_BATH

    def rate(self, delta_h):
        dh = np.asarray(delta_h, dtype=float)
        if self.kind == HEAT_BATH:
            return expit(-self.beta * dh)
        return np.minimum(1.0, np.exp(-self.beta * dh))

    def log_rate(self, delta_h):
        dh = np.asarray(delta_h, dtype=float)
        if self.kind == HEAT_BATH:
            return -np.logaddexp(0.0, self.beta * dh)
        return np.minimum(0.0, -self.beta * dh)

    def bound(self, d: int) -> float:
        """The constant ``k = 1 + exp(4 d beta)`` with ``1/k <= c <= k``."""
        return 1.0 + float(np.exp(4 * d * self.beta))

    def plus_table(self, d: int) -> np.ndarray:
        """``P[new spin = +1 | old spin, field]`` for a unit-rate clock ring.

        Row 0 is old spin -1, row 1 old spin +1; column ``j`` is field ``2j - 2d``.
        """
        h = np.arange(-2 * d, 2 * d + 1, 2, dtype=float)
        up_from_minus = self.rate(-2.0 * h)  # dH for sigma = -1 is -2h
        stay_plus = 1.0 - self.rate(2.0 * h)
        return np.vstack([up_from_minus, stay_plus])

    def class_rates(self, d: int) -> np.ndarray:
        """Flip rate of each (spin, field) class, same layout as :meth:`plus_table`."""
        h = np.arange(-2 * d, 2 * d + 1, 2, dtype=float)
        return np.vstack([self.rate(-2.0 * h), self.rate(2.0 * h)])
