"""Taste distributions for synthetic populations.

Each distribution maps a uniform draw to a taste through its quantile
function, so the population is a deterministic function of the counter-based
uniforms in :mod:`feedsim.rng`.
"""
from dataclasses import dataclass

import numpy as np
from scipy import special, stats

P_MIN = 1e-6
P_MAX = 1.0 - 1e-6


def _clip(p):
    # tastes must stay strictly inside (0, 1) for the log terms
    return np.clip(p, P_MIN, P_MAX)


@dataclass(frozen=True)
class Degenerate:
    value: float

    def ppf(self, u):
        return _clip(np.full(np.shape(u), float(self.value)))

    def mean(self):
        return float(self.value)

    def spec(self):
        return f"degenerate:{self.value!r}"


@dataclass(frozen=True)
class Uniform:
    lo: float
    hi: float

    def ppf(self, u):
        return _clip(self.lo + (self.hi - self.lo) * np.asarray(u, dtype=float))

    def mean(self):
        return 0.5 * (self.lo + self.hi)

    def spec(self):
        return f"uniform:{self.lo!r},{self.hi!r}"


@dataclass(frozen=True)
class ScaledBeta:
    """Beta(a, b) stretched onto [lo, hi]."""

    a: float
    b: float
    lo: float = 0.0
    hi: float = 1.0

    def ppf(self, u):
        x = special.betaincinv(self.a, self.b, np.asarray(u, dtype=float))
        return _clip(self.lo + (self.hi - self.lo) * x)

    def mean(self):
        return self.lo + (self.hi - self.lo) * self.a / (self.a + self.b)

    def spec(self):
        return f"beta:{self.a!r},{self.b!r},{self.lo!r},{self.hi!r}"


@dataclass(frozen=True)
class TruncatedGumbel:
    """Gumbel (maximum) distribution truncated to ``[lo, hi]`` and renormalised."""

    loc: float
    scale: float
    lo: float = 0.0
    hi: float = 1.0

    def _cdf_bounds(self):
        g = stats.gumbel_r(self.loc, self.scale)
        return g, g.cdf(self.lo), g.cdf(self.hi)

    def ppf(self, u):
        g, c0, c1 = self._cdf_bounds()
        return _clip(g.ppf(c0 + (c1 - c0) * np.asarray(u, dtype=float)))

    def cdf(self, x):
        g, c0, c1 = self._cdf_bounds()
        x = np.clip(np.asarray(x, dtype=float), self.lo, self.hi)
        return (g.cdf(x) - c0) / (c1 - c0)

    def pdf(self, x):
        g, c0, c1 = self._cdf_bounds()
        x = np.asarray(x, dtype=float)
        inside = (x >= self.lo) & (x <= self.hi)
        return np.where(inside, g.pdf(x) / (c1 - c0), 0.0)

    def mean(self):
        from scipy import integrate

        return integrate.quad(lambda x: x * float(self.pdf(x)), self.lo, self.hi, limit=200)[0]

    def spec(self):
        return f"gumbel:{self.loc!r},{self.scale!r},{self.lo!r},{self.hi!r}"


def parse_taste(text):
    """Build a distribution from ``kind:arg,arg,...``.

    >>> round(parse_taste("beta:2,23,0.005,0.6").mean(), 4)
    0.0526
    """
    kind, _, rest = text.strip().partition(":")
    args = [float(x) for x in rest.split(",") if x.strip()]
    kinds = {
        "degenerate": (Degenerate, 1, 1),
        "uniform": (Uniform, 2, 2),
        "beta": (ScaledBeta, 2, 4),
        "gumbel": (TruncatedGumbel, 2, 4),
    }
    if kind not in kinds:
        raise ValueError(f"unknown taste distribution {kind!r}")
    cls, lo, hi = kinds[kind]
    if not lo <= len(args) <= hi:
        raise ValueError(f"{kind} takes {lo} to {hi} arguments, got {len(args)}")
    return cls(*args)


# mean 0.074, the control toxic-view share; right-skewed with a long tail
DEFAULT_TASTE = ScaledBeta(1.0, 24.2941, 0.04, 0.9)
