"""Method of simulated moments for (alpha, beta, eta, delta) given theta.

Six moments are matched: the means of the toxic share proportion, views and
shares among treated users in the intervention period, separately for users
below and above the median baseline exposure.  The model counterparts
integrate the closed-form best responses at ``q = q_bar`` against a Gumbel
density for baseline exposure, truncated to (0, 1), with 256-node
Gauss-Legendre quadrature on each side of the median.
"""
import math
import warnings
from functools import lru_cache
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .behavior import UtilityParams
from .distributions import TruncatedGumbel
from .optimize import NelderMeadOptions, nelder_mead
from .simulator import TREATED

MOMENT_NAMES = ["s_low", "N_low", "S_low", "s_high", "N_high", "S_high"]
PARAM_NAMES = ["alpha", "beta", "eta", "delta"]
N_NODES = 256
EULER_GAMMA = 0.5772156649015329


@dataclass(frozen=True)
class MomentVector:
    s_low: float
    N_low: float
    S_low: float
    s_high: float
    N_high: float
    S_high: float

    def as_array(self):
        return np.array([getattr(self, k) for k in MOMENT_NAMES])

    @classmethod
    def from_array(cls, a):
        return cls(*map(float, a))


@dataclass(frozen=True)
class ExposureModel:
    """Exposure density used inside the moment integrals."""

    dist: TruncatedGumbel
    q_bar: float

    @property
    def median(self):
        return _median(self.dist)


@lru_cache(maxsize=64)
def _median(dist):
    return float(dist.ppf(0.5))


def fit_gumbel(mean, var, lo=0.0, hi=1.0):
    """Gumbel location and scale with the given mean and variance, truncated to ``[lo, hi]``."""
    if not var > 0:
        raise ValueError("variance must be positive")
    scale = math.sqrt(6.0 * var) / math.pi
    return TruncatedGumbel(mean - EULER_GAMMA * scale, scale, lo, hi)


def exposure_model(panel, noise_correct=True):
    """Fit the exposure density to baseline ``v_t``.

    With ``noise_correct`` the binomial sampling variance, estimated by
    ``v (1 - v) / (views - 1)``, is removed before matching the variance.
    """
    base = panel[(panel["period"] == 0) & panel["v_t"].notna()]
    v = base["v_t"].to_numpy(dtype=float)
    n = base["views"].to_numpy(dtype=float)
    var = v.var()
    if noise_correct:
        ok = n > 1
        var -= np.mean(v[ok] * (1 - v[ok]) / (n[ok] - 1))
    q_bar = float(base.loc[base["arm"] != TREATED, "v_t"].mean())
    return ExposureModel(fit_gumbel(float(v.mean()), float(max(var, 1e-12))), q_bar)


def empirical_moments(panel, posts_per_view_unit=1.0):
    """Group means among treated users in period 1, split at the median baseline exposure.

    Views and shares are divided by ``posts_per_view_unit`` to put them in
    model units.  Users below or at the median form the low group.
    """
    base = panel[(panel["period"] == 0) & (panel["arm"] == TREATED)].set_index("user_id")
    post = panel[(panel["period"] == 1) & (panel["arm"] == TREATED)].set_index("user_id")
    v0 = base["v_t"].reindex(post.index)
    ok = v0.notna()
    post, v0 = post[ok], v0[ok]
    m = float(np.median(v0))
    out = []
    for mask in (v0 <= m, v0 > m):
        g = post[mask.to_numpy()]
        if len(g) == 0:
            raise ValueError("a median group is empty")
        out += [float(g["s_t"].mean()), float(g["views"].mean()) / posts_per_view_unit,
                float(g["shares"].mean()) / posts_per_view_unit]
    return MomentVector(*out)


@lru_cache(maxsize=64)
def _group_nodes(dist, a, b, n=N_NODES):
    """Nodes and density-weighted quadrature weights on ``[a, b]``; cached per density."""
    x, w = np.polynomial.legendre.leggauss(n)
    xs = 0.5 * (b - a) * x + 0.5 * (b + a)
    ws = 0.5 * (b - a) * w * dist.pdf(xs)
    xs.setflags(write=False)
    ws.setflags(write=False)
    return xs, ws


def _model_outcomes(params, theta, q, v):
    a, b, e, d = params
    gap = np.log(q / v) ** 2
    n_raw = (b * (a + e) - d * a * theta * (1 - theta) * gap) / (2 * a * e)
    s_raw = (2 * n_raw * a - d * theta * (1 - theta) * gap) / (2 * (e + a))
    stay = (n_raw > 0) & (s_raw > 0)
    s_frac = q**theta * v ** (1 - theta)
    return s_frac, np.where(stay, n_raw, 0.0), np.where(stay, s_raw, 0.0), stay


def simulated_moments(params, theta, exposure, n_nodes=N_NODES):
    """Model moments by Gauss-Legendre quadrature on each side of the median.

    ``params`` is ``(alpha, beta, eta, delta)`` or a :class:`UtilityParams`.
    The share proportion is averaged over users who still share, matching
    the empirical convention that it is undefined for zero shares.
    """
    if isinstance(params, UtilityParams):
        params = (params.alpha, params.beta, params.eta, params.delta)
    params = tuple(float(x) for x in params)
    if min(params) <= 0:
        raise ValueError("parameters must be positive")
    dist = exposure.dist
    m = exposure.median
    out = []
    for lo, hi in ((dist.lo, m), (m, dist.hi)):
        xs, ws = _group_nodes(dist, lo, hi, n_nodes)
        s, n, sh, stay = _model_outcomes(params, theta, exposure.q_bar, np.clip(xs, 1e-12, None))
        mass = ws.sum()
        ws_stay = ws * stay
        s_mean = (ws_stay @ s) / ws_stay.sum() if ws_stay.sum() > 0 else np.nan
        out += [float(s_mean), float(ws @ n / mass), float(ws @ sh / mass)]
    return MomentVector(*out)


def monte_carlo_moments(params, theta, exposure, n_draws, rng):
    """Same moments by simulation; the independent check on the quadrature."""
    if isinstance(params, UtilityParams):
        params = (params.alpha, params.beta, params.eta, params.delta)
    v = exposure.dist.ppf(rng.random(n_draws))
    m = exposure.median
    s, n, sh, stay = _model_outcomes(tuple(map(float, params)), theta, exposure.q_bar, v)
    out = []
    for g in (v <= m, v > m):
        out += [float(s[g & stay].mean()), float(n[g].mean()), float(sh[g].mean())]
    return MomentVector(*out)


def msm_objective(candidate, theta, empirical, exposure):
    """Sum of squared relative deviations between simulated and empirical moments."""
    emp = empirical.as_array() if isinstance(empirical, MomentVector) else np.asarray(empirical, float)
    keep = emp != 0
    if not keep.all():
        warnings.warn("zero empirical moments dropped from the objective", RuntimeWarning, stacklevel=2)
    sim = simulated_moments(candidate, theta, exposure).as_array()
    dev = sim[keep] / emp[keep] - 1.0
    if not np.all(np.isfinite(dev)):
        return np.inf
    return float(dev @ dev)


@dataclass(frozen=True)
class CalibratedParams:
    alpha: float
    beta: float
    eta: float
    delta: float
    objective_value: float
    iterations: int
    converged: bool
    fitted: MomentVector = field(compare=False)
    empirical: MomentVector = field(compare=False)

    def as_tuple(self):
        return (self.alpha, self.beta, self.eta, self.delta)

    def report(self):
        """Rows for the calibration report CSV."""
        rows = [dict(kind="parameter", name=k, value=v, empirical=np.nan, relative_error=np.nan)
                for k, v in zip(PARAM_NAMES, self.as_tuple())]
        rows += [dict(kind="summary", name="objective", value=self.objective_value, empirical=np.nan,
                      relative_error=np.nan),
                 dict(kind="summary", name="iterations", value=float(self.iterations), empirical=np.nan,
                      relative_error=np.nan),
                 dict(kind="summary", name="converged", value=float(self.converged), empirical=np.nan,
                      relative_error=np.nan)]
        for k, fv, ev in zip(MOMENT_NAMES, self.fitted.as_array(), self.empirical.as_array()):
            rows.append(dict(kind="moment", name=k, value=fv, empirical=ev,
                             relative_error=fv / ev - 1.0 if ev != 0 else np.nan))
        return pd.DataFrame(rows, columns=["kind", "name", "value", "empirical", "relative_error"])


def calibrate_moments(empirical, theta, exposure, x0=(1.0, 1.0, 1.0, 1.0), options=None):
    """Minimise the MSM objective over log-parameters with Nelder-Mead."""
    obj = lambda z: msm_objective(np.exp(z), theta, empirical, exposure)  # noqa: E731
    res = nelder_mead(obj, np.log(np.asarray(x0, dtype=float)), options or NelderMeadOptions())
    est = np.exp(res.x)
    fitted = simulated_moments(est, theta, exposure)
    return CalibratedParams(*map(float, est), res.fun, res.iterations, res.converged, fitted, empirical)


def calibrate(panel, theta, posts_per_view_unit=1.0, x0=(1.0, 1.0, 1.0, 1.0), options=None):
    exposure = exposure_model(panel)
    empirical = empirical_moments(panel, posts_per_view_unit)
    return calibrate_moments(empirical, theta, exposure, x0, options)


def profile_scale(empirical, theta, exposure, base, factors):
    """Objective along the ray scaling (beta, delta) jointly with (alpha, eta) held.

    Scaling beta and delta by the same factor moves every closed form
    proportionally, so a flat profile here would reveal a direction the
    moments cannot pin down.
    """
    a, b, e, d = base
    return np.array([msm_objective((a, b * k, e, d * k), theta, empirical, exposure) for k in factors])

