"""Closed-form user best responses and the platform's assignment rule.

A user with taste ``p`` who is shown a feed whose toxic share is ``q`` picks
the toxic share of their shares ``s``, the number of shares ``S`` and the number
of views ``N`` to maximise

    beta*N - alpha*(N - S)**2 - eta*S**2
        - delta*S*[(1 - theta)*log(s/p)**2 + theta*log(s/q)**2]

The closed forms below are the first-order conditions of that problem, and
:func:`utility` is kept around as the oracle they are checked against.  All
functions accept scalars or numpy arrays.
"""
from dataclasses import dataclass, field
from typing import Optional

import numpy as np


class DomainError(ValueError):
    """An argument that must lie strictly inside (0, 1) does not."""


def _open_unit(name, x):
    arr = np.asarray(x, dtype=float)
    if not np.all((arr > 0.0) & (arr < 1.0)):
        raise DomainError(f"{name} must lie strictly inside (0, 1), got {x!r}")
    return arr


@dataclass(frozen=True)
class UtilityParams:
    """Behavioural constants shared by every closed form.

    ``alpha`` penalises unshareable views, ``beta`` is the consumption value
    of a view, ``eta`` the convex sharing cost, ``delta`` the weight on
    conformity, ``theta`` the weight placed on the feed rather than on one's
    own taste, and ``mu`` the scale of the multiplicative preference shock on
    the share fraction.
    """

    alpha: float = 1.0
    beta: float = 2.0
    eta: float = 1.0
    delta: float = 12.0
    theta: float = 0.16
    mu: float = 0.1

    def __post_init__(self):
        for name in ("alpha", "beta", "eta", "delta"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be strictly positive, got {v!r}")
        if not (0.0 <= self.theta <= 1.0):
            raise ValueError(f"theta must lie in [0, 1], got {self.theta!r}")
        if not (np.isfinite(self.mu) and self.mu >= 0):
            raise ValueError(f"mu must be non-negative, got {self.mu!r}")
        # at the user's own equilibrium point q = p the mismatch terms vanish
        n_eq = self.beta * (self.alpha + self.eta) / (2 * self.alpha * self.eta)
        s_eq = n_eq * self.alpha / (self.alpha + self.eta)
        if not (n_eq > 0 and 0 <= s_eq <= n_eq):
            raise ValueError("parameters do not give 0 <= S <= N with N > 0 at q = p")

    def replace(self, **changes):
        values = {k: getattr(self, k) for k in ("alpha", "beta", "eta", "delta", "theta", "mu")}
        values.update(changes)
        return UtilityParams(**values)

    @property
    def equilibrium_views(self):
        return self.beta * (self.alpha + self.eta) / (2 * self.alpha * self.eta)

    @property
    def equilibrium_shares(self):
        return self.beta / (2 * self.eta)


@dataclass(frozen=True)
class UserTaste:
    p_t: float
    category: Optional[str] = None

    def __post_init__(self):
        _open_unit("p_t", self.p_t)


@dataclass(frozen=True)
class Exposure:
    q_t: float

    def __post_init__(self):
        _open_unit("q_t", self.q_t)


@dataclass(frozen=True)
class BehaviorOutcome:
    n_views: float
    n_shares: float
    share_frac_toxic: float
    toxic_shares: float
    toxic_views: float
    exited: bool = False
    raw_views: float = field(default=np.nan, compare=False)
    raw_shares: float = field(default=np.nan, compare=False)

    @property
    def view_frac_toxic(self):
        return self.toxic_views / self.n_views if self.n_views > 0 else np.nan


def _val(x, attr):
    return getattr(x, attr) if hasattr(x, attr) else x


def optimal_share_fraction(q, p, theta):
    """Toxic share of shares: the geometric mean ``q**theta * p**(1 - theta)``."""
    q = _open_unit("q", _val(q, "q_t"))
    p = _open_unit("p", _val(p, "p_t"))
    if not (0.0 <= theta <= 1.0):
        raise DomainError(f"theta must lie in [0, 1], got {theta!r}")
    out = q**theta * p ** (1.0 - theta)
    return float(out) if out.ndim == 0 else out


def mismatch(q, p):
    """Squared log distance between feed and taste."""
    q = _open_unit("q", _val(q, "q_t"))
    p = _open_unit("p", _val(p, "p_t"))
    return np.log(q / p) ** 2


def optimal_views(params, q, p):
    """Views N from the viewing first-order condition.

    The result is returned unclipped; a non-positive value means the user is
    in the region where the user leaves the platform.
    """
    a, b, e, d, t = params.alpha, params.beta, params.eta, params.delta, params.theta
    out = (b * (a + e) - d * a * t * (1.0 - t) * mismatch(q, p)) / (2.0 * a * e)
    return float(out) if np.ndim(out) == 0 else out


def optimal_shares(params, n_views, q, p):
    """Shares S given views N; unclipped like :func:`optimal_views`."""
    a, e, d, t = params.alpha, params.eta, params.delta, params.theta
    out = (2.0 * np.asarray(n_views, dtype=float) * a - d * t * (1.0 - t) * mismatch(q, p)) / (2.0 * (e + a))
    return float(out) if np.ndim(out) == 0 else out


def equilibrium_assignment(p):
    """The engagement-maximising feed composition is the user's own taste."""
    p = _open_unit("p", _val(p, "p_t"))
    return Exposure(float(p)) if p.ndim == 0 else p.copy()


def utility(params, s_frac, shares, views, q, p):
    """Full objective; exists to verify the closed forms numerically."""
    s_frac = _open_unit("s_frac", s_frac)
    q = _open_unit("q", _val(q, "q_t"))
    p = _open_unit("p", _val(p, "p_t"))
    a, b, e, d, t = params.alpha, params.beta, params.eta, params.delta, params.theta
    conform = (1.0 - t) * np.log(s_frac / p) ** 2 + t * np.log(s_frac / q) ** 2
    out = b * views - a * (views - shares) ** 2 - e * shares**2 - d * shares * conform
    return float(out) if np.ndim(out) == 0 else out


def _assemble(n_raw, s_raw, s_frac, q):
    exited = bool(n_raw <= 0 or s_raw <= 0)
    n = 0.0 if exited else float(n_raw)
    s = 0.0 if exited else float(s_raw)
    return BehaviorOutcome(
        n_views=n,
        n_shares=s,
        share_frac_toxic=float(s_frac),
        toxic_shares=float(s_frac) * s,
        toxic_views=float(q) * n,
        exited=exited,
        raw_views=float(n_raw),
        raw_shares=float(s_raw),
    )


def solve_user(params, q, p):
    """Compose share fraction, views and shares into one outcome.

    A user whose optimal N or S is non-positive has left: both are set to zero
    and ``exited`` is raised.
    """
    qv, pv = float(_val(q, "q_t")), float(_val(p, "p_t"))
    s_frac = optimal_share_fraction(qv, pv, params.theta)
    n_raw = optimal_views(params, qv, pv)
    s_raw = optimal_shares(params, n_raw, qv, pv)
    return _assemble(n_raw, s_raw, s_frac, qv)


def solve_users(params, q, p, theta=None):
    """Vectorised :func:`solve_user`.

    Returns ``(views, shares, share_frac, exited)`` arrays with exits already
    truncated to zero.  ``theta`` overrides ``params.theta`` when given.
    """
    if theta is not None:
        params = params.replace(theta=theta)
    q = np.asarray(q, dtype=float)
    p = np.asarray(p, dtype=float)
    s_frac = optimal_share_fraction(q, p, params.theta)
    n_raw = optimal_views(params, q, p)
    s_raw = optimal_shares(params, n_raw, q, p)
    exited = (n_raw <= 0) | (s_raw <= 0)
    views = np.where(exited, 0.0, n_raw)
    shares = np.where(exited, 0.0, s_raw)
    return views, shares, np.asarray(s_frac, dtype=float), exited


def share_view_elasticity(params, q, p):
    """Elasticity of optimal shares with respect to optimal views.

    Shares move one-for-one with views along ``dS/dN = alpha / (alpha + eta)``,
    so the elasticity is ``N * alpha / ((alpha + eta) * S)``.  Without the
    conformity term ``S`` is proportional to ``N`` and the elasticity is one.
    """
    n = optimal_views(params, q, p)
    s = optimal_shares(params, n, q, p)
    out = np.asarray(n, dtype=float) * params.alpha / ((params.alpha + params.eta) * np.asarray(s, dtype=float))
    return float(out) if out.ndim == 0 else out


def views_cross_partial(params, q, p):
    """Closed-form mixed partial of unclipped views in taste and feed, ``2c / (p q)``."""
    q = _open_unit("q", _val(q, "q_t"))
    p = _open_unit("p", _val(p, "p_t"))
    c = params.delta * params.theta * (1.0 - params.theta) / (2.0 * params.eta)
    out = 2.0 * c / (p * q)
    return float(out) if out.ndim == 0 else out


def share_fraction_cross_partial(q, p, theta):
    """Mixed partial of the share fraction in taste and feed; never negative."""
    q = _open_unit("q", _val(q, "q_t"))
    p = _open_unit("p", _val(p, "p_t"))
    out = theta * (1.0 - theta) * q ** (theta - 1.0) * p ** (-theta)
    return float(out) if out.ndim == 0 else out


def share_ratio_cross_partial(q, p, theta):
    """Mixed partial of ``s / q`` in taste and feed; never positive."""
    q = _open_unit("q", _val(q, "q_t"))
    p = _open_unit("p", _val(p, "p_t"))
    out = -((1.0 - theta) ** 2) * q ** (theta - 2.0) * p ** (-theta)
    return float(out) if out.ndim == 0 else out


# -- quadratic-penalty variant ------------------------------------------------


def quadratic_share_fraction(q, p, theta):
    q = _open_unit("q", _val(q, "q_t"))
    p = _open_unit("p", _val(p, "p_t"))
    out = theta * q + (1.0 - theta) * p
    return float(out) if out.ndim == 0 else out


def quadratic_utility(params, s_frac, shares, views, q, p):
    a, b, e, d, t = params.alpha, params.beta, params.eta, params.delta, params.theta
    conform = (1.0 - t) * (s_frac - p) ** 2 + t * (s_frac - q) ** 2
    return b * views - a * (views - shares) ** 2 - e * shares**2 - d * shares * conform


def solve_user_quadratic(params, q, p):
    """Best response when conformity costs are quadratic in levels.

    With ``s = theta*q + (1 - theta)*p`` the conformity cost per share is
    ``theta*(1 - theta)*(q - p)**2``, which takes the place of the squared
    log ratio in the view and share conditions.
    """
    qv, pv = float(_val(q, "q_t")), float(_val(p, "p_t"))
    _open_unit("q", qv)
    _open_unit("p", pv)
    a, b, e, d, t = params.alpha, params.beta, params.eta, params.delta, params.theta
    s_frac = quadratic_share_fraction(qv, pv, t)
    gap = (qv - pv) ** 2
    n_raw = (b * (a + e) - d * a * t * (1.0 - t) * gap) / (2.0 * a * e)
    s_raw = (2.0 * n_raw * a - d * t * (1.0 - t) * gap) / (2.0 * (e + a))
    return _assemble(n_raw, s_raw, s_frac, qv)
