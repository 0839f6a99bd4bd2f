"""Feed-diversification counterfactuals.

A policy mixes a targeted user's personalised feed with the population
average, ``q = a * q_bar + (1 - a) * q_user``, and users respond under a
chosen influence regime.  The change in toxic shares among a user group is
split exactly, in logs, into views, shares per view (together the
engagement component) and the toxic share proportion (the behaviour
component).
"""
from dataclasses import dataclass
from typing import FrozenSet, Union

import numpy as np
import pandas as pd

from .behavior import solve_users
from .simulator import CONTROL, PANEL_COLUMNS, TREATED, simulate_counts

TARGET_ALL = "all"
TARGET_ABOVE_MEAN = "above_mean"


@dataclass(frozen=True)
class PolicySpec:
    mix_a: float
    target: Union[str, FrozenSet[int]] = TARGET_ABOVE_MEAN
    description: str = ""

    def __post_init__(self):
        if not 0.0 <= self.mix_a <= 1.0:
            raise ValueError(f"mix_a must lie in [0, 1], got {self.mix_a!r}")
        if isinstance(self.target, str):
            if self.target not in (TARGET_ALL, TARGET_ABOVE_MEAN):
                raise ValueError(f"unknown target rule {self.target!r}")
        else:
            object.__setattr__(self, "target", frozenset(int(k) for k in self.target))


@dataclass(frozen=True)
class RegimeSpec:
    theta_regime: str = "estimated"
    theta_value: float = 0.16

    def __post_init__(self):
        if self.theta_regime not in ("zero", "estimated", "one"):
            raise ValueError(f"unknown regime {self.theta_regime!r}")
        if not 0.0 <= self.theta_value <= 1.0:
            raise ValueError("theta_value must lie in [0, 1]")

    @property
    def theta(self):
        return {"zero": 0.0, "one": 1.0}.get(self.theta_regime, self.theta_value)


def mixed_assignment(a, q_bar, q_user):
    """``a * q_bar + (1 - a) * q_user``."""
    if not 0.0 <= a <= 1.0:
        raise ValueError("a must lie in [0, 1]")
    out = a * q_bar + (1.0 - a) * np.asarray(q_user, dtype=float)
    return float(out) if out.ndim == 0 else out


def taste_quintiles(p):
    """Taste quintile (1..5) with ties broken by position."""
    p = np.asarray(p, dtype=float)
    order = np.lexsort((np.arange(p.size), p))
    lab = np.empty(p.size, dtype=np.int64)
    lab[order] = np.arange(p.size) * 5 // p.size + 1
    return lab


def target_mask(population, policy, q_bar=None):
    qb = population.control_mean if q_bar is None else q_bar
    if policy.target == TARGET_ALL:
        return np.ones(len(population), dtype=bool)
    if policy.target == TARGET_ABOVE_MEAN:
        return population.p > qb
    return np.isin(taste_quintiles(population.p), sorted(policy.target))


def policy_exposure(population, policy, q_bar=None):
    qb = population.control_mean if q_bar is None else q_bar
    q = population.p.copy()
    m = target_mask(population, policy, qb)
    q[m] = mixed_assignment(policy.mix_a, qb, population.p[m])
    return q


def expected_outcomes(population, q, theta, params):
    """Noise-free outcomes in model units: one row per user."""
    views, shares, s_frac, exited = solve_users(params, q, population.p, theta=theta)
    return pd.DataFrame({
        "user_id": population.user_id,
        "p": population.p,
        "q": q,
        "views": views,
        "shares": shares,
        "s_t": s_frac,
        "toxic_shares": s_frac * shares,
        "toxic_views": q * views,
        "exited": exited,
    })


def simulate_policy(population, policy, regime, config, backend=None, workers=1):
    """Sampled panel: personalised baseline, then the policy in period 1.

    Targeted users are labelled as the treated arm.
    """
    params = config.params
    qb = population.control_mean
    targeted = target_mask(population, policy, qb)
    frames = []
    for period, q in ((0, population.p), (1, policy_exposure(population, policy, qb))):
        counts = simulate_counts(population.user_id, population.p, q, regime.theta, params, period, config,
                                 backend=backend, workers=workers)
        df = pd.DataFrame({"user_id": population.user_id, "arm": np.where(targeted, TREATED, CONTROL),
                           "period": np.int64(period)})
        for col in PANEL_COLUMNS[3:]:
            df[col] = counts[col]
        frames.append(df[PANEL_COLUMNS])
    return pd.concat(frames, ignore_index=True)


@dataclass(frozen=True)
class DecompositionResult:
    pct_change_N: float
    pct_change_share_rate: float
    pct_change_s_t: float
    pct_change_toxic_shares: float
    log_N: float
    log_share_rate: float
    log_s_t: float
    log_toxic_shares: float
    residual: float
    zero_baseline: bool = False

    @property
    def engagement(self):
        return self.log_N + self.log_share_rate

    @property
    def behavior(self):
        return self.log_s_t

    @property
    def engagement_share(self):
        return self.engagement / self.log_toxic_shares if self.log_toxic_shares != 0 else np.nan

    @property
    def dominant(self):
        return "engagement" if abs(self.engagement) > abs(self.behavior) else "behavior"


def _totals(df, mask):
    sub = df if mask is None else df[np.asarray(mask, dtype=bool)]
    return float(sub["views"].sum()), float(sub["shares"].sum()), float(sub["toxic_shares"].sum())


def decompose(base, new):
    """Exact log split of the change in toxic shares between two total triples.

    ``base`` and ``new`` are ``(views, shares, toxic_shares)``.
    """
    (n0, s0, t0), (n1, s1, t1) = base, new
    if min(n0, s0, t0) <= 0:
        nan = float("nan")
        return DecompositionResult(nan, nan, nan, nan, nan, nan, nan, nan, nan, zero_baseline=True)
    if min(n1, s1, t1) <= 0:
        raise ValueError("policy totals must be positive for a log decomposition")
    ln = np.log(n1) - np.log(n0)
    lr = (np.log(s1) - np.log(n1)) - (np.log(s0) - np.log(n0))
    ls = (np.log(t1) - np.log(s1)) - (np.log(t0) - np.log(s0))
    lt = np.log(t1) - np.log(t0)
    resid = lt - (ln + lr + ls)
    pct = lambda x: float(np.expm1(x))  # noqa: E731
    return DecompositionResult(pct(ln), pct(lr), pct(ls), pct(lt), float(ln), float(lr), float(ls), float(lt),
                               float(resid))


def model_decomposition(policy_frame, baseline_frame, mask=None):
    """Decompose toxic shares between matched scenarios for the users in ``mask``.

    Frames carry ``views``, ``shares`` and ``toxic_shares`` per user in the
    same user order; panels are reduced to their intervention period first.
    """
    pf, bf = (f[f["period"] == 1] if "period" in f else f for f in (policy_frame, baseline_frame))
    if not np.array_equal(pf["user_id"].to_numpy(), bf["user_id"].to_numpy()):
        raise ValueError("scenarios must contain the same users in the same order")
    return decompose(_totals(bf, mask), _totals(pf, mask))


FRONTIER_COLUMNS = ["a", "total_views", "total_shares", "toxic_shares", "pct_N", "pct_share_rate", "pct_s_t"]


def policy_frontier(population, a_grid, regime, params, target=TARGET_ABOVE_MEAN, group=None):
    """Expected outcomes of the targeted group across mixing weights.

    Returns the frontier table plus, in extra columns, the log components
    and the engagement share of the total log change.
    """
    qb = population.control_mean
    base_policy = PolicySpec(0.0, target)
    mask = target_mask(population, base_policy, qb) if group is None else np.asarray(group, dtype=bool)
    base = expected_outcomes(population, population.p, regime.theta, params)
    b_tot = _totals(base, mask)
    rows = []
    for a in a_grid:
        pol = PolicySpec(float(a), target)
        out = expected_outcomes(population, policy_exposure(population, pol, qb), regime.theta, params)
        tot = _totals(out, mask)
        d = decompose(b_tot, tot)
        rows.append(dict(a=float(a), total_views=tot[0], total_shares=tot[1], toxic_shares=tot[2],
                         pct_N=d.pct_change_N, pct_share_rate=d.pct_change_share_rate, pct_s_t=d.pct_change_s_t,
                         log_engagement=d.engagement, log_behavior=d.behavior,
                         engagement_share=d.engagement_share, residual=d.residual))
    return pd.DataFrame(rows)


def sharing_elasticity(population, params, theta, q=None, scale=1.01):
    """Proportional change in total shares over proportional change in total views.

    Engagement is moved by scaling the consumption weight ``beta``; at
    ``theta = 0`` shares are a fixed fraction of views and the ratio is one.
    """
    q = population.p if q is None else q
    b = expected_outcomes(population, q, theta, params)
    n = expected_outcomes(population, q, theta, params.replace(beta=params.beta * scale))
    dn = n["views"].sum() / b["views"].sum() - 1.0
    ds = n["shares"].sum() / b["shares"].sum() - 1.0
    return float(ds / dn)
