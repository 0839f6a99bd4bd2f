"""Treatment-effect read-outs on simulated panels.

Effects are differences in means between arms in the intervention period,
with HC1 standard errors from the bivariate regression on an arm dummy.
"""
import logging
import warnings
from dataclasses import dataclass

import numpy as np
import pandas as pd

from .regression import classical_f, ols, wald_single
from .simulator import TREATED

log = logging.getLogger(__name__)

N_QUANTILES = 5


def period_rows(panel, period):
    return panel[panel["period"] == period]


def outcome_values(df, outcome):
    """Evaluate an outcome selector: a column name, ``"share_view_ratio"`` or a callable."""
    if callable(outcome):
        return np.asarray(outcome(df), dtype=float)
    if outcome == "share_view_ratio":
        tv = df["toxic_views"].to_numpy(dtype=float)
        ts = df["toxic_shares"].to_numpy(dtype=float)
        out = np.full(len(df), np.nan)
        ok = tv > 0
        out[ok] = ts[ok] / tv[ok]
        return out
    return df[outcome].to_numpy(dtype=float)


def assign_quantiles(panel, n_groups=N_QUANTILES):
    """Baseline-exposure group (1 = lowest) for every user, indexed by user_id.

    Users are ordered by baseline ``v_t`` with ties broken by ``user_id``;
    users with undefined baseline exposure sort last.
    """
    base = period_rows(panel, 0)
    n = len(base)
    if n < n_groups:
        raise ValueError(f"need at least {n_groups} baseline users, got {n}")
    v = base["v_t"].to_numpy(dtype=float)
    ids = base["user_id"].to_numpy()
    order = np.lexsort((ids, np.where(np.isnan(v), np.inf, v)))
    labels = np.empty(n, dtype=np.int64)
    labels[order] = np.arange(n) * n_groups // n + 1
    return pd.Series(labels, index=pd.Index(ids, name="user_id"), name="quantile")


@dataclass(frozen=True)
class Effect:
    effect: float
    se: float
    control_mean: float
    n_treated: int
    n_control: int

    @property
    def ci95(self):
        return (self.effect - 1.959963984540054 * self.se, self.effect + 1.959963984540054 * self.se)


def ate_arrays(y, treated):
    """Difference in means with the HC1 error of the dummy regression."""
    y = np.asarray(y, dtype=float)
    treated = np.asarray(treated, dtype=bool)
    ok = ~np.isnan(y)
    y, treated = y[ok], treated[ok]
    n_t, n_c = int(treated.sum()), int((~treated).sum())
    if n_t == 0 or n_c == 0:
        raise ValueError("both arms need at least one observation")
    effect = y[treated].mean() - y[~treated].mean()
    if n_t + n_c > 2 and np.ptp(y) > 0:
        se = float(ols(y, treated.astype(float)).se[1])
    else:
        warnings.warn("outcome has no variation; standard error set to 0", RuntimeWarning, stacklevel=2)
        se = 0.0
    return Effect(float(effect), se, float(y[~treated].mean()), n_t, n_c)


def ate(panel, outcome, period=1):
    df = period_rows(panel, period)
    return ate_arrays(outcome_values(df, outcome), (df["arm"] == TREATED).to_numpy())


def hte_by_quantile(panel, outcome, period=1, quantiles=None):
    """One :class:`Effect` row per baseline-exposure group."""
    q = assign_quantiles(panel) if quantiles is None else quantiles
    df = period_rows(panel, period)
    labels = q.reindex(df["user_id"]).to_numpy()
    y = outcome_values(df, outcome)
    treated = (df["arm"] == TREATED).to_numpy()
    rows = []
    for k in range(1, int(q.max()) + 1):
        m = labels == k
        yk = y[m]
        tk = treated[m]
        ok = ~np.isnan(yk)
        if not (ok & tk).any() or not (ok & ~tk).any():
            warnings.warn(f"quantile {k} has an empty arm; effect left missing", RuntimeWarning, stacklevel=2)
            rows.append(dict(quantile=k, effect=np.nan, se=np.nan, control_mean=np.nan,
                             n_treated=int((ok & tk).sum()), n_control=int((ok & ~tk).sum())))
            continue
        e = ate_arrays(yk, tk)
        rows.append(dict(quantile=k, effect=e.effect, se=e.se, control_mean=e.control_mean,
                         n_treated=e.n_treated, n_control=e.n_control))
    return pd.DataFrame(rows)


# -- decomposition of toxic shares ------------------------------------------


@dataclass(frozen=True)
class ArmTotals:
    views: float
    toxic_views: float
    shares: float
    toxic_shares: float

    @property
    def exposure(self):
        return self.toxic_views / self.views

    @property
    def toxic_share_prop(self):
        return self.toxic_shares / self.shares

    @property
    def conditional_share_rate(self):
        """Toxic shares per toxic view."""
        return self.toxic_shares / self.toxic_views

    @property
    def behavior_ratio(self):
        """Share proportion relative to view proportion."""
        return self.toxic_share_prop / self.exposure


@dataclass(frozen=True)
class EmpiricalDecomposition:
    control: ArmTotals
    treated: ArmTotals
    exposure: float
    disengagement: float
    behavior: float
    total: float
    responsiveness: float

    @property
    def residual(self):
        return self.total - (self.exposure + self.disengagement + self.behavior)


def decompose_totals(control, treated):
    """Split the log change in toxic shares into exposure, share volume and behaviour.

    Uses ``toxic_shares = (toxic_views / views) * shares * (share prop / view prop)``,
    which holds exactly, so the three log changes add up to the total.
    ``control`` and ``treated`` are ``(views, toxic_views, shares, toxic_shares)``.
    """
    c = control if isinstance(control, ArmTotals) else ArmTotals(*map(float, control))
    t = treated if isinstance(treated, ArmTotals) else ArmTotals(*map(float, treated))
    for arm in (c, t):
        if min(arm.views, arm.toxic_views, arm.shares, arm.toxic_shares) <= 0:
            raise ValueError("every cell must be positive for the log decomposition")
    exposure = np.log(t.exposure) - np.log(c.exposure)
    disengagement = np.log(t.shares) - np.log(c.shares)
    behavior = np.log(t.behavior_ratio) - np.log(c.behavior_ratio)
    total = np.log(t.toxic_shares) - np.log(c.toxic_shares)
    d_views = (t.toxic_views - c.toxic_views) / c.toxic_views
    resp = ((t.toxic_shares - c.toxic_shares) / c.toxic_shares) / d_views if d_views != 0 else np.nan
    return EmpiricalDecomposition(c, t, float(exposure), float(disengagement), float(behavior),
                                  float(total), float(resp))


def arm_totals(panel, period=1):
    df = period_rows(panel, period)
    out = {}
    for arm, g in df.groupby("arm"):
        out[arm] = ArmTotals(*(float(g[c].sum()) for c in ("views", "toxic_views", "shares", "toxic_shares")))
    return out


def empirical_decomposition(panel, period=1):
    tot = arm_totals(panel, period)
    return decompose_totals(tot["control"], tot[TREATED])


@dataclass(frozen=True)
class Responsiveness:
    ratio: float
    se: float
    p_value: float
    unstable: bool


def responsiveness(panel, period=1, mask=None):
    """Percentage change in toxic shares over percentage change in toxic views.

    The standard error is a delta-method one treating the arms as independent
    and allowing toxic views and shares to covary within an arm.  The ratio
    is flagged unstable when the change in toxic views is within two
    standard errors of zero.
    """
    df = period_rows(panel, period)
    if mask is not None:
        df = df[np.asarray(mask, dtype=bool)]
    treated = (df["arm"] == TREATED).to_numpy()
    ts = df["toxic_shares"].to_numpy(dtype=float)
    tv = df["toxic_views"].to_numpy(dtype=float)
    moments = []
    for m in (treated, ~treated):
        if m.sum() < 2:
            raise ValueError("each arm needs at least two users")
        pair = np.vstack([ts[m], tv[m]])
        moments.append((pair.mean(axis=1), np.cov(pair) / m.sum()))
    (mt, ct), (mc, cc) = moments
    if mc[0] == 0 or mc[1] == 0:
        raise ValueError("control means must be non-zero")
    a, b = mt[0] / mc[0] - 1.0, mt[1] / mc[1] - 1.0
    ratio = a / b if b != 0 else np.nan
    # gradient with respect to (T_t, V_t) and (T_c, V_c)
    g_t = np.array([1.0 / (mc[0] * b), -a / (b**2 * mc[1])])
    g_c = np.array([-mt[0] / (mc[0] ** 2 * b), a * mt[1] / (b**2 * mc[1] ** 2)])
    var = g_t @ ct @ g_t + g_c @ cc @ g_c
    se = float(np.sqrt(var)) if np.isfinite(var) else np.nan
    se_b = np.sqrt((mt[1] / mc[1]) ** 2 * (ct[1, 1] / mt[1] ** 2 + cc[1, 1] / mc[1] ** 2))
    unstable = bool(abs(b) < 2.0 * se_b)
    return Responsiveness(float(ratio), se, wald_single(ratio, se, 1.0), unstable)


# -- attrition and bounds -------------------------------------------------------

_COUNT_COLS = ["views", "shares", "toxic_views", "toxic_shares"]
_PROP_COLS = ["v_t", "s_t", "v_half1", "v_half2"]


def simulate_attrition(panel, floor, period=1):
    """Users whose views in ``period`` fall below ``floor`` leave.

    Their counts are zeroed, proportions set missing and ``exited`` raised.
    """
    out = panel.copy()
    leave = (out["period"] == period) & ((out["views"] < floor) | (out["exited"] == 1))
    out.loc[leave, _COUNT_COLS] = 0
    out.loc[leave, _PROP_COLS] = np.nan
    out.loc[leave, "exited"] = 1
    return out


@dataclass(frozen=True)
class LeeBounds:
    lower: float
    upper: float
    trim_share: float
    trimmed_arm: str
    attrition_treated: float
    attrition_control: float


def _trimmed_mean(y, k, drop):
    ys = np.sort(y)
    if k == 0:
        return ys.mean()
    return ys[:-k].mean() if drop == "top" else ys[k:].mean()


def lee_bounds_arrays(y, treated, observed):
    """Trimming bounds on the mean difference among always-observed users."""
    y = np.asarray(y, dtype=float)
    treated = np.asarray(treated, dtype=bool)
    observed = np.asarray(observed, dtype=bool) & ~np.isnan(y)
    obs_t = observed[treated].mean()
    obs_c = observed[~treated].mean()
    yt, yc = y[treated & observed], y[~treated & observed]
    if obs_t >= obs_c:
        share = (obs_t - obs_c) / obs_t
        k = int(round(share * yt.size))
        lo = _trimmed_mean(yt, k, "top") - yc.mean()
        hi = _trimmed_mean(yt, k, "bottom") - yc.mean()
        arm = TREATED
    else:
        share = (obs_c - obs_t) / obs_c
        k = int(round(share * yc.size))
        # trimming the control arm from the top raises the implied effect
        a = yt.mean() - _trimmed_mean(yc, k, "top")
        b = yt.mean() - _trimmed_mean(yc, k, "bottom")
        lo, hi = min(a, b), max(a, b)
        arm = "control"
    return LeeBounds(float(lo), float(hi), float(share), arm, float(1 - obs_t), float(1 - obs_c))


def lee_bounds(panel, outcome, period=1):
    df = period_rows(panel, period)
    return lee_bounds_arrays(outcome_values(df, outcome), (df["arm"] == TREATED).to_numpy(),
                             (df["exited"] == 0).to_numpy())


@dataclass(frozen=True)
class Balance:
    f_stat: float
    p_value: float
    dropped: list


def balance_check(covariates, treated):
    """Joint F test from regressing the treatment dummy on baseline covariates."""
    x = np.asarray(covariates, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.shape[1] < 1:
        raise ValueError("balance check needs at least one covariate")
    f, p, dropped = classical_f(np.asarray(treated, dtype=float), x)
    if dropped:
        warnings.warn(f"dropped collinear covariates {dropped}", RuntimeWarning, stacklevel=2)
    return Balance(f, p, dropped)
