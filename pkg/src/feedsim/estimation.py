"""Recovery of the influence weight theta from experiment panels.

Treated users' feeds move from their own taste to the population average,
so in the steady state the change in their toxic share proportion is
approximately ``theta * (q_bar - p)``.  Regressing the change, net of the
control group's mean change, on baseline exposure gives ``-theta`` as the
slope.  Baseline exposure is a binomial proportion, so plain OLS is
attenuated; the split-half instrument and the reliability ratio both undo
that.
"""
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np
import pandas as pd
from scipy import stats

from .regression import iv2sls, ols, wald_single
from .simulator import TREATED

MIN_OBS = 30
WEAK_F = 10.0


class EstimationError(ValueError):
    pass


@dataclass(frozen=True)
class IVDiagnostics:
    first_stage_coef: float
    first_stage_F: float
    reliability_ratio: float


@dataclass(frozen=True)
class ThetaEstimate:
    theta_hat: float
    se: float
    method: str
    intercept: float
    n_obs: int
    diagnostics: Optional[IVDiagnostics] = None
    weak_instrument: bool = False

    @property
    def ci95(self):
        z = 1.959963984540054
        return (self.theta_hat - z * self.se, self.theta_hat + z * self.se)

    def covers(self, value):
        lo, hi = self.ci95
        return lo <= value <= hi


def _wide(panel):
    """One row per user with period-0 and period-1 columns side by side."""
    cols = ["user_id", "arm", "s_t", "v_t", "v_half1", "v_half2"]
    base = panel.loc[panel["period"] == 0, cols].set_index("user_id")
    post = panel.loc[panel["period"] == 1, ["user_id", "s_t", "v_t"]].set_index("user_id")
    return base.join(post, lsuffix="0", rsuffix="1", how="inner")


def estimation_sample(panel, log_spec=False):
    """Treated users with the control-adjusted change in share proportion.

    Returns a frame with columns ``dy`` (outcome), ``v0``, ``v_half1`` and
    ``v_half2`` restricted to users with every quantity defined.
    """
    w = _wide(panel)
    ok = w["s_t0"].notna() & w["s_t1"].notna()
    if log_spec:
        ok &= (w["s_t0"] > 0) & (w["s_t1"] > 0) & (w["v_t0"] > 0) & (w["v_half1"] > 0) & (w["v_half2"] > 0)
        f = np.log
    else:
        f = lambda x: x  # noqa: E731
    w = w[ok]
    change = f(w["s_t1"]) - f(w["s_t0"])
    ctrl = w["arm"] != TREATED
    if not ctrl.any():
        raise EstimationError("no control users with shares in both periods")
    adj = change - change[ctrl].mean()
    t = ~ctrl
    out = pd.DataFrame({
        "dy": adj[t],
        "v0": f(w.loc[t, "v_t0"]),
        "v_half1": f(w.loc[t, "v_half1"]),
        "v_half2": f(w.loc[t, "v_half2"]),
    }).dropna()
    if len(out) < MIN_OBS:
        raise EstimationError(f"only {len(out)} usable treated users; need at least {MIN_OBS}")
    return out


def estimate_theta_ols(panel, log_spec=False):
    d = estimation_sample(panel, log_spec)
    fit = ols(d["dy"].to_numpy(), d["v0"].to_numpy())
    return ThetaEstimate(-float(fit.coef[1]), float(fit.se[1]), "ols_log" if log_spec else "ols",
                         float(fit.coef[0]), fit.n_obs)


def first_stage(x, z):
    fit = ols(x, z)
    coef, se = float(fit.coef[1]), float(fit.se[1])
    return coef, (coef / se) ** 2 if se > 0 else np.inf


def estimate_theta_iv(panel, log_spec=False):
    """2SLS with first-half exposure instrumented by second-half exposure."""
    d = estimation_sample(panel, log_spec)
    x, z, y = d["v_half1"].to_numpy(), d["v_half2"].to_numpy(), d["dy"].to_numpy()
    return _iv_from_arrays(y, x, z, "iv2sls_log" if log_spec else "iv2sls")


def _iv_from_arrays(y, x, z, method="iv2sls"):
    fs_coef, fs_f = first_stage(x, z)
    fit = iv2sls(y, x, z)
    rel = float(np.clip(np.corrcoef(x, z)[0, 1], 0.0, 1.0))
    weak = fs_f < WEAK_F
    if weak:
        warnings.warn(f"weak instrument: first-stage F = {fs_f:.2f}", RuntimeWarning, stacklevel=3)
    return ThetaEstimate(-float(fit.coef[1]), float(fit.se[1]), method, float(fit.coef[0]), fit.n_obs,
                         IVDiagnostics(fs_coef, float(fs_f), rel), weak)


def estimate_theta_reliability(panel, log_spec=False):
    """OLS on second-half exposure divided by the split-half correlation.

    The correlation between the two halves is the reliability of a single
    half, so the regressor is the second half rather than the full-period
    proportion.
    """
    d = estimation_sample(panel, log_spec)
    rel = float(np.corrcoef(d["v_half1"], d["v_half2"])[0, 1])
    if not rel > 0:
        raise EstimationError(f"reliability ratio {rel:.4f} is not positive")
    fit = ols(d["dy"].to_numpy(), d["v_half2"].to_numpy())
    return ThetaEstimate(-float(fit.coef[1]) / rel, float(fit.se[1]) / rel,
                         "reliability_log" if log_spec else "reliability",
                         float(fit.coef[0]), fit.n_obs, IVDiagnostics(np.nan, np.nan, min(rel, 1.0)))


def correct_slope(slope, se, reliability):
    """Errors-in-variables correction of a bivariate slope."""
    if not reliability > 0:
        raise EstimationError("reliability must be positive")
    return slope / reliability, se / reliability


@dataclass(frozen=True)
class SteadyState:
    slope: float
    se: float
    p_value: float
    slope_uncorrected: float
    se_uncorrected: float
    n_obs: int


def steady_state_arrays(s0, s1, v0):
    """Persistence of share proportions among control users.

    The uncorrected slope regresses ``s1`` on ``s0``.  The corrected slope
    instruments ``s0`` with baseline view exposure ``v0``, whose sampling
    error is independent of the share counts; under the steady state both
    track the same taste, so the corrected slope is one.
    """
    s0, s1, v0 = (np.asarray(a, dtype=float) for a in (s0, s1, v0))
    raw = ols(s1, s0)
    if np.allclose(s0, v0):
        fit = raw
    else:
        fit = iv2sls(s1, s0, v0)
    slope, se = float(fit.coef[1]), float(fit.se[1])
    return SteadyState(slope, se, wald_single(slope, se, 1.0), float(raw.coef[1]), float(raw.se[1]), len(s0))


def steady_state_check(panel):
    w = _wide(panel)
    w = w[(w["arm"] != TREATED) & w["s_t0"].notna() & w["s_t1"].notna() & w["v_t0"].notna()]
    if len(w) < MIN_OBS:
        raise EstimationError(f"only {len(w)} control users shared in both periods")
    return steady_state_arrays(w["s_t0"], w["s_t1"], w["v_t0"])


@dataclass(frozen=True)
class GroupTest:
    estimates: dict
    wald: float
    df: int
    p_value: float
    small_groups: list


def exposure_groups(panel, n_groups=2, column="v_half2"):
    """Baseline-exposure groups formed on the instrument half only.

    Selecting on the full-period proportion would also select on the
    sampling error of the first half, which is the regressor, and break the
    instrument inside each group.  Selecting on the instrument leaves the
    structural error untouched.  Ties are broken by user_id.
    """
    base = panel[panel["period"] == 0]
    v = base[column].to_numpy(dtype=float)
    ids = base["user_id"].to_numpy()
    order = np.lexsort((ids, np.where(np.isnan(v), np.inf, v)))
    labels = np.empty(len(v), dtype=np.int64)
    labels[order] = np.arange(len(v)) * n_groups // len(v) + 1
    return pd.Series(labels, index=pd.Index(ids, name="user_id"), name="group")


def estimate_theta_by_group(panel, groups=None, min_group=MIN_OBS * 10):
    """Split-half IV within each group plus a Wald test of equal theta.

    ``groups`` maps user_id to a label (a Series indexed by user_id) and
    defaults to :func:`exposure_groups`.
    """
    d = estimation_sample(panel)
    if groups is None:
        groups = exposure_groups(panel)
    labels = groups.reindex(d.index).to_numpy()
    estimates, small = {}, []
    for g in pd.unique(labels[~pd.isna(labels)]):
        m = labels == g
        if m.sum() < min_group:
            small.append(g)
        if m.sum() < MIN_OBS:
            continue
        sub = d[m]
        estimates[g] = _iv_from_arrays(sub["dy"].to_numpy(), sub["v_half1"].to_numpy(), sub["v_half2"].to_numpy())
    if small:
        warnings.warn(f"groups {small} have fewer than {min_group} users", RuntimeWarning, stacklevel=2)
    th = np.array([e.theta_hat for e in estimates.values()])
    se = np.array([e.se for e in estimates.values()])
    w = 1.0 / se**2
    pooled = np.sum(w * th) / np.sum(w)
    stat = float(np.sum(w * (th - pooled) ** 2))
    df = len(th) - 1
    p = float(stats.chi2.sf(stat, df)) if df > 0 else 1.0
    return GroupTest(dict(sorted(estimates.items())), stat, df, p, small)


def results_table(estimates):
    """Rows for the estimation results CSV."""
    rows = []
    for e in estimates:
        f = e.diagnostics.first_stage_F if e.diagnostics is not None else np.nan
        rows.append(dict(method=e.method, theta_hat=e.theta_hat, se=e.se, intercept=e.intercept,
                         first_stage_F=f, n_obs=e.n_obs))
    return pd.DataFrame(rows, columns=["method", "theta_hat", "se", "intercept", "first_stage_F", "n_obs"])


def linearized_theta(taste_dist, theta, n_points=20_000):
    """Probability limit of the slope estimators under a given taste distribution.

    The estimators fit a line through ``q_bar**theta * p**(1 - theta) - p``
    against ``p``.  The negated projection slope equals ``theta`` only when
    tastes are concentrated; with a long-tailed taste the curvature pushes it
    away.  Computed on an evenly spaced quantile grid.
    """
    u = (np.arange(n_points) + 0.5) / n_points
    p = np.asarray(taste_dist.ppf(u), dtype=float)
    q_bar = p.mean()
    y = q_bar**theta * p ** (1.0 - theta) - p
    pc = p - q_bar
    return float(-(pc @ (y - y.mean())) / (pc @ pc))
