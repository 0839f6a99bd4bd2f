"""Plot-ready long-format tables.

Nothing here draws; every helper returns a DataFrame with a fixed header
that is written as CSV for external plotting.  Empty inputs give a
header-only frame.
"""
import numpy as np
import pandas as pd

from .effects import hte_by_quantile
from .simulator import TREATED

QUANTILE_COLUMNS = ["outcome", "quantile", "effect", "se", "ci_low", "ci_high", "control_mean",
                    "n_treated", "n_control"]
BINSCATTER_COLUMNS = ["bin", "n", "x_mean", "y_mean"]
FRONTIER_LONG_COLUMNS = ["a", "series", "value"]
PLOT_OUTCOMES = ("v_t", "views", "shares", "toxic_shares", "s_t", "share_view_ratio")
N_BINS = 20
Z95 = 1.959963984540054


def quantile_table(panel, outcomes=PLOT_OUTCOMES, period=1):
    """Quintile treatment effects with 95% intervals, one row per (outcome, quintile)."""
    if len(panel) == 0 or not (panel["period"] == 0).any():
        return pd.DataFrame(columns=QUANTILE_COLUMNS)
    frames = []
    for name in outcomes:
        t = hte_by_quantile(panel, name, period=period)
        t.insert(0, "outcome", name)
        t["ci_low"] = t["effect"] - Z95 * t["se"]
        t["ci_high"] = t["effect"] + Z95 * t["se"]
        frames.append(t)
    return pd.concat(frames, ignore_index=True)[QUANTILE_COLUMNS]


def binscatter(x, y, n_bins=N_BINS):
    """Means of ``x`` and ``y`` within equal-count bins of ``x``.

    Pairs with a missing coordinate are dropped.  Observations are ranked by
    ``x`` with ties kept in input order, and rank ``r`` of ``n`` goes to bin
    ``r * n_bins // n``, so bin sizes differ by at most one.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    ok = ~(np.isnan(x) | np.isnan(y))
    x, y = x[ok], y[ok]
    n = x.size
    if n == 0:
        return pd.DataFrame(columns=BINSCATTER_COLUMNS)
    order = np.argsort(x, kind="stable")
    b = np.empty(n, dtype=np.int64)
    b[order] = np.arange(n) * n_bins // n
    counts = np.bincount(b, minlength=n_bins)
    used = counts > 0
    xs = np.bincount(b, weights=x, minlength=n_bins)
    ys = np.bincount(b, weights=y, minlength=n_bins)
    return pd.DataFrame({"bin": np.flatnonzero(used) + 1, "n": counts[used],
                         "x_mean": xs[used] / counts[used], "y_mean": ys[used] / counts[used]})


def _wide_change(panel, x_col, y_col, treated_only=True):
    base = panel[panel["period"] == 0].set_index("user_id")
    post = panel[panel["period"] == 1].set_index("user_id")
    common = base.index.intersection(post.index)
    base, post = base.loc[common], post.loc[common]
    if treated_only:
        keep = (post["arm"] == TREATED).to_numpy()
        base, post = base[keep], post[keep]
    return base[x_col].to_numpy(dtype=float), (post[y_col] - base[y_col]).to_numpy(dtype=float)


def estimation_binscatter(panel, n_bins=N_BINS):
    """Change in share proportion against baseline exposure among treated users."""
    if len(panel) == 0:
        return pd.DataFrame(columns=BINSCATTER_COLUMNS)
    x, y = _wide_change(panel, "v_t", "s_t")
    return binscatter(x, y, n_bins)


def shares_binscatter(panel, n_bins=N_BINS, x_col="toxic_views"):
    """Change in shares against a baseline usage column among treated (targeted) users.

    Baseline views are the same for every user when feeds match tastes, so
    the default x-axis is baseline toxic views, which carries the spread.
    """
    if len(panel) == 0:
        return pd.DataFrame(columns=BINSCATTER_COLUMNS)
    x, y = _wide_change(panel, x_col, "shares")
    return binscatter(x, y, n_bins)


def frontier_long(frontier):
    """Frontier table melted to ``a, series, value``."""
    if len(frontier) == 0:
        return pd.DataFrame(columns=FRONTIER_LONG_COLUMNS)
    long = frontier.melt(id_vars="a", var_name="series", value_name="value")
    return long.sort_values(["series", "a"], kind="stable").reset_index(drop=True)[FRONTIER_LONG_COLUMNS]


def emit_plot_data(data, n_bins=N_BINS):
    """Plot tables for a panel or a frontier.

    A panel (recognised by its ``period`` column) gives ``{"quantile_effects",
    "binscatter"}``; a frontier (with an ``a`` column) gives ``{"frontier"}``.
    """
    if "period" in data.columns:
        return {"quantile_effects": quantile_table(data), "binscatter": estimation_binscatter(data, n_bins)}
    if "a" in data.columns:
        return {"frontier": frontier_long(data)}
    raise ValueError("expected a panel or a frontier table")

