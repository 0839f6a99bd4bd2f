"""Small least-squares toolkit: OLS with HC1 errors, just-identified 2SLS, F tests.

Only the specifications used by the estimators live here; this is not a
general regression framework.
"""
from dataclasses import dataclass

import numpy as np
from scipy import stats


@dataclass(frozen=True)
class Fit:
    coef: np.ndarray
    cov: np.ndarray
    resid: np.ndarray
    n_obs: int

    @property
    def se(self):
        return np.sqrt(np.clip(np.diag(self.cov), 0.0, None))


def _design(x, const=True):
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if const:
        x = np.column_stack([np.ones(x.shape[0]), x])
    return x


def hc1(X, resid, bread):
    n, k = X.shape
    meat = (X * resid[:, None] ** 2).T @ X
    return bread @ meat @ bread * (n / max(n - k, 1))


def ols(y, x, const=True):
    """OLS of ``y`` on ``x`` (plus an intercept) with HC1 covariance."""
    y = np.asarray(y, dtype=float)
    X = _design(x, const)
    bread = np.linalg.inv(X.T @ X)
    coef = bread @ (X.T @ y)
    resid = y - X @ coef
    return Fit(coef, hc1(X, resid, bread), resid, len(y))


def iv2sls(y, x, z):
    """Just-identified 2SLS with one endogenous regressor, one instrument and an intercept.

    The covariance is the HC1 sandwich with the structural residuals.
    """
    y = np.asarray(y, dtype=float)
    X = _design(x)
    Z = _design(z)
    zx_inv = np.linalg.inv(Z.T @ X)
    coef = zx_inv @ (Z.T @ y)
    resid = y - X @ coef
    n, k = X.shape
    meat = (Z * resid[:, None] ** 2).T @ Z
    cov = zx_inv @ meat @ zx_inv.T * (n / max(n - k, 1))
    return Fit(coef, cov, resid, n)


def wald_single(coef, se, null=0.0):
    """Two-sided normal p-value for ``coef == null``."""
    if se <= 0:
        return 0.0 if coef != null else 1.0
    z = (coef - null) / se
    return float(2.0 * stats.norm.sf(abs(z)))


def classical_f(y, x):
    """Joint F test that all slopes are zero in an OLS with intercept.

    Uses the homoskedastic formula.  Columns that are constant or
    collinear with earlier ones are dropped; the list of dropped indices is
    returned alongside the statistic.
    """
    y = np.asarray(y, dtype=float)
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    keep, dropped = [], []
    for j in range(x.shape[1]):
        trial = _design(x[:, keep + [j]])
        if np.linalg.matrix_rank(trial) == trial.shape[1]:
            keep.append(j)
        else:
            dropped.append(j)
    X = _design(x[:, keep])
    n, k = X.shape
    q = k - 1
    if q == 0:
        return float("nan"), float("nan"), dropped
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    rss = float(np.sum((y - X @ coef) ** 2))
    tss = float(np.sum((y - y.mean()) ** 2))
    f = ((tss - rss) / q) / (rss / (n - k)) if rss > 0 else float("inf")
    pval = float(stats.f.sf(f, q, n - k)) if np.isfinite(f) else 0.0
    return float(f), pval, dropped
