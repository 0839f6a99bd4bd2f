"""Synthetic two-period experiment panels.

Period 0 is the baseline, where every user sees a feed tuned to their own
taste.  In period 1 the treated arm's personalisation is replaced by random
delivery: each day the treated user's feed composition is the assignment
probability of a control user picked uniformly at random, and the user
responds to the period average.  Counts are obtained by scaling the
continuous best responses and then thinning them binomially, which supplies
the sampling error that the split-half estimators are built to remove.

All randomness comes from counter-based streams keyed by
``(seed, user_id, stream)`` so that the panel does not depend on the order
or chunking in which users are processed.
"""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
import pandas as pd

from . import rng as crng
from ._accel import jit, use_numba
from .behavior import UtilityParams
from .distributions import DEFAULT_TASTE

log = logging.getLogger(__name__)

PANEL_COLUMNS = [
    "user_id", "arm", "period", "views", "shares", "toxic_views", "toxic_shares",
    "v_t", "s_t", "v_half1", "v_half2", "exited",
]
CONTROL, TREATED = "control", "treated"
# boundary guard for the share fraction after the multiplicative shock
S_FLOOR, S_CEIL = 1e-9, 1.0 - 1e-9
_PERIOD_STRIDE = 16


@dataclass(frozen=True)
class SimConfig:
    n_users: int = 100_000
    treat_frac: float = 0.5
    days_per_period: int = 30
    params: UtilityParams = field(default_factory=UtilityParams)
    taste_dist: object = DEFAULT_TASTE
    posts_per_view_unit: float = 120.0
    seed: int = 0

    def __post_init__(self):
        if self.n_users < 1:
            raise ValueError("n_users must be positive")
        if self.n_users < 100:
            log.warning("n_users=%d is too small for meaningful tests", self.n_users)
        if not 0.0 < self.treat_frac < 1.0:
            raise ValueError(f"treat_frac must lie in (0, 1), got {self.treat_frac!r}")
        if self.days_per_period < 1:
            raise ValueError("days_per_period must be positive")
        if not self.posts_per_view_unit > 0:
            raise ValueError("posts_per_view_unit must be positive")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")

    def replace(self, **changes):
        return replace(self, **changes)


@dataclass(frozen=True)
class UserState:
    user_id: int
    p_t: float
    treated: bool
    embedding: Optional[np.ndarray] = None
    category: Optional[str] = None


@dataclass
class Population:
    """Column store of users; index ``i`` is the user with ``user_id[i]``."""

    user_id: np.ndarray
    p: np.ndarray
    treated: np.ndarray
    category: Optional[np.ndarray] = None

    def __len__(self):
        return len(self.user_id)

    def __getitem__(self, i):
        cat = None if self.category is None else self.category[i]
        return UserState(int(self.user_id[i]), float(self.p[i]), bool(self.treated[i]), category=cat)

    def subset(self, mask):
        cat = None if self.category is None else self.category[mask]
        return Population(self.user_id[mask], self.p[mask], self.treated[mask], cat)

    @property
    def control_mean(self):
        """Mean assignment probability in the control arm (``q-bar``)."""
        return float(self.p[~self.treated].mean())


def draw_population(config, n_users=None):
    """Draw tastes and arms for users ``0 .. n_users - 1``."""
    n = config.n_users if n_users is None else n_users
    ids = np.arange(n, dtype=np.int64)
    seed = np.uint64(config.seed)
    u_taste = crng.uniform_array(crng.stream_key_array(seed, ids, crng.STREAM_TASTE), 0)
    u_arm = crng.uniform_array(crng.stream_key_array(seed, ids, crng.STREAM_ARM), 0)
    p = np.asarray(config.taste_dist.ppf(u_taste), dtype=float)
    return Population(ids, p, u_arm < config.treat_frac)


def randomized_exposure(pool, user_ids, period, config):
    """Period-average feed composition under random delivery.

    Each day every user is handed the assignment probability of a member of
    ``pool`` chosen uniformly at random; the result is the mean over days.
    """
    pool = np.asarray(pool, dtype=float)
    if pool.size == 0:
        raise ValueError("random delivery needs a non-empty pool of control users")
    keys = crng.stream_key_array(
        np.uint64(config.seed), user_ids, crng.STREAM_DAILY_Q + _PERIOD_STRIDE * period
    )
    total = np.zeros(len(keys))
    for day in range(config.days_per_period):
        idx = (crng.uniform_array(keys, day) * pool.size).astype(np.int64)
        total += pool[np.minimum(idx, pool.size - 1)]
    return total / config.days_per_period


def experiment_exposure(population, period, config):
    """Feed composition under the experiment: ``q = p`` except treated users in period 1."""
    q = population.p.copy()
    if period >= 1:
        t = population.treated
        q[t] = randomized_exposure(population.p[~t], population.user_id[t], period, config)
    return q


# ---------------------------------------------------------------------------
# per-user period kernel


@jit
def _period_kernel(user_id, p, q, theta, seed, period, alpha, beta, eta, delta, mu, scale,
                   views, shares, tv1, tv2, tshares, exited):
    off = _PERIOD_STRIDE * period
    for i in range(user_id.shape[0]):
        uid = user_id[i]
        t = theta[i]
        gap = math.log(q[i] / p[i]) ** 2
        n_raw = (beta * (alpha + eta) - delta * alpha * t * (1.0 - t) * gap) / (2.0 * alpha * eta)
        s_raw = (2.0 * n_raw * alpha - delta * t * (1.0 - t) * gap) / (2.0 * (eta + alpha))
        if n_raw <= 0.0 or s_raw <= 0.0:
            views[i] = 0
            shares[i] = 0
            tv1[i] = 0
            tv2[i] = 0
            tshares[i] = 0
            exited[i] = True
            continue
        exited[i] = False
        w = crng.normal(crng.stream_key(seed, uid, crng.STREAM_SHOCK + off), 0)
        s = q[i] ** t * p[i] ** (1.0 - t) * math.exp(mu * w)
        s = min(max(s, S_FLOOR), S_CEIL)
        nv = np.int64(math.floor(n_raw * scale + 0.5))
        ns = np.int64(math.floor(s_raw * scale + 0.5))
        h1 = nv // 2
        views[i] = nv
        shares[i] = ns
        tv1[i] = crng.binomial(h1, q[i], crng.stream_key(seed, uid, crng.STREAM_HALF1 + off))
        tv2[i] = crng.binomial(nv - h1, q[i], crng.stream_key(seed, uid, crng.STREAM_HALF2 + off))
        tshares[i] = crng.binomial(ns, s, crng.stream_key(seed, uid, crng.STREAM_SHARES + off))


def _period_numpy(user_id, p, q, theta, seed, period, alpha, beta, eta, delta, mu, scale,
                  views, shares, tv1, tv2, tshares, exited):
    off = _PERIOD_STRIDE * period
    gap = np.log(q / p) ** 2
    n_raw = (beta * (alpha + eta) - delta * alpha * theta * (1.0 - theta) * gap) / (2.0 * alpha * eta)
    s_raw = (2.0 * n_raw * alpha - delta * theta * (1.0 - theta) * gap) / (2.0 * (eta + alpha))
    gone = (n_raw <= 0.0) | (s_raw <= 0.0)
    w = crng.normal_array(crng.stream_key_array(seed, user_id, crng.STREAM_SHOCK + off), 0)
    s = np.clip(q**theta * p ** (1.0 - theta) * np.exp(mu * w), S_FLOOR, S_CEIL)
    nv = np.where(gone, 0, np.floor(n_raw * scale + 0.5)).astype(np.int64)
    ns = np.where(gone, 0, np.floor(s_raw * scale + 0.5)).astype(np.int64)
    h1 = nv // 2
    views[:] = nv
    shares[:] = ns
    tv1[:] = crng.binomial_array(h1, q, crng.stream_key_array(seed, user_id, crng.STREAM_HALF1 + off))
    tv2[:] = crng.binomial_array(nv - h1, q, crng.stream_key_array(seed, user_id, crng.STREAM_HALF2 + off))
    tshares[:] = crng.binomial_array(ns, s, crng.stream_key_array(seed, user_id, crng.STREAM_SHARES + off))
    exited[:] = gone


def _ratio(num, den):
    out = np.full(num.shape, np.nan)
    ok = den > 0
    out[ok] = num[ok] / den[ok]
    return out


def simulate_counts(user_id, p, q, theta, params, period, config, backend=None, workers=1):
    """Integer outcomes for one period given each user's taste and feed.

    Returns a dict of arrays keyed by panel column.  ``theta`` may be a scalar
    or a per-user array.  ``workers`` splits users into contiguous chunks run
    on threads; the output does not depend on it.
    """
    user_id = np.ascontiguousarray(user_id, dtype=np.int64)
    n = user_id.size
    p = np.ascontiguousarray(np.broadcast_to(np.asarray(p, dtype=float), (n,)))
    q = np.ascontiguousarray(np.broadcast_to(np.asarray(q, dtype=float), (n,)))
    theta = np.ascontiguousarray(np.broadcast_to(np.asarray(theta, dtype=float), (n,)))
    if n and not (np.all((p > 0) & (p < 1)) and np.all((q > 0) & (q < 1))):
        raise ValueError("tastes and feed compositions must lie strictly inside (0, 1)")
    views, shares = np.zeros(n, np.int64), np.zeros(n, np.int64)
    tv1, tv2, tshares = np.zeros(n, np.int64), np.zeros(n, np.int64), np.zeros(n, np.int64)
    exited = np.zeros(n, np.bool_)
    kernel = _period_kernel if use_numba(backend) else _period_numpy
    consts = (np.uint64(config.seed), np.int64(period), float(params.alpha), float(params.beta),
              float(params.eta), float(params.delta), float(params.mu), float(config.posts_per_view_unit))

    def run(lo, hi):
        sl = slice(lo, hi)
        kernel(user_id[sl], p[sl], q[sl], theta[sl], *consts,
               views[sl], shares[sl], tv1[sl], tv2[sl], tshares[sl], exited[sl])

    bounds = np.linspace(0, n, max(1, int(workers)) + 1).astype(int)
    if workers > 1 and n > 0:
        with ThreadPoolExecutor(max_workers=int(workers)) as pool:
            list(pool.map(lambda b: run(*b), zip(bounds[:-1], bounds[1:])))
    else:
        run(0, n)

    h1 = views // 2
    toxic_views = tv1 + tv2
    return {
        "views": views,
        "shares": shares,
        "toxic_views": toxic_views,
        "toxic_shares": tshares,
        "v_t": _ratio(toxic_views, views),
        "s_t": _ratio(tshares, shares),
        "v_half1": _ratio(tv1, h1),
        "v_half2": _ratio(tv2, views - h1),
        "exited": exited.astype(np.int64),
    }


def _frame(user_id, treated, period, counts):
    df = pd.DataFrame({"user_id": user_id, "arm": np.where(treated, TREATED, CONTROL), "period": period})
    for col in PANEL_COLUMNS[3:]:
        df[col] = counts[col]
    df["period"] = df["period"].astype(np.int64)
    return df[PANEL_COLUMNS]


def run_period(population, period, config, policy="experiment", theta=None, backend=None, workers=1):
    """Simulate one period for the whole population.

    ``policy`` is ``"experiment"`` (random delivery for treated users in
    period 1), ``"control"`` (everyone personalised) or an explicit array of
    feed compositions.
    """
    if isinstance(policy, str):
        if policy == "experiment":
            q = experiment_exposure(population, period, config)
        elif policy == "control":
            q = population.p.copy()
        else:
            raise ValueError(f"unknown policy {policy!r}")
    else:
        q = np.asarray(policy, dtype=float)
    th = config.params.theta if theta is None else theta
    counts = simulate_counts(population.user_id, population.p, q, th, config.params, period, config,
                             backend=backend, workers=workers)
    return _frame(population.user_id, population.treated, period, counts)


def simulate_panel(config, population=None, policy="experiment", theta=None, backend=None, workers=1):
    """Baseline and intervention periods stacked period-major."""
    pop = draw_population(config) if population is None else population
    frames = [run_period(pop, t, config, policy=policy if t == 1 else "control", theta=theta,
                         backend=backend, workers=workers) for t in (0, 1)]
    return pd.concat(frames, ignore_index=True)


def write_panel(panel, path):
    """Write a panel with the fixed column order; missing values become empty fields."""
    panel[PANEL_COLUMNS].to_csv(path, index=False, na_rep="", float_format="%.17g", lineterminator="\n")


def read_panel(path):
    df = pd.read_csv(path, keep_default_na=True, float_precision="round_trip")
    if list(df.columns) != PANEL_COLUMNS:
        raise ValueError(f"panel columns {list(df.columns)} do not match {PANEL_COLUMNS}")
    return df
