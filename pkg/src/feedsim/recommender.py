"""Matrix-factorisation content assignment and its randomised replacement.

The platform factorises a users-by-posts engagement matrix, scores each post
for a user by the product of the user's and the post's embeddings, and turns
scores into assignment probabilities.  Treated users instead receive a fresh
embedding each day, drawn uniformly from a small ball around the mean
control embedding.
"""
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
import pandas as pd

from ._accel import jit, use_numba

JACOBI_TOL = 1e-15
JACOBI_MAX_SWEEPS = 100


@dataclass(frozen=True)
class EngagementMatrix:
    entries: np.ndarray
    toxic: Optional[np.ndarray] = None
    tastes: Optional[np.ndarray] = None

    def __post_init__(self):
        e = np.asarray(self.entries, dtype=float)
        if e.ndim != 2 or min(e.shape) < 1:
            raise ValueError("engagement matrix must be two-dimensional and non-empty")
        if not np.all(np.isfinite(e)):
            raise ValueError("engagement matrix has non-finite entries")
        object.__setattr__(self, "entries", e)

    @property
    def shape(self):
        return self.entries.shape


@dataclass(frozen=True)
class Factorization:
    user_factors: np.ndarray
    singular_values: np.ndarray
    post_factors: np.ndarray

    def reconstruct(self):
        return (self.user_factors * self.singular_values) @ self.post_factors.T


# -- one-sided Jacobi SVD ---------------------------------------------------------


@jit
def _jacobi_kernel(a, v, tol, max_sweeps):
    """Orthogonalise the columns of ``a`` in place, accumulating rotations in ``v``."""
    m, n = a.shape
    for sweep in range(max_sweeps):
        rotated = False
        for i in range(n - 1):
            for j in range(i + 1, n):
                alpha = 0.0
                beta = 0.0
                gamma = 0.0
                for r in range(m):
                    alpha += a[r, i] * a[r, i]
                    beta += a[r, j] * a[r, j]
                    gamma += a[r, i] * a[r, j]
                if gamma == 0.0 or abs(gamma) <= tol * math.sqrt(alpha * beta):
                    continue
                rotated = True
                zeta = (beta - alpha) / (2.0 * gamma)
                t = (1.0 if zeta >= 0 else -1.0) / (abs(zeta) + math.sqrt(1.0 + zeta * zeta))
                c = 1.0 / math.sqrt(1.0 + t * t)
                s = c * t
                for r in range(m):
                    x = a[r, i]
                    y = a[r, j]
                    a[r, i] = c * x - s * y
                    a[r, j] = s * x + c * y
                for r in range(n):
                    x = v[r, i]
                    y = v[r, j]
                    v[r, i] = c * x - s * y
                    v[r, j] = s * x + c * y
        if not rotated:
            return sweep + 1
    return max_sweeps


def _jacobi_numpy(a, v, tol, max_sweeps):
    n = a.shape[1]
    for sweep in range(max_sweeps):
        rotated = False
        for i in range(n - 1):
            for j in range(i + 1, n):
                alpha = float(a[:, i] @ a[:, i])
                beta = float(a[:, j] @ a[:, j])
                gamma = float(a[:, i] @ a[:, j])
                if gamma == 0.0 or abs(gamma) <= tol * math.sqrt(alpha * beta):
                    continue
                rotated = True
                zeta = (beta - alpha) / (2.0 * gamma)
                t = (1.0 if zeta >= 0 else -1.0) / (abs(zeta) + math.sqrt(1.0 + zeta * zeta))
                c = 1.0 / math.sqrt(1.0 + t * t)
                s = c * t
                ai, aj = a[:, i].copy(), a[:, j].copy()
                a[:, i], a[:, j] = c * ai - s * aj, s * ai + c * aj
                vi, vj = v[:, i].copy(), v[:, j].copy()
                v[:, i], v[:, j] = c * vi - s * vj, s * vi + c * vj
        if not rotated:
            return sweep + 1
    return max_sweeps


def _complete_basis(u, filled):
    """Replace unfilled columns of ``u`` by orthonormal vectors (Gram-Schmidt on the standard basis)."""
    m = u.shape[0]
    cols = [u[:, j] for j in range(u.shape[1]) if filled[j]]
    e = 0
    for j in range(u.shape[1]):
        if filled[j]:
            continue
        while e < m:
            cand = np.zeros(m)
            cand[e] = 1.0
            e += 1
            for c in cols:
                cand -= (c @ cand) * c
            nrm = np.linalg.norm(cand)
            if nrm > 1e-8:
                u[:, j] = cand / nrm
                cols.append(u[:, j])
                break
    return u


def _svd_tall(a, backend):
    a = np.array(a, dtype=float, order="C")
    n = a.shape[1]
    v = np.eye(n)
    kernel = _jacobi_kernel if use_numba(backend) else _jacobi_numpy
    kernel(a, v, JACOBI_TOL, JACOBI_MAX_SWEEPS)
    sigma = np.sqrt(np.sum(a * a, axis=0))
    order = np.argsort(-sigma, kind="stable")
    sigma, a, v = sigma[order], a[:, order], v[:, order]
    scale = sigma.max() if sigma.size and sigma.max() > 0 else 1.0
    filled = sigma > 1e-13 * scale
    u = np.zeros_like(a)
    u[:, filled] = a[:, filled] / sigma[filled]
    sigma[~filled] = 0.0
    return _complete_basis(u, filled), sigma, v


def _fix_signs(u, v):
    for j in range(u.shape[1]):
        nz = np.flatnonzero(np.abs(u[:, j]) > 1e-12)
        if nz.size and u[nz[0], j] < 0:
            u[:, j] = -u[:, j]
            v[:, j] = -v[:, j]
    return u, v


def factorize(m, k=None, backend=None):
    """Rank-``k`` truncated SVD by one-sided Jacobi rotations.

    The first non-zero entry of each left singular vector is made
    non-negative.  ``k`` defaults to ``min(rows, cols)``.
    """
    a = m.entries if isinstance(m, EngagementMatrix) else np.asarray(m, dtype=float)
    if a.ndim != 2:
        raise ValueError("factorize expects a two-dimensional matrix")
    rows, cols = a.shape
    k = min(rows, cols) if k is None else int(k)
    if not 1 <= k <= min(rows, cols):
        raise ValueError(f"rank {k} must lie between 1 and {min(rows, cols)}")
    if rows >= cols:
        u, s, v = _svd_tall(a, backend)
    else:
        v, s, u = _svd_tall(a.T, backend)
    u, v = _fix_signs(u[:, :k].copy(), v[:, :k].copy())
    return Factorization(u, s[:k].copy(), v)


# -- assignment ---------------------------------------------------------------------


def scores(user_emb, f):
    return (np.asarray(user_emb, dtype=float) * f.singular_values) @ f.post_factors.T


def assignment_probabilities(user_emb, f):
    """Shift scores by their minimum and normalise to a probability vector.

    Works row-wise when ``user_emb`` is a matrix of embeddings.
    """
    emb = np.asarray(user_emb, dtype=float)
    if emb.shape[-1] != f.singular_values.size:
        raise ValueError(f"embedding has {emb.shape[-1]} dimensions, factorisation has {f.singular_values.size}")
    sc = np.atleast_2d(scores(emb, f))
    shifted = sc - sc.min(axis=1, keepdims=True)
    total = shifted.sum(axis=1, keepdims=True)
    flat = total[:, 0] <= 1e-300
    out = np.empty_like(shifted)
    out[~flat] = shifted[~flat] / total[~flat]
    out[flat] = 1.0 / sc.shape[1]
    return out[0] if emb.ndim == 1 else out


@dataclass(frozen=True)
class EpsilonBall:
    centroid: np.ndarray
    radius: float

    def __post_init__(self):
        if self.radius < 0:
            raise ValueError("radius must be non-negative")


def control_ball(control_embs):
    """Ball centred at the mean control embedding, radius twice the summed variances."""
    x = np.asarray(control_embs, dtype=float)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ValueError("need at least two control embeddings")
    mu = x.mean(axis=0)
    return EpsilonBall(mu, float(2.0 * x.var(axis=0).sum()))


def sample_ball(ball, rng, size=None):
    """Uniform draws from the ball: Gaussian direction times ``radius * u**(1/k)``."""
    k = ball.centroid.size
    n = 1 if size is None else int(size)
    if ball.radius == 0:
        out = np.tile(ball.centroid, (n, 1))
    else:
        g = rng.standard_normal((n, k))
        g /= np.linalg.norm(g, axis=1, keepdims=True)
        r = ball.radius * rng.random(n) ** (1.0 / k)
        out = ball.centroid + g * r[:, None]
    return out[0] if size is None else out


def sample_treatment_embedding(control_embs, rng, size=None):
    return sample_ball(control_ball(control_embs), rng, size)


# -- synthetic engagement -------------------------------------------------------------


def simulate_engagement_matrix(n_users, n_posts, n_days, k, rng, toxic_frac=0.2, daily_rate=2.0):
    """Synthetic users-by-posts engagement counts.

    Each user has an activity level drawn independently of taste and splits
    it between toxic and other posts in proportion to their taste ``p``;
    within each kind, posts are engaged with in proportion to a popularity
    weight.  Counts over ``n_days`` are Poisson.  The expected matrix has
    rank two (a popularity factor and a taste factor), and because activity
    only rescales a user's row it leaves their assignment probabilities
    unchanged.
    The generative model is invented for testing; ``k`` is carried only to
    size the later factorisation.
    """
    if min(n_users, n_posts, n_days, k) < 1:
        raise ValueError("all dimensions must be positive")
    n_toxic = min(n_posts - 1, max(1, int(round(toxic_frac * n_posts)))) if n_posts > 1 else 1
    toxic = np.zeros(n_posts, dtype=bool)
    toxic[:n_toxic] = True
    tastes = rng.beta(2.0, 8.0, n_users)
    activity = rng.gamma(4.0, 0.25, n_users)
    popularity = rng.gamma(1.0, 1.0, n_posts)
    weight = np.where(toxic, popularity / popularity[toxic].sum(), 0.0)
    if (~toxic).any():
        weight[~toxic] = popularity[~toxic] / popularity[~toxic].sum()
    affinity = np.where(toxic[None, :], tastes[:, None], 1.0 - tastes[:, None])
    rate = daily_rate * n_days * n_posts * activity[:, None] * weight[None, :] * affinity
    counts = rng.poisson(rate).astype(float)
    return EngagementMatrix(counts, toxic, tastes)


def toxic_assignment(probs, toxic):
    """Probability that an assigned post is toxic."""
    return np.asarray(probs) @ np.asarray(toxic, dtype=float)


@dataclass(frozen=True)
class RandomizationStudy:
    control_q: np.ndarray
    treated_q: np.ndarray
    counterfactual_q: np.ndarray
    control_popularity: np.ndarray
    treated_popularity: np.ndarray


def randomization_study(m, k, treated, n_days, rng, backend=None):
    """Control and randomised assignment on one factorised matrix.

    Control users keep their own embedding; treated users get a fresh
    epsilon-ball embedding each day and the daily toxic shares are averaged.
    ``counterfactual_q`` is what treated users would have received under
    personalisation.  Popularity is the expected total control-user
    engagement of the posts a user is assigned.
    """
    f = factorize(m, k, backend=backend)
    treated = np.asarray(treated, dtype=bool)
    emb = f.user_factors
    ball = control_ball(emb[~treated])
    own = assignment_probabilities(emb, f)
    pop = m.entries[~treated].sum(axis=0)
    draws = np.zeros((int(treated.sum()), m.shape[1]))
    for _ in range(n_days):
        draws += assignment_probabilities(sample_ball(ball, rng, int(treated.sum())), f)
    draws /= n_days
    return RandomizationStudy(
        control_q=toxic_assignment(own[~treated], m.toxic),
        treated_q=toxic_assignment(draws, m.toxic),
        counterfactual_q=toxic_assignment(own[treated], m.toxic),
        control_popularity=own[~treated] @ pop,
        treated_popularity=draws @ pop,
    )


def write_matrix(m, path):
    a = m.entries if isinstance(m, EngagementMatrix) else np.asarray(m, dtype=float)
    df = pd.DataFrame(a, columns=[f"post_{j}" for j in range(a.shape[1])])
    df.to_csv(path, index=False, float_format="%.17g", lineterminator="\n")


def read_matrix(path):
    df = pd.read_csv(path, float_precision="round_trip")
    expected = [f"post_{j}" for j in range(df.shape[1])]
    if list(df.columns) != expected:
        raise ValueError("matrix CSV header must be post_0 .. post_{n-1}")
    return EngagementMatrix(df.to_numpy(dtype=float))
