import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from feedsim._accel import HAVE_NUMBA
from feedsim.recommender import (
    EngagementMatrix, EpsilonBall, assignment_probabilities, control_ball, factorize, randomization_study,
    read_matrix, sample_ball, sample_treatment_embedding, simulate_engagement_matrix, toxic_assignment,
    write_matrix,
)

needs_numba = pytest.mark.skipif(not HAVE_NUMBA, reason="numba backend disabled")
R = np.array([[1.0, 0.0], [0.0, 2.0], [3.0, 0.0]])


def oracle_svd(a):
    """numpy's LAPACK SVD with the first-nonzero-entry sign convention."""
    u, s, vt = np.linalg.svd(a, full_matrices=False)
    for j in range(u.shape[1]):
        col = u[:, j]
        first = col[np.flatnonzero(np.abs(col) > 1e-12)[0]]
        if first < 0:
            u[:, j] *= -1
            vt[j] *= -1
    return u, s, vt.T


@pytest.mark.parametrize("backend", ["numpy", pytest.param("numba", marks=needs_numba)])
def test_figure_example_exact(backend):
    f = factorize(R, backend=backend)
    r10 = np.sqrt(10.0)
    assert np.allclose(f.user_factors, [[1 / r10, 0], [0, 1], [3 / r10, 0]], atol=1e-10, rtol=0)
    assert np.allclose(f.singular_values, [r10, 2.0], atol=1e-10, rtol=0)
    assert np.allclose(f.post_factors.T, np.eye(2), atol=1e-10, rtol=0)


def test_identity_factorizes_to_identity():
    f = factorize(np.eye(4))
    assert np.allclose(f.singular_values, 1.0)
    assert np.allclose(np.abs(f.user_factors), np.eye(4)) or np.allclose(np.abs(f.user_factors @ f.post_factors.T), np.eye(4))
    assert np.allclose(f.reconstruct(), np.eye(4), atol=1e-12)


def test_all_ones_round_trip():
    f = factorize(np.ones((2, 2)))
    assert np.allclose(f.reconstruct(), 1.0, atol=1e-12)
    assert f.singular_values[1] == pytest.approx(0.0, abs=1e-12)


@pytest.mark.parametrize("shape", [(6, 4), (4, 6), (30, 7), (1, 5), (5, 1)])
def test_matches_lapack_and_reconstructs(shape):
    a = np.random.default_rng(sum(shape)).normal(size=shape)
    f = factorize(a)
    u, s, v = oracle_svd(a)
    assert np.allclose(f.singular_values, s, atol=1e-10)
    assert np.linalg.norm(f.reconstruct() - a) < 1e-8
    k = min(shape)
    assert np.allclose(f.user_factors.T @ f.user_factors, np.eye(k), atol=1e-8)
    assert np.allclose(f.post_factors.T @ f.post_factors, np.eye(k), atol=1e-8)
    assert np.allclose(f.user_factors, u, atol=1e-8)
    assert np.allclose(f.post_factors, v, atol=1e-8)


def test_truncated_rank_and_order():
    a = np.random.default_rng(2).normal(size=(20, 8))
    f = factorize(a, k=3)
    assert f.user_factors.shape == (20, 3) and f.post_factors.shape == (8, 3)
    assert np.all(np.diff(f.singular_values) <= 0) and np.all(f.singular_values >= 0)
    with pytest.raises(ValueError):
        factorize(a, k=9)
    with pytest.raises(ValueError):
        factorize(np.ones(3))


def test_rank_deficient_basis_is_orthonormal():
    a = np.outer(np.arange(1.0, 7.0), [1.0, 2.0, 0.5])
    f = factorize(a)
    assert np.allclose(f.user_factors.T @ f.user_factors, np.eye(3), atol=1e-8)
    assert np.linalg.norm(f.reconstruct() - a) < 1e-8


@needs_numba
def test_backends_agree_on_random_matrix():
    a = np.random.default_rng(4).poisson(1.0, size=(60, 12)).astype(float)
    fa, fb = factorize(a, backend="numpy"), factorize(a, backend="numba")
    assert np.allclose(fa.singular_values, fb.singular_values, atol=1e-12)
    assert np.allclose(fa.user_factors, fb.user_factors, atol=1e-10)


@settings(max_examples=40, deadline=None)
@given(rows=st.integers(1, 8), cols=st.integers(1, 8), seed=st.integers(0, 2**32 - 1))
def test_reconstruction_property(rows, cols, seed):
    a = np.random.default_rng(seed).normal(size=(rows, cols))
    f = factorize(a)
    assert np.linalg.norm(f.reconstruct() - a) < 1e-8
    assert f.singular_values == pytest.approx(np.linalg.svd(a, compute_uv=False), abs=1e-9)


# -- assignment ---------------------------------------------------------------------

def test_first_user_prefers_first_post():
    f = factorize(R)
    probs = assignment_probabilities(f.user_factors[0], f)
    assert probs[0] > probs[1]
    assert probs.sum() == pytest.approx(1.0, abs=1e-12) and (probs >= 0).all()


def test_equal_scores_give_uniform():
    f = factorize(np.eye(3))
    emb = np.zeros(3)
    assert np.allclose(assignment_probabilities(emb, f), 1 / 3)
    with pytest.raises(ValueError):
        assignment_probabilities(np.zeros(2), f)


def test_toxic_assignment_follows_taste_order():
    # three users with revealed engagement on two toxic posts (0, 1) and two others
    m = np.array([[6.0, 4.0, 3.0, 1.0],
                  [4.0, 3.0, 4.0, 2.0],
                  [2.0, 1.0, 6.0, 3.0]])
    f = factorize(m, k=2)
    probs = assignment_probabilities(f.user_factors, f)
    q = toxic_assignment(probs, [True, True, False, False])
    assert q[0] > q[1] > q[2]
    # hand enumeration for the first user: shift scores by the minimum and normalise
    sc = (f.user_factors[0] * f.singular_values) @ f.post_factors.T
    shifted = sc - sc.min()
    assert probs[0] == pytest.approx(shifted / shifted.sum(), abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_probabilities_form_distribution(seed):
    rng = np.random.default_rng(seed)
    f = factorize(rng.normal(size=(6, 5)), k=3)
    probs = assignment_probabilities(rng.normal(size=(4, 3)), f)
    assert (probs >= 0).all()
    assert np.allclose(probs.sum(axis=1), 1.0, atol=1e-12)


# -- epsilon ball ---------------------------------------------------------------------

def test_zero_variance_ball_returns_centroid():
    embs = np.tile([0.3, -0.2], (5, 1))
    out = sample_treatment_embedding(embs, np.random.default_rng(0), size=4)
    assert np.array_equal(out, np.tile([0.3, -0.2], (4, 1)))
    with pytest.raises(ValueError):
        control_ball(embs[:1])
    with pytest.raises(ValueError):
        EpsilonBall(np.zeros(2), -1.0)


def test_ball_radius_and_centre():
    embs = np.random.default_rng(1).normal(size=(500, 3))
    ball = control_ball(embs)
    assert ball.radius == pytest.approx(2 * embs.var(axis=0).sum())
    draws = sample_ball(ball, np.random.default_rng(2), size=10_000)
    assert np.all(np.linalg.norm(draws - ball.centroid, axis=1) <= ball.radius + 1e-12)
    se = draws.std(axis=0) / np.sqrt(len(draws))
    assert np.all(np.abs(draws.mean(axis=0) - ball.centroid) < 3 * se)


@pytest.mark.parametrize("k", [1, 2, 3, 5])
def test_ball_radial_law_is_uniform(k):
    ball = EpsilonBall(np.zeros(k), 2.0)
    r = np.linalg.norm(sample_ball(ball, np.random.default_rng(k), size=20_000), axis=1)
    # uniform in a k-ball: P(R <= r) = (r / radius)**k
    assert stats.kstest((r / 2.0) ** k, "uniform").pvalue > 1e-3


def test_treated_embeddings_less_spread_than_control():
    rng = np.random.default_rng(3)
    m = simulate_engagement_matrix(1000, 50, 30, 2, rng)
    f = factorize(m, k=2)
    draws = sample_treatment_embedding(f.user_factors, rng, size=10_000)
    assert np.all(draws.var(axis=0) < f.user_factors.var(axis=0))
    se = draws.std(axis=0) / np.sqrt(len(draws))
    assert np.all(np.abs(draws.mean(axis=0) - f.user_factors.mean(axis=0)) < 3 * se)


# -- synthetic engagement and the treatment distribution -------------------------------

def test_engagement_matrix_is_reproducible(tmp_path):
    a = simulate_engagement_matrix(50, 10, 5, 2, np.random.default_rng(9))
    b = simulate_engagement_matrix(50, 10, 5, 2, np.random.default_rng(9))
    assert np.array_equal(a.entries, b.entries)
    assert a.toxic.sum() == 2 and a.shape == (50, 10)
    write_matrix(a, tmp_path / "m.csv")
    assert np.array_equal(read_matrix(tmp_path / "m.csv").entries, a.entries)
    with pytest.raises(ValueError):
        simulate_engagement_matrix(0, 10, 5, 2, np.random.default_rng(0))
    with pytest.raises(ValueError):
        EngagementMatrix(np.array([[1.0, np.nan]]))


def test_embedding_marginals_are_unimodal():
    m = simulate_engagement_matrix(1000, 50, 30, 2, np.random.default_rng(0))
    u = factorize(m, k=2).user_factors
    for j in range(2):
        hist, _ = np.histogram(u[:, j], bins=15)
        peak = int(np.argmax(hist))
        assert np.all(np.diff(hist[: peak + 1]) >= -0.1 * hist.max())
        assert np.all(np.diff(hist[peak:]) <= 0.1 * hist.max())


@pytest.fixture(scope="module")
def study():
    rng = np.random.default_rng(0)
    m = simulate_engagement_matrix(2000, 50, 30, 2, rng)
    return randomization_study(m, 2, np.arange(2000) >= 1000, 30, rng)


def test_treated_assignment_mean_and_variance(study):
    se = np.sqrt(study.treated_q.var() / study.treated_q.size + study.control_q.var() / study.control_q.size)
    assert abs(study.treated_q.mean() - study.control_q.mean()) < 3 * se
    assert study.treated_q.var() < study.control_q.var()


def test_treated_curve_flat_and_control_curve_rising(study):
    slope_t = stats.linregress(study.counterfactual_q, study.treated_q).slope
    assert abs(slope_t) < 0.05
    assert np.all(np.diff(np.sort(study.control_q)) >= 0)


def test_extremity_property(study):
    gap = np.abs(study.treated_q - study.counterfactual_q)
    extremity = np.abs(study.counterfactual_q - study.control_q.mean())
    assert stats.spearmanr(gap, extremity)[0] > 0.9


@pytest.mark.xfail(reason="synthetic embeddings are representative; treated feeds come out at least as popular",
                   strict=False)
def test_treated_posts_less_popular(study):
    assert study.treated_popularity.mean() <= study.control_popularity.mean()
