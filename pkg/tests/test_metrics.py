import numpy as np
import pytest
from scipy.stats import special_ortho_group

from polcm import fixtures
from polcm.covariance import group_sign_flip, orthogonal_transform, support_mask
from polcm.metrics import mse_group_sign, mse_orthogonal

from helpers import population


def test_group_sign_examples():
    g, fs, _, _ = population("fig3")
    mask = support_mask(g)
    assert mse_group_sign(fs, fs, mask) == 0.0
    flipped = group_sign_flip(fs, [0, 2], g.num_latent)
    assert mse_group_sign(fs, flipped, mask) == 0.0
    assert mse_group_sign(flipped, fs, mask) == 0.0
    f = np.array([[0.0, 0.5], [0.0, 0.0]])
    fh = np.array([[0.0, 0.4], [0.0, 0.0]])
    assert mse_group_sign(f, fh) == pytest.approx(0.01)


def test_group_sign_counts_structural_edges():
    f = np.array([[0.0, 0.5, 0.0], [0.0, 0.0, 0.0], [0.0, 0.0, 0.0]])
    fh = np.array([[0.0, 0.4, 0.0], [0.0, 0.0, 0.1], [0.0, 0.0, 0.0]])
    mask = np.zeros((3, 3), dtype=bool)
    mask[0, 1] = mask[1, 2] = True
    assert mse_group_sign(f, fh, mask) == pytest.approx((0.01 + 0.01) / 2)


def test_group_sign_errors():
    with pytest.raises(ValueError):
        mse_group_sign(np.zeros((2, 2)), np.zeros((3, 3)))
    f = np.array([[0.0, 0.5], [0.0, 0.0]])
    with pytest.raises(ValueError):
        mse_group_sign(f, np.array([[0.0, 0.5], [0.2, 0.0]]))


def test_orthogonal_of_identical_is_zero():
    g, fs, _, _ = population("ot_pair")
    res = mse_orthogonal(fs, fs, g.num_latent, support_mask(g))
    assert res.mse == 0.0
    np.testing.assert_allclose(res.q_star.T @ res.q_star, np.eye(g.num_latent), atol=1e-8)


@pytest.mark.parametrize("name", fixtures.OT_FIXTURES)
def test_orthogonal_undoes_rotation(name):
    g, fs, oms, _ = population(name, seed=3)
    groups = {"ot_triple": [0, 1, 2]}.get(name, [0, 1])
    q = np.eye(g.num_latent)
    q[np.ix_(groups, groups)] = special_ortho_group.rvs(len(groups), random_state=5)
    rotated, _ = orthogonal_transform(fs, oms, q, g.num_latent)
    mask = support_mask(g)
    assert mse_group_sign(fs, rotated, mask) > 1e-4
    res = mse_orthogonal(fs, rotated, g.num_latent, mask)
    assert res.mse <= 1e-6
    assert np.max(np.abs(res.q_star.T @ res.q_star - np.eye(g.num_latent))) <= 1e-8


def test_orthogonal_never_above_group_sign(rng):
    g, fs, _, _ = population("ot_latent_child")
    mask = support_mask(g)
    for _ in range(5):
        noisy = fs + mask * rng.normal(scale=0.2, size=fs.shape)
        r = mse_orthogonal(fs, noisy, g.num_latent, mask, restarts=8, seed=1)
        assert r.mse <= mse_group_sign(fs, noisy, mask) + 1e-15
        full = mse_orthogonal(fs, noisy, g.num_latent, mask, full_q=True, restarts=8, iters=200)
        assert full.q_star.shape == (g.num_nodes, g.num_nodes)
        assert full.mse <= mse_group_sign(fs, noisy, mask) + 1e-15


def test_orthogonal_dimension_mismatch():
    with pytest.raises(ValueError):
        mse_orthogonal(np.zeros((3, 3)), np.zeros((4, 4)), 1)
