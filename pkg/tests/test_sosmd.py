import math

import numpy as np
import pytest

from klgames.data import make_behavior_policy, sample_dataset
from klgames.errors import DimensionError, DomainError
from klgames.game import RegularizationConfig, min_ref_prob, value_scale
from klgames.harness import GameSpec, generate_random_game, make_refs, policy_distances
from klgames.rose import rose_solve
from klgames.sosmd import SosmdOptions, marginal_payoff, mirror_step, sosmd_solve, stepsize_schedule
from klgames.stage import gibbs_response


def test_stepsize_examples():
    assert stepsize_schedule(0, 0.5) == 0.5
    assert stepsize_schedule(2, 0.5) == 0.25
    for t in range(50):
        assert 0 < stepsize_schedule(t, 3.0) / 3.0 <= 1
    with pytest.raises(DomainError):
        stepsize_schedule(-1, 0.5)


def test_marginal_payoff_examples():
    Q = np.array([[[1.0, 0.0], [0.0, 1.0]]])
    assert np.allclose(marginal_payoff(Q, [0.25, 0.75], 0, 1), [0.25, 0.75])
    assert np.allclose(marginal_payoff(Q, [0.0, 1.0], 0, 1), Q[0, :, 1])
    assert np.allclose(marginal_payoff(np.full((1, 2, 3), 0.4), [0.2, 0.8], 0, 2), [0.4] * 3)
    with pytest.raises(DimensionError):
        marginal_payoff(Q, [0.2, 0.3, 0.5], 0, 1)


def test_mirror_step_full_step_is_gibbs():
    pi, q, ref = np.array([0.2, 0.5, 0.3]), np.array([0.3, -1.0, 2.0]), np.array([0.1, 0.6, 0.3])
    assert np.allclose(mirror_step(pi, q, 0.7, 0.7, ref), gibbs_response(q, 0.7, ref), atol=1e-15)
    assert np.allclose(mirror_step(pi, q, 0.7, 0.7, ref, "descent"), gibbs_response(q, 0.7, ref, "minimize"), atol=1e-15)


def test_mirror_step_fixed_point():
    ref = np.array([0.3, 0.7])
    assert np.allclose(mirror_step(ref, [0.0, 0.0], 0.2, 0.5, ref), ref, atol=1e-15)


def test_mirror_step_example():
    w = np.array([0.7**0.5 * math.exp(0.25) * 0.5**0.5, 0.3**0.5 * 0.5**0.5])
    want = w / w.sum()
    got = mirror_step([0.7, 0.3], [1.0, 0.0], 0.25, 0.5, [0.5, 0.5], "ascent")
    assert np.allclose(got, want, atol=1e-15)
    assert np.allclose(got, [0.662320, 0.337680], atol=1e-6)


def test_mirror_step_rejects_large_step():
    with pytest.raises(DomainError):
        mirror_step([0.5, 0.5], [1, 0], 0.6, 0.5, [0.5, 0.5])


@pytest.fixture
def setup(small_game):
    cfg = RegularizationConfig(0.5, make_refs("dirichlet", small_game.dims, 3))
    data = sample_dataset(small_game, make_behavior_policy(small_game), 400, 0.1, seed=1)
    return small_game, cfg, data


def test_T0_returns_refs(setup):
    game, cfg, data = setup
    res, _ = sosmd_solve(data, game.dims, cfg, 0)
    assert np.array_equal(res.policy.p1, cfg.refs.p1) and np.array_equal(res.policy.p2, cfg.refs.p2)


def test_T_domain(setup):
    game, cfg, data = setup
    with pytest.raises(DomainError):
        sosmd_solve(data, game.dims, cfg, -1)


def test_large_T_agrees_with_rose():
    game = generate_random_game(GameSpec(2, 2, 2, 2), seed=4)
    cfg = RegularizationConfig(0.5, make_refs("uniform", game.dims))
    data = sample_dataset(game, make_behavior_policy(game), 256, 0.1, seed=4)
    a = rose_solve(data, game.dims, cfg)
    b, _ = sosmd_solve(data, game.dims, cfg, 10_000)
    assert policy_distances(b.policy, a.policy)[0] <= 1e-3


def test_iterate_diagnostics_respect_bounds(setup):
    game, cfg, data = setup
    H, T = 3, 300
    lam = value_scale(cfg.eta, min_ref_prob(cfg.refs))
    res, diag = sosmd_solve(data, game.dims, cfg, T, options=SosmdOptions(reference=True, value_bound=lam))
    t = np.arange(T + 1)
    assert np.allclose(diag.gamma[0], 2 * cfg.eta / (t[:-1] + 2))
    assert diag.default_schedule
    assert np.all(np.isfinite(diag.max_log_ratio))
    assert diag.max_log_ratio.max() <= 2 * cfg.eta * H * lam
    assert np.all(diag.kl[:, 1:] <= 36 * cfg.eta**2 * H**2 * lam**2 / (t[1:] + 1))
    assert np.all(diag.l1 <= np.sqrt(2 * diag.kl) + 1e-12)
    assert np.nanmin(diag.descent) >= 0
    rows = list(diag.rows("r"))
    assert len(rows) == H * (T + 1) and rows[0][:4] == ("r", 1, "sup_s", 0)


def test_last_iterate_reads_out_final_policy(setup):
    game, cfg, data = setup
    res, diag = sosmd_solve(data, game.dims, cfg, 50, options=SosmdOptions(reference=True))
    # last recorded L1 at step H matches the returned policy's distance to the reference
    ref = diag.reference
    l1 = max(np.abs(res.policy.p1[2] - ref.p1[2]).sum(-1).max(), np.abs(res.policy.p2[2] - ref.p2[2]).sum(-1).max())
    assert l1 == pytest.approx(diag.l1[2, -1], abs=1e-12)


def test_custom_schedule(setup):
    game, cfg, data = setup
    res, diag = sosmd_solve(data, game.dims, cfg, 20, options=SosmdOptions(schedule=lambda t, eta: eta / 4))
    assert not diag.default_schedule and np.all(diag.gamma == cfg.eta / 4)
    with pytest.raises(DomainError):
        sosmd_solve(data, game.dims, cfg, 5, options=SosmdOptions(schedule=lambda t, eta: 2 * eta))
