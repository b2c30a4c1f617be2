import numpy as np
import pytest

from klgames.data import FunctionClass, make_behavior_policy, sample_dataset
from klgames.errors import ConvergenceError, DimensionError
from klgames.game import GameDims, JointPolicy, RegularizationConfig, duality_gap, min_ref_prob, value_scale
from klgames.harness import GameSpec, generate_random_game, make_refs
from klgames.rose import rose_solve, solve_game
from klgames.stage import StageGame, gibbs_response, solve_stage_equilibrium


def test_single_step_reduces_to_stage_solves():
    game = generate_random_game(GameSpec(1, 3, 2, 3), seed=1)
    cfg = RegularizationConfig(1.0, make_refs("dirichlet", game.dims, 1))
    data = sample_dataset(game, make_behavior_policy(game), 2000, 0.0, seed=0)
    res = rose_solve(data, game.dims, cfg)
    assert not (~res.coverage).any()
    for s in range(3):
        sol = solve_stage_equilibrium(StageGame(game.rewards[0, s], 1.0, cfg.refs.p1[0, s], cfg.refs.p2[0, s]))
        assert np.abs(sol.pi1 - res.policy.p1[0, s]).sum() <= 1e-12
        assert np.abs(sol.pi2 - res.policy.p2[0, s]).sum() <= 1e-12
        assert res.v_hat.V[0, s] == pytest.approx(sol.value, abs=1e-12)


def test_exact_q_bypass_gives_zero_gap(small_game, small_cfg):
    exact = solve_game(small_game, small_cfg)
    data = sample_dataset(small_game, make_behavior_policy(small_game), 5, 0.1, seed=0)
    res = rose_solve(data, small_game.dims, small_cfg, fitter=lambda h, rec, V_next: exact.q_hat[h])
    assert duality_gap(small_game, res.policy, small_cfg) <= 1e-8


def test_gibbs_consistency_of_learned_policy(small_game, small_cfg):
    data = sample_dataset(small_game, make_behavior_policy(small_game), 300, 0.1, seed=2)
    res = rose_solve(data, small_game.dims, small_cfg)
    for h in range(3):
        q1 = np.einsum("sab,sb->sa", res.q_hat[h], res.policy.p2[h])
        q2 = np.einsum("sab,sa->sb", res.q_hat[h], res.policy.p1[h])
        g1 = gibbs_response(q1, small_cfg.eta, small_cfg.refs.p1[h])
        g2 = gibbs_response(q2, small_cfg.eta, small_cfg.refs.p2[h], "minimize")
        assert np.abs(g1 - res.policy.p1[h]).sum(-1).max() <= 1e-8
        assert np.abs(g2 - res.policy.p2[h]).sum(-1).max() <= 1e-8
    assert res.stage_exploitability.max() <= 1e-10


def test_value_bound_with_bounded_finite_class(small_game, small_cfg):
    # members at step h stay inside the backup range |Q_h| <= 1 + (H - h - 1) lambda (0-based h)
    H = 3
    lam = value_scale(small_cfg.eta, min_ref_prob(small_cfg.refs))
    rng = np.random.default_rng(0)
    width = (1 + (H - 1 - np.arange(H)) * lam).reshape(H, 1, 1, 1, 1)
    fc = FunctionClass(width * rng.uniform(-1, 1, (H, 4, 4, 2, 3)), per_step=True)
    fc.check_bounded(small_cfg, H)
    data = sample_dataset(small_game, make_behavior_policy(small_game), 100, 0.1, seed=0)
    res = rose_solve(data, small_game.dims, small_cfg, fitter=fc)
    for h in range(H):
        assert np.all(np.abs(res.v_hat.V[h]) <= (H - h) * lam)
    assert len(res.class_index) == H


def test_deterministic(small_game, small_cfg):
    data = sample_dataset(small_game, make_behavior_policy(small_game), 100, 0.1, seed=0)
    a = rose_solve(data, small_game.dims, small_cfg)
    b = rose_solve(data, small_game.dims, small_cfg)
    assert np.array_equal(a.policy.p1, b.policy.p1) and np.array_equal(a.v_hat.V, b.v_hat.V)


def test_dims_mismatch(small_game, small_cfg):
    data = sample_dataset(small_game, make_behavior_policy(small_game), 10, 0.1, seed=0)
    with pytest.raises(DimensionError):
        rose_solve(data, GameDims(3, 4, 2, 2), small_cfg)


def test_convergence_error_names_step(small_game):
    cfg = RegularizationConfig(5.0, make_refs("dirichlet", small_game.dims, 0))
    data = sample_dataset(small_game, make_behavior_policy(small_game), 100, 0.1, seed=0)
    with pytest.raises(ConvergenceError, match="h=2"):
        rose_solve(data, small_game.dims, cfg, max_iter=2)


def test_more_data_lowers_gap_for_most_seeds():
    wins = 0
    for seed in range(20):
        game = generate_random_game(GameSpec(2, 3, 2, 2), seed)
        cfg = RegularizationConfig(0.5, JointPolicy.uniform(game.dims))
        beh = make_behavior_policy(game)
        gaps = [
            duality_gap(game, rose_solve(sample_dataset(game, beh, n, 0.1, seed=seed), game.dims, cfg).policy, cfg)
            for n in (64, 4096)
        ]
        wins += gaps[1] < gaps[0]
    assert wins >= 18
