import math

import numpy as np
import pytest

from klgames.errors import CapacityError, DomainError
from klgames.oracle import brute_force_best_response_value, brute_force_stage_ne, simplex_grid
from klgames.stage import StageGame, solve_stage_equilibrium

U2 = np.array([0.5, 0.5])


def test_simplex_grid_shapes():
    assert simplex_grid(2, 0.1).shape == (11, 2)
    assert simplex_grid(3, 0.1).shape == (66, 3)
    assert np.allclose(simplex_grid(3, 0.01).sum(1), 1.0)


def test_zero_payoff_returns_refs():
    ref1, ref2 = np.array([0.3, 0.7]), np.array([0.2, 0.3, 0.5])
    o = brute_force_stage_ne(StageGame(np.zeros((2, 3)), 1.0, ref1, ref2), 1e-3)
    assert np.abs(o.pi1 - ref1).max() <= 1e-3 and np.abs(o.pi2 - ref2).max() <= 1e-3


def test_matching_pennies():
    o = brute_force_stage_ne(StageGame([[1, -1], [-1, 1]], 1.0, U2, U2), 1e-4)
    assert np.abs(o.pi1 - U2).max() <= 1e-4 and np.abs(o.pi2 - U2).max() <= 1e-4 and abs(o.value) <= 1e-4


def test_cross_validates_with_solver():
    sg = StageGame([[1, 0], [0, 0]], 1.0, U2, U2)
    o = brute_force_stage_ne(sg, 1e-4)
    s = solve_stage_equilibrium(sg)
    assert np.abs(o.pi1 - s.pi1).sum() <= 5e-4 and np.abs(o.pi2 - s.pi2).sum() <= 5e-4
    assert abs(o.value - s.value) <= 1e-4


def test_br_value_examples():
    assert abs(brute_force_best_response_value([0, 0], 1.0, U2, 1e-3)) <= 1e-6
    assert brute_force_best_response_value([1, 0], 1.0, U2, 1e-4) == pytest.approx(math.log((math.e + 1) / 2), abs=1e-4)
    assert brute_force_best_response_value([0.3, 0.9], 2.0, [1.0, 0.0], 1e-3) == 0.3


def test_br_value_agrees_with_lse_three_actions():
    rng = np.random.default_rng(0)
    for eta in (0.2, 1.0, 5.0):
        q, ref = rng.random(3), rng.dirichlet(np.ones(3))
        lse = np.log(ref @ np.exp(eta * q)) / eta
        assert abs(brute_force_best_response_value(q, eta, ref, 1e-4) - lse) <= 1e-4


def test_capacity_and_domain():
    with pytest.raises(CapacityError):
        brute_force_best_response_value(np.zeros(4), 1.0, np.full(4, 0.25), 1e-2)
    with pytest.raises(CapacityError):
        brute_force_stage_ne(StageGame(np.zeros((4, 2)), 1.0, np.full(4, 0.25), U2), 1e-2)
    with pytest.raises(DomainError):
        brute_force_best_response_value([0, 0], 1.0, U2, 0.5)
