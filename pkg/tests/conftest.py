import numpy as np
import pytest

from klgames.game import JointPolicy, MarkovGame, RegularizationConfig
from klgames.harness import GameSpec, generate_random_game


def single_stage_game(rewards):
    """H=1, one state game whose payoff matrix is ``rewards``."""
    r = np.asarray(rewards, dtype=float)
    A1, A2 = r.shape
    return MarkovGame(np.ones((1, 1, A1, A2, 1)), r.reshape(1, 1, A1, A2), np.ones(1))


def policy_1state(p1, p2):
    return JointPolicy(np.asarray(p1, float).reshape(1, 1, -1), np.asarray(p2, float).reshape(1, 1, -1))


@pytest.fixture
def small_game():
    return generate_random_game(GameSpec(3, 4, 2, 3), seed=11)


@pytest.fixture
def small_cfg(small_game):
    return RegularizationConfig(0.5, JointPolicy.uniform(small_game.dims))
