"""Brute-force grid references for tiny stage games.

Grids step the first |A|-1 coordinates uniformly; the last coordinate takes
the remaining mass.  Both searched objectives are concave over the simplex,
so the search runs coarse-to-fine: a full grid at 1e-2, then boxes of
+-3 coarse steps around the incumbent at each finer resolution down to
``grid_res``.  Exhaustive search at 1e-4 over a 3-simplex alone would touch
5e7 points.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np
from scipy.special import logsumexp, xlogy

from klgames.errors import CapacityError, DomainError
from klgames.stage import StageGame

MAX_ACTIONS = 3
COARSE_RES = 1e-2
WINDOW = 3


class OracleResult(NamedTuple):
    pi1: np.ndarray
    pi2: np.ndarray
    value: float
    grid_res: float


def _check(num_actions, grid_res):
    if num_actions > MAX_ACTIONS:
        raise CapacityError(f"grid oracle supports at most {MAX_ACTIONS} actions, got {num_actions}")
    if not 1e-5 <= grid_res <= 1e-2:
        raise DomainError(f"grid_res must lie in [1e-5, 1e-2], got {grid_res!r}")


def simplex_grid(num_actions, res, center=None, halfwidth=None):
    """Grid points of the simplex with spacing ``res``, optionally inside a box.

    The box is centered at ``center`` (first |A|-1 coordinates) with the
    given half-width in probability units.  Returns shape (N, num_actions).
    """
    m = int(round(1.0 / res))
    if num_actions == 1:
        return np.ones((1, 1))
    lo = np.zeros(num_actions - 1, dtype=np.int64)
    hi = np.full(num_actions - 1, m, dtype=np.int64)
    if center is not None:
        c = np.asarray(center)[: num_actions - 1] * m
        w = halfwidth * m
        lo = np.maximum(np.floor(c - w), 0).astype(np.int64)
        hi = np.minimum(np.ceil(c + w), m).astype(np.int64)
    axes = [np.arange(a, b + 1) for a, b in zip(lo, hi)]
    ks = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, num_actions - 1)
    ks = ks[ks.sum(axis=1) <= m]
    pts = np.empty((ks.shape[0], num_actions))
    pts[:, :-1] = ks / m
    pts[:, -1] = (m - ks.sum(axis=1)) / m
    return pts


def _kl_to_ref(pts, ref):
    """KL(pt || ref) per grid point; +inf where a point leaves the ref support."""
    off = np.any((pts > 0) & (ref <= 0), axis=1)
    with np.errstate(divide="ignore"):
        kl = xlogy(pts, pts).sum(axis=1) - xlogy(pts, np.where(ref > 0, ref, 1.0)).sum(axis=1)
    return np.where(off, np.inf, kl)


def _levels(grid_res):
    res = [COARSE_RES]
    while res[-1] / 10 > grid_res * (1 + 1e-9):
        res.append(res[-1] / 10)
    if res[-1] > grid_res * (1 + 1e-9):
        res.append(grid_res)
    return res


def _grid_argmax(score, num_actions, grid_res):
    """Maximize a concave score over the simplex grid, coarse to fine."""
    best = None
    prev = None
    for res in _levels(grid_res):
        if best is None:
            pts = simplex_grid(num_actions, res)
        else:
            pts = simplex_grid(num_actions, res, center=best, halfwidth=WINDOW * prev)
        vals = score(pts)
        i = int(np.argmax(vals))
        best, best_val, prev = pts[i], vals[i], res
    return best, float(best_val)


def _maximin_score(Q, eta, ref1, ref2):
    """min over pi2 of the stage objective, exact via the log-sum-exp identity."""
    m2 = ref2 > 0
    lr2 = np.log(ref2[m2])

    def score(pts):
        q2 = pts @ Q[:, m2]
        return -_kl_to_ref(pts, ref1) / eta - logsumexp(lr2 - eta * q2, axis=1) / eta

    return score


def brute_force_stage_ne(sg: StageGame, grid_res=1e-4) -> OracleResult:
    """Grid maximin for player 1 and grid minimax for player 2.

    The inner problem of each search is solved exactly in closed form.  The
    value is the maximin grid value; its error is O(grid_res).
    """
    A1, A2 = sg.payoff.shape
    _check(max(A1, A2), grid_res)
    pi1, value = _grid_argmax(_maximin_score(sg.payoff, sg.eta, sg.ref1, sg.ref2), A1, grid_res)
    # minimax for player 2 is the maximin of the negated, transposed game
    pi2, _ = _grid_argmax(_maximin_score(-sg.payoff.T, sg.eta, sg.ref2, sg.ref1), A2, grid_res)
    return OracleResult(pi1, pi2, value, grid_res)


def brute_force_best_response_value(q, eta, ref, grid_res=1e-4) -> float:
    """Grid maximum of <pi, q> - KL(pi || ref) / eta."""
    q = np.asarray(q, dtype=float)
    ref = np.asarray(ref, dtype=float)
    _check(q.size, grid_res)
    if not eta > 0:
        raise DomainError(f"eta must be positive, got {eta!r}")

    def score(pts):
        return pts @ q - _kl_to_ref(pts, ref) / eta

    return _grid_argmax(score, q.size, grid_res)[1]
