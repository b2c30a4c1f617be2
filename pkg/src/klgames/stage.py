"""The KL-regularized bilinear stage game and its equilibrium solver.

Player 1 maximizes and player 2 minimizes

    obj(pi1, pi2) = pi1' Q pi2 - KL(pi1 || ref1) / eta + KL(pi2 || ref2) / eta.

The objective is strongly concave-convex, so the equilibrium is unique.  The
solver runs simultaneous mirror steps with the stepsize 2 eta / (t + 2),
starting at the references, and stops as soon as the closed-form
exploitability drops below ``tol``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.special import softmax

from klgames.errors import ConvergenceError, DimensionError, DomainError, SupportError
from klgames.game import _safe_log, kl_rows, masked_lse, masked_softmax

MIN_ETA = 1e-8


@dataclass(frozen=True)
class StageGame:
    payoff: np.ndarray
    eta: float
    ref1: np.ndarray
    ref2: np.ndarray

    def __post_init__(self):
        payoff = np.atleast_2d(np.asarray(self.payoff, dtype=float))
        ref1 = np.asarray(self.ref1, dtype=float)
        ref2 = np.asarray(self.ref2, dtype=float)
        if payoff.shape != (ref1.size, ref2.size) or ref1.ndim != 1 or ref2.ndim != 1:
            raise DimensionError(f"payoff {payoff.shape} does not match refs {ref1.shape}, {ref2.shape}")
        _check_eta(self.eta)
        for name, r in (("ref1", ref1), ("ref2", ref2)):
            if np.any(r < 0) or abs(r.sum() - 1.0) > 1e-12:
                raise DomainError(f"{name} is not a probability vector")
        object.__setattr__(self, "payoff", payoff)
        object.__setattr__(self, "ref1", ref1)
        object.__setattr__(self, "ref2", ref2)


class StageSolution(NamedTuple):
    pi1: np.ndarray
    pi2: np.ndarray
    value: float
    exploitability: float
    iterations: int


def _check_eta(eta):
    if not eta >= MIN_ETA or not np.isfinite(eta):
        raise DomainError(f"eta must be >= {MIN_ETA}, got {eta!r}")


def gibbs_response(q, eta, ref, direction="maximize"):
    """Closed-form regularized best response: ref * exp(+-eta q), normalized on supp(ref)."""
    q = np.asarray(q, dtype=float)
    ref = np.asarray(ref, dtype=float)
    if q.shape != ref.shape:
        raise DimensionError(f"payoff {q.shape} and ref {ref.shape} differ")
    if not eta > 0:
        raise DomainError(f"eta must be positive, got {eta!r}")
    if not np.any(ref > 0):
        raise DomainError("reference has no support")
    sign = _direction_sign(direction)
    return masked_softmax(_safe_log(ref) + sign * eta * q, ref > 0)


def _direction_sign(direction):
    if direction in ("maximize", "ascent"):
        return 1.0
    if direction in ("minimize", "descent"):
        return -1.0
    raise DomainError(f"unknown direction {direction!r}")


def stage_objective(sg: StageGame, pi1, pi2) -> float:
    pi1 = np.asarray(pi1, dtype=float)
    pi2 = np.asarray(pi2, dtype=float)
    return float(pi1 @ sg.payoff @ pi2 - kl_rows(pi1, sg.ref1) / sg.eta + kl_rows(pi2, sg.ref2) / sg.eta)


def _batch_exploitability(Q, eta, r1, r2, p1, p2):
    """Exploitability and value of a batch of stage games, shape (B,)."""
    m1, m2 = r1 > 0, r2 > 0
    kl1 = kl_rows(p1, r1) / eta
    kl2 = kl_rows(p2, r2) / eta
    q1 = np.einsum("bij,bj->bi", Q, p2)
    q2 = np.einsum("bij,bi->bj", Q, p1)
    up = masked_lse(_safe_log(r1) + eta * q1, m1) / eta + kl2
    down = -masked_lse(_safe_log(r2) - eta * q2, m2) / eta - kl1
    value = np.einsum("bi,bi->b", p1, q1) - kl1 + kl2
    return np.maximum(up - down, 0.0), value


def stage_exploitability(sg: StageGame, pi1, pi2) -> float:
    """max_mu obj(mu, pi2) - min_nu obj(pi1, nu), both inner problems in closed form."""
    pi1 = np.asarray(pi1, dtype=float)
    pi2 = np.asarray(pi2, dtype=float)
    if np.any((pi1 > 0) & (sg.ref1 <= 0)) or np.any((pi2 > 0) & (sg.ref2 <= 0)):
        raise SupportError("stage policy outside reference support")
    gap, _ = _batch_exploitability(sg.payoff[None], sg.eta, sg.ref1[None], sg.ref2[None], pi1[None], pi2[None])
    return float(gap[0])


def mirror_logits(logp, q, gamma, eta, log_ref, mask, sign):
    """One regularized mirror step in log space, renormalized on the mask.

    logp and log_ref hold finite placeholders (0) off the mask.
    """
    b = gamma / eta
    w = (1.0 - b) * logp + sign * gamma * q + b * log_ref
    w = np.where(mask, w, 0.0)
    return np.where(mask, w - masked_lse(w, mask)[..., None], 0.0)


def solve_stage_batch(Q, eta, r1, r2, tol=1e-10, max_iter=10**6, init=None, polish=False):
    """Solve B independent stage games at once.

    Each game is frozen at its first certified iterate, so the result for a
    given game does not depend on what else is in the batch.

    Returns (pi1 (B,A1), pi2 (B,A2), value (B,), exploitability (B,), iterations (B,)).
    """
    Q = np.asarray(Q, dtype=float)
    r1 = np.asarray(r1, dtype=float)
    r2 = np.asarray(r2, dtype=float)
    _check_eta(eta)
    if not tol > 0:
        raise DomainError(f"tol must be positive, got {tol!r}")
    if max_iter < 1:
        raise DomainError(f"max_iter must be >= 1, got {max_iter!r}")
    B = Q.shape[0]
    m1, m2 = r1 > 0, r2 > 0
    lr1, lr2 = _safe_log(r1), _safe_log(r2)
    if init is None:
        l1, l2 = lr1.copy(), lr2.copy()
    else:
        p1_0, p2_0 = (np.broadcast_to(np.asarray(x, dtype=float), r.shape) for x, r in zip(init, (r1, r2)))
        if np.any((p1_0 > 0) != m1) or np.any((p2_0 > 0) != m2):
            raise SupportError("initial point must have exactly the reference support")
        l1, l2 = _safe_log(p1_0).copy(), _safe_log(p2_0).copy()

    iters = np.zeros(B, dtype=np.int64)
    gaps = np.full(B, np.inf)
    active = np.ones(B, dtype=bool)
    for t in range(max_iter + 1):
        idx = np.flatnonzero(active)
        p1 = np.where(m1[idx], np.exp(l1[idx]), 0.0)
        p2 = np.where(m2[idx], np.exp(l2[idx]), 0.0)
        g, _ = _batch_exploitability(Q[idx], eta, r1[idx], r2[idx], p1, p2)
        gaps[idx] = g
        done = g <= tol
        iters[idx[done]] = t
        active[idx[done]] = False
        if not active.any() or t == max_iter:
            break
        idx, p1, p2 = idx[~done], p1[~done], p2[~done]
        gamma = 2.0 * eta / (t + 2)
        q1 = np.einsum("bij,bj->bi", Q[idx], p2)
        q2 = np.einsum("bij,bi->bj", Q[idx], p1)
        l1[idx] = mirror_logits(l1[idx], q1, gamma, eta, lr1[idx], m1[idx], 1.0)
        l2[idx] = mirror_logits(l2[idx], q2, gamma, eta, lr2[idx], m2[idx], -1.0)

    if active.any():
        worst = float(gaps[active].max())
        raise ConvergenceError(
            f"{int(active.sum())} stage game(s) not certified after {max_iter} iterations "
            f"(exploitability {worst:.3e} > tol {tol:.1e})",
            exploitability=worst,
            iterations=max_iter,
        )
    pi1 = np.where(m1, np.exp(l1), 0.0)
    pi2 = np.where(m2, np.exp(l2), 0.0)
    pi1 /= pi1.sum(axis=1, keepdims=True)
    pi2 /= pi2.sum(axis=1, keepdims=True)
    gaps, value = _batch_exploitability(Q, eta, r1, r2, pi1, pi2)
    if polish:
        for b in range(B):
            c1, c2 = _newton_polish(Q[b], eta, r1[b], r2[b], pi1[b], pi2[b])
            g, v = _batch_exploitability(Q[b : b + 1], eta, r1[b : b + 1], r2[b : b + 1], c1[None], c2[None])
            if g[0] <= gaps[b]:
                pi1[b], pi2[b], gaps[b], value[b] = c1, c2, g[0], v[0]
    return pi1, pi2, value, gaps, iters


def _newton_polish(Q, eta, r1, r2, p1, p2, max_steps=30):
    """Refine a certified equilibrium to machine precision.

    Newton's method on the Gibbs fixed point pi1 = G(Q pi2), pi2 = G(-Q' pi1),
    restricted to the reference supports.  Falls back to the input if any
    step leaves the open simplex.
    """
    s1, s2 = r1 > 0, r2 > 0
    Qs = Q[np.ix_(s1, s2)]
    lr1, lr2 = np.log(r1[s1]), np.log(r2[s2])
    n1 = int(s1.sum())
    x = np.concatenate([p1[s1], p2[s2]])

    def residual(x):
        a, b = x[:n1], x[n1:]
        g1 = softmax(lr1 + eta * Qs @ b)
        g2 = softmax(lr2 - eta * Qs.T @ a)
        return np.concatenate([a - g1, b - g2]), g1, g2

    F, g1, g2 = residual(x)
    best = np.abs(F).max()
    for _ in range(max_steps):
        if best < 1e-16:
            break
        D1 = np.diag(g1) - np.outer(g1, g1)
        D2 = np.diag(g2) - np.outer(g2, g2)
        J = np.eye(x.size)
        J[:n1, n1:] = -eta * D1 @ Qs
        J[n1:, :n1] = eta * D2 @ Qs.T
        step = np.linalg.solve(J, -F)
        cand = x + step
        if np.any(cand <= 0):
            break
        F_new, g1_new, g2_new = residual(cand)
        err = np.abs(F_new).max()
        if not err < best:
            break
        x, F, g1, g2, best = cand, F_new, g1_new, g2_new, err
    out1 = np.zeros_like(p1)
    out2 = np.zeros_like(p2)
    out1[s1] = x[:n1] / x[:n1].sum()
    out2[s2] = x[n1:] / x[n1:].sum()
    return out1, out2


def solve_stage_equilibrium(sg: StageGame, tol=1e-10, max_iter=10**6, init=None, polish=True) -> StageSolution:
    """Certified regularized equilibrium of one stage game.

    ``init`` optionally replaces the reference starting point with another
    pair of distributions on the reference supports.  ``polish`` adds a
    Newton refinement after certification; it is kept only if the certified
    exploitability does not increase.
    """
    init_b = None if init is None else (np.asarray(init[0])[None], np.asarray(init[1])[None])
    pi1, pi2, value, gap, iters = solve_stage_batch(
        sg.payoff[None], sg.eta, sg.ref1[None], sg.ref2[None], tol=tol, max_iter=max_iter, init=init_b, polish=polish
    )
    return StageSolution(pi1[0], pi2[0], float(value[0]), float(gap[0]), int(iters[0]))
