"""Finite-horizon zero-sum Markov games with KL-regularized values.

Arrays are 0-indexed in every dimension.  Step ``h`` of a game with
horizon ``H`` lives at index ``h`` in ``0..H-1``; value tables carry one
extra terminal row at index ``H`` that is identically zero.

Shapes used throughout::

    transitions   (H, S, A1, A2, S)
    rewards       (H, S, A1, A2)
    initial_dist  (S,)
    policy p1     (H, S, A1)
    policy p2     (H, S, A2)
    V             (H + 1, S)
    Q             (H, S, A1, A2)
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import softmax

from klgames.errors import ConsistencyError, DimensionError, DomainError, SupportError

PROB_ATOL = 1e-12
GAP_NOISE = 1e-9


def _check_simplex(arr, name, atol=PROB_ATOL):
    arr = np.asarray(arr, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise DomainError(f"{name} contains non-finite entries")
    if np.any(arr < 0):
        raise DomainError(f"{name} has negative entries")
    sums = arr.sum(axis=-1)
    bad = np.abs(sums - 1.0) > atol
    if np.any(bad):
        idx = tuple(int(i) for i in np.argwhere(bad)[0])
        raise DomainError(f"{name} row {idx} sums to {float(sums[idx])!r}, not 1")


@dataclass(frozen=True)
class MarkovGame:
    transitions: np.ndarray
    rewards: np.ndarray
    initial_dist: np.ndarray
    strict: bool = True

    def __post_init__(self):
        object.__setattr__(self, "transitions", np.asarray(self.transitions, dtype=float))
        object.__setattr__(self, "rewards", np.asarray(self.rewards, dtype=float))
        object.__setattr__(self, "initial_dist", np.asarray(self.initial_dist, dtype=float))
        self.validate()

    @property
    def horizon(self) -> int:
        return self.rewards.shape[0]

    @property
    def num_states(self) -> int:
        return self.rewards.shape[1]

    @property
    def num_actions_p1(self) -> int:
        return self.rewards.shape[2]

    @property
    def num_actions_p2(self) -> int:
        return self.rewards.shape[3]

    @property
    def dims(self) -> "GameDims":
        return GameDims(self.horizon, self.num_states, self.num_actions_p1, self.num_actions_p2)

    def validate(self):
        if self.rewards.ndim != 4 or min(self.rewards.shape) < 1:
            raise DimensionError(f"rewards must be a non-empty (H,S,A1,A2) array, got {self.rewards.shape}")
        H, S, A1, A2 = self.rewards.shape
        if self.transitions.shape != (H, S, A1, A2, S):
            raise DimensionError(
                f"transitions shape {self.transitions.shape} != {(H, S, A1, A2, S)}"
            )
        if self.initial_dist.shape != (S,):
            raise DimensionError(f"initial_dist shape {self.initial_dist.shape} != {(S,)}")
        _check_simplex(self.transitions, "transitions")
        _check_simplex(self.initial_dist, "initial_dist")
        if not np.all(np.isfinite(self.rewards)):
            raise DomainError("rewards contain non-finite entries")
        if np.any(self.rewards < 0) or np.any(self.rewards > 1):
            if self.strict:
                raise DomainError("rewards must lie in [0, 1] in strict mode")
            warnings.warn("rewards outside [0, 1]; value bounds may not hold", stacklevel=3)

    def to_dict(self):
        return {
            "horizon": self.horizon,
            "num_states": self.num_states,
            "num_actions_p1": self.num_actions_p1,
            "num_actions_p2": self.num_actions_p2,
            "transitions": self.transitions.tolist(),
            "rewards": self.rewards.tolist(),
            "initial_dist": self.initial_dist.tolist(),
        }

    @classmethod
    def from_dict(cls, d, strict=True):
        game = cls(d["transitions"], d["rewards"], d["initial_dist"], strict=strict)
        declared = (d["horizon"], d["num_states"], d["num_actions_p1"], d["num_actions_p2"])
        if tuple(int(x) for x in declared) != tuple(game.dims):
            raise DimensionError(f"declared dims {declared} disagree with arrays {tuple(game.dims)}")
        return game


@dataclass(frozen=True)
class GameDims:
    horizon: int
    num_states: int
    num_actions_p1: int
    num_actions_p2: int

    def __iter__(self):
        return iter((self.horizon, self.num_states, self.num_actions_p1, self.num_actions_p2))


@dataclass(frozen=True)
class JointPolicy:
    p1: np.ndarray
    p2: np.ndarray

    def __post_init__(self):
        p1 = np.asarray(self.p1, dtype=float)
        p2 = np.asarray(self.p2, dtype=float)
        if p1.ndim != 3 or p2.ndim != 3 or p1.shape[:2] != p2.shape[:2]:
            raise DimensionError(f"policy shapes {p1.shape} and {p2.shape} are inconsistent")
        _check_simplex(p1, "p1")
        _check_simplex(p2, "p2")
        object.__setattr__(self, "p1", p1)
        object.__setattr__(self, "p2", p2)

    @property
    def horizon(self) -> int:
        return self.p1.shape[0]

    @property
    def num_states(self) -> int:
        return self.p1.shape[1]

    def player(self, i):
        if i == 1:
            return self.p1
        if i == 2:
            return self.p2
        raise DomainError(f"player must be 1 or 2, got {i!r}")

    def check_dims(self, dims):
        H, S, A1, A2 = dims
        if self.p1.shape != (H, S, A1) or self.p2.shape != (H, S, A2):
            raise DimensionError(
                f"policy shapes {self.p1.shape}, {self.p2.shape} do not match game {(H, S, A1, A2)}"
            )

    @classmethod
    def uniform(cls, dims):
        H, S, A1, A2 = dims
        return cls(np.full((H, S, A1), 1.0 / A1), np.full((H, S, A2), 1.0 / A2))

    def to_dict(self):
        return {"p1": self.p1.tolist(), "p2": self.p2.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(d["p1"], d["p2"])


@dataclass(frozen=True)
class ValueTables:
    V: np.ndarray
    Q: Optional[np.ndarray] = None

    def __post_init__(self):
        if np.any(self.V[-1] != 0.0):
            raise ConsistencyError("terminal value row must be identically zero")


@dataclass(frozen=True)
class RegularizationConfig:
    eta: float
    refs: JointPolicy

    def __post_init__(self):
        if not (self.eta > 0 and math.isfinite(self.eta)):
            raise DomainError(f"eta must be positive and finite, got {self.eta!r}")


def save_json(obj, path):
    with open(path, "w") as fh:
        json.dump(obj, fh, sort_keys=True)
        fh.write("\n")


def load_game(path, strict=True) -> MarkovGame:
    with open(path) as fh:
        return MarkovGame.from_dict(json.load(fh), strict=strict)


def load_policy(path) -> JointPolicy:
    with open(path) as fh:
        return JointPolicy.from_dict(json.load(fh))


# --------------------------------------------------------------------------
# KL helpers


def kl_rows(p, q):
    """Row-wise KL(p || q) over the last axis, with 0 log 0 = 0.

    Raises SupportError if p puts mass outside the support of q.
    """
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise DimensionError(f"shape mismatch {p.shape} vs {q.shape}")
    pos = p > 0
    if np.any(pos & (q <= 0)):
        raise SupportError("p has mass outside the support of q")
    # Summed as p log(p/q) - p + q with log(p/q) = log1p((p - q)/q).  On
    # normalized rows this is the KL; every term is >= 0 and the first-order
    # part cancels per entry, so divergences far below 1e-16 stay accurate
    # instead of drowning in the rounding of the row sums.
    qs = np.where(q > 0, q, 1.0)
    d = p - q
    terms = np.where(pos, p * np.log1p(np.where(pos, d, 0.0) / qs) - d, q)
    return np.sum(terms, axis=-1)


def kl_divergence(p, q) -> float:
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.ndim != 1 or p.shape != q.shape:
        raise DimensionError(f"kl_divergence needs equal-length vectors, got {p.shape} and {q.shape}")
    return float(max(kl_rows(p, q), 0.0))


def min_ref_prob(refs: JointPolicy) -> float:
    """Smallest strictly positive reference probability over all steps, states and players."""
    vals = np.concatenate([refs.p1[refs.p1 > 0], refs.p2[refs.p2 > 0]])
    return float(vals.min())


def value_scale(eta, alpha) -> float:
    """The per-step value scale 1 + log(1/alpha)/eta."""
    return 1.0 + math.log(1.0 / alpha) / eta


def check_side_condition(eta, H, alpha) -> bool:
    """True iff 4 H^2 (eta + log(1/alpha)) <= 1."""
    if not eta > 0:
        raise DomainError(f"eta must be positive, got {eta!r}")
    if int(H) != H or H < 1:
        raise DomainError(f"H must be a positive integer, got {H!r}")
    if not 0 < alpha <= 1:
        raise DomainError(f"alpha must lie in (0, 1], got {alpha!r}")
    return 4.0 * H * H * (eta + math.log(1.0 / alpha)) <= 1.0


def _check_support(policy_arr, ref_arr, name):
    if np.any((policy_arr > 0) & (ref_arr <= 0)):
        idx = tuple(int(i) for i in np.argwhere((policy_arr > 0) & (ref_arr <= 0))[0])
        raise SupportError(f"{name} puts mass on action outside reference support at {idx}")


def masked_lse(logits, mask, axis=-1):
    """log-sum-exp over the entries where ``mask`` is true (max-subtracted).

    Plain numpy rather than scipy's logsumexp: it sits in the self-play inner
    loop, where scipy's per-call overhead dominates on tiny arrays.
    """
    x = np.where(mask, logits, -np.inf)
    m = x.max(axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.exp(x - m).sum(axis=axis, keepdims=True)) + m
    return np.squeeze(out, axis=axis)


def masked_softmax(logits, mask, axis=-1):
    out = softmax(np.where(mask, logits, -np.inf), axis=axis)
    return np.where(mask, out, 0.0)


def _safe_log(p):
    with np.errstate(divide="ignore"):
        return np.where(p > 0, np.log(np.where(p > 0, p, 1.0)), 0.0)


# --------------------------------------------------------------------------
# Policy evaluation and best responses


def _continuation(game, V_next, h):
    return game.rewards[h] + np.einsum("sabt,t->sab", game.transitions[h], V_next)


def evaluate_policy(game: MarkovGame, policy: JointPolicy, cfg: RegularizationConfig) -> ValueTables:
    """Regularized values of a joint policy by backward induction."""
    dims = game.dims
    policy.check_dims(dims)
    cfg.refs.check_dims(dims)
    _check_support(policy.p1, cfg.refs.p1, "p1")
    _check_support(policy.p2, cfg.refs.p2, "p2")
    H, S, A1, A2 = dims
    V = np.zeros((H + 1, S))
    Q = np.zeros((H, S, A1, A2))
    for h in range(H - 1, -1, -1):
        Q[h] = _continuation(game, V[h + 1], h)
        expected = np.einsum("sa,sab,sb->s", policy.p1[h], Q[h], policy.p2[h])
        kl1 = kl_rows(policy.p1[h], cfg.refs.p1[h])
        kl2 = kl_rows(policy.p2[h], cfg.refs.p2[h])
        V[h] = expected - kl1 / cfg.eta + kl2 / cfg.eta
    return ValueTables(V, Q)


def best_response_values(game: MarkovGame, fixed: JointPolicy, responder: int, cfg: RegularizationConfig):
    """Regularized best-response values against the non-responding player's policy.

    Returns ``(tables, br_policy)``: ``tables.V[h, s]`` is the best-response value
    (V^{dagger, nu} for responder 1, V^{mu, dagger} for responder 2) and
    ``br_policy`` has shape (H, S, A_responder) holding the Gibbs stage policies.
    Only the fixed player's half of ``fixed`` is read.
    """
    if responder not in (1, 2):
        raise DomainError(f"responder must be 1 or 2, got {responder!r}")
    dims = game.dims
    fixed.check_dims(dims)
    cfg.refs.check_dims(dims)
    H, S, A1, A2 = dims
    eta = cfg.eta
    if responder == 1:
        opp, opp_ref, my_ref = fixed.p2, cfg.refs.p2, cfg.refs.p1
        _check_support(opp, opp_ref, "p2")
    else:
        opp, opp_ref, my_ref = fixed.p1, cfg.refs.p1, cfg.refs.p2
        _check_support(opp, opp_ref, "p1")
    mask = my_ref > 0
    log_ref = _safe_log(my_ref)
    V = np.zeros((H + 1, S))
    Q = np.zeros((H, S, A1, A2))
    br = np.zeros_like(my_ref)
    for h in range(H - 1, -1, -1):
        Q[h] = _continuation(game, V[h + 1], h)
        kl_opp = kl_rows(opp[h], opp_ref[h]) / eta
        if responder == 1:
            qbar = np.einsum("sab,sb->sa", Q[h], opp[h])
            logits = log_ref[h] + eta * qbar
            V[h] = masked_lse(logits, mask[h]) / eta + kl_opp
        else:
            qbar = np.einsum("sab,sa->sb", Q[h], opp[h])
            logits = log_ref[h] - eta * qbar
            V[h] = -masked_lse(logits, mask[h]) / eta - kl_opp
        br[h] = masked_softmax(logits, mask[h])
    return ValueTables(V, Q), br


def best_response_policy(game, fixed, responder, cfg) -> JointPolicy:
    """The joint policy formed by the Gibbs best response and the fixed opponent."""
    _, br = best_response_values(game, fixed, responder, cfg)
    return JointPolicy(br, fixed.p2) if responder == 1 else JointPolicy(fixed.p1, br)


def duality_gap(game: MarkovGame, policy: JointPolicy, cfg: RegularizationConfig) -> float:
    """E_{s ~ rho}[V^{dagger, pi2}_1(s) - V^{pi1, dagger}_1(s)], clamped at float noise."""
    up, _ = best_response_values(game, policy, 1, cfg)
    down, _ = best_response_values(game, policy, 2, cfg)
    gap = float(game.initial_dist @ (up.V[0] - down.V[0]))
    if gap < -GAP_NOISE:
        raise ConsistencyError(f"negative duality gap {gap!r}")
    return max(gap, 0.0)
