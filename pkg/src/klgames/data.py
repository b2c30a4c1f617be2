"""Offline datasets, least-squares Q fitting and coverage diagnostics."""

from __future__ import annotations

import itertools
import json
import zlib
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.special import ndtri

from klgames.errors import CapacityError, DimensionError, DomainError
from klgames.game import GameDims, JointPolicy, MarkovGame, RegularizationConfig, min_ref_prob, value_scale

DEVIATION_CAP = 4096


# --------------------------------------------------------------------------
# Random streams


def rng_stream(master_seed, tag, *keys):
    """Counter-based generator keyed by (master_seed, purpose tag, extra keys).

    Philox with a SeedSequence built from the 64-bit seed, a stable hash of
    the tag and any integer keys (e.g. a trajectory id).
    """
    entropy = [int(master_seed) & 0xFFFFFFFFFFFFFFFF, zlib.crc32(tag.encode()), *(int(k) for k in keys)]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))


def _inverse_cdf(probs, u):
    """Sample indices from rows of ``probs`` given matching uniforms ``u``."""
    cdf = np.cumsum(probs, axis=-1)
    cdf[..., -1] = np.inf
    return (u[..., None] >= cdf).sum(axis=-1)


# --------------------------------------------------------------------------
# Dataset


@dataclass(frozen=True)
class OfflineDataset:
    """n trajectories of length H stored as (n, H) arrays; row i is trajectory i."""

    s: np.ndarray
    a1: np.ndarray
    a2: np.ndarray
    r: np.ndarray
    s_next: np.ndarray
    dims: GameDims

    def __post_init__(self):
        shape = np.shape(self.s)
        if len(shape) != 2 or shape[1] != self.dims.horizon:
            raise DimensionError(f"dataset arrays must be (n, H={self.dims.horizon}), got {shape}")
        for name in ("a1", "a2", "r", "s_next"):
            if np.shape(getattr(self, name)) != shape:
                raise DimensionError(f"dataset field {name} has shape {np.shape(getattr(self, name))}")
        H, S, A1, A2 = self.dims
        for name, hi in (("s", S), ("a1", A1), ("a2", A2), ("s_next", S)):
            arr = getattr(self, name)
            if arr.size and (arr.min() < 0 or arr.max() >= hi):
                raise DimensionError(f"dataset field {name} out of range [0, {hi})")

    @property
    def n(self) -> int:
        return self.s.shape[0]

    def step(self, h):
        """Records of step h (0-based) as a StepRecords view."""
        return StepRecords(self.s[:, h], self.a1[:, h], self.a2[:, h], self.r[:, h], self.s_next[:, h])

    def jsonl_lines(self):
        """One JSON object per record, trajectory-major within each step; ``h`` is 1-based."""
        for h in range(self.dims.horizon):
            for i in range(self.n):
                rec = {
                    "traj": i,
                    "h": h + 1,
                    "s": int(self.s[i, h]),
                    "a1": int(self.a1[i, h]),
                    "a2": int(self.a2[i, h]),
                    "r": float(self.r[i, h]),
                    "s_next": int(self.s_next[i, h]),
                }
                yield json.dumps(rec, sort_keys=True) + "\n"

    def to_jsonl(self, path):
        with open(path, "w") as fh:
            fh.writelines(self.jsonl_lines())

    @classmethod
    def from_jsonl(cls, path, dims: GameDims):
        with open(path) as fh:
            recs = [json.loads(line) for line in fh if line.strip()]
        H = dims.horizon
        n = 1 + max(rec["traj"] for rec in recs) if recs else 0
        if len(recs) != n * H:
            raise DimensionError(f"expected {n * H} records for {n} trajectories, found {len(recs)}")
        arrays = {k: np.full((n, H), -1, dtype=np.int64) for k in ("s", "a1", "a2", "s_next")}
        r = np.zeros((n, H))
        for rec in recs:
            i, h = rec["traj"], rec["h"] - 1
            if not 0 <= h < H or arrays["s"][i, h] != -1:
                raise DimensionError(f"bad or duplicate record traj={i} h={rec['h']}")
            for k in arrays:
                arrays[k][i, h] = rec[k]
            r[i, h] = rec["r"]
        return cls(arrays["s"], arrays["a1"], arrays["a2"], r, arrays["s_next"], dims)


@dataclass(frozen=True)
class StepRecords:
    s: np.ndarray
    a1: np.ndarray
    a2: np.ndarray
    r: np.ndarray
    s_next: np.ndarray

    def targets(self, V_next):
        return self.r + np.asarray(V_next)[self.s_next]


def make_behavior_policy(game: MarkovGame, kind="uniform", refs: Optional[JointPolicy] = None, custom=None):
    """Behavior policy for data collection: 'uniform', 'refs' or 'custom'."""
    dims = game.dims
    if kind == "uniform":
        return JointPolicy.uniform(dims)
    if kind == "refs":
        if refs is None:
            raise DomainError("kind='refs' needs the reference policy")
        refs.check_dims(dims)
        return refs
    if kind == "custom":
        if not isinstance(custom, JointPolicy):
            raise DomainError("kind='custom' needs a JointPolicy")
        custom.check_dims(dims)
        return custom
    raise DomainError(f"unknown behavior kind {kind!r}")


def sample_dataset(game: MarkovGame, behavior: JointPolicy, n, noise_sigma=0.1, seed=0, strict=True):
    """Roll out n independent trajectories and add Gaussian reward noise.

    Trajectory i consumes counter block i of each purpose-tagged stream, so
    it is a function of (seed, i) alone and a dataset of size n is a prefix
    of any larger dataset drawn with the same seed.
    """
    if int(n) != n or n < 1:
        raise DomainError(f"n must be a positive integer, got {n!r}")
    if not noise_sigma >= 0:
        raise DomainError(f"noise_sigma must be >= 0, got {noise_sigma!r}")
    if strict and noise_sigma > 1:
        raise DomainError("noise_sigma > 1 violates the 1-sub-Gaussian assumption (strict mode)")
    dims = game.dims
    behavior.check_dims(dims)
    H = dims.horizon
    u = rng_stream(seed, "trajectory").random((n, H + 1, 3))
    xi = np.clip(rng_stream(seed, "noise").random((n, H)), 1e-300, None)
    s = np.empty((n, H), dtype=np.int64)
    a1 = np.empty_like(s)
    a2 = np.empty_like(s)
    s_next = np.empty_like(s)
    cur = _inverse_cdf(np.broadcast_to(game.initial_dist, (n, dims.num_states)), u[:, H, 0])
    for h in range(H):
        s[:, h] = cur
        a1[:, h] = _inverse_cdf(behavior.p1[h][cur], u[:, h, 0])
        a2[:, h] = _inverse_cdf(behavior.p2[h][cur], u[:, h, 1])
        cur = _inverse_cdf(game.transitions[h][cur, a1[:, h], a2[:, h]], u[:, h, 2])
        s_next[:, h] = cur
    r_true = game.rewards[np.arange(H)[None, :], s, a1, a2]
    r = r_true + noise_sigma * ndtri(xi) if noise_sigma > 0 else r_true.copy()
    return OfflineDataset(s, a1, a2, r, s_next, dims)


# --------------------------------------------------------------------------
# Q fitting


@dataclass(frozen=True)
class TabularFit:
    Q: np.ndarray
    counts: np.ndarray

    @property
    def unvisited(self) -> np.ndarray:
        """Coverage mask: True where no record hit the cell."""
        return self.counts == 0

    @property
    def num_unvisited(self) -> int:
        return int(self.unvisited.sum())


def fit_q_tabular(records: StepRecords, V_next, dims) -> TabularFit:
    """Per-cell means of r + V_next(s'); unvisited cells are 0."""
    _, S, A1, A2 = dims
    V_next = np.asarray(V_next, dtype=float)
    if V_next.shape != (S,):
        raise DimensionError(f"V_next must have length {S}, got {V_next.shape}")
    flat = np.ravel_multi_index((records.s, records.a1, records.a2), (S, A1, A2))
    y = records.targets(V_next)
    counts = np.bincount(flat, minlength=S * A1 * A2)
    sums = np.bincount(flat, weights=y, minlength=S * A1 * A2)
    Q = np.where(counts > 0, sums / np.maximum(counts, 1), 0.0)
    return TabularFit(Q.reshape(S, A1, A2), counts.reshape(S, A1, A2))


@dataclass(frozen=True)
class FunctionClass:
    """Finite class of Q tables.

    ``members`` is either an array (K, S, A1, A2) shared by all steps or an
    array (H, K, S, A1, A2) with one candidate list per step.
    """

    members: np.ndarray
    per_step: bool = False

    def __post_init__(self):
        m = np.asarray(self.members, dtype=float)
        want = 5 if self.per_step else 4
        if m.ndim != want or m.shape[-4] < 1:
            raise DimensionError(f"function class needs a non-empty {want}-d array, got {m.shape}")
        object.__setattr__(self, "members", m)

    def at(self, h) -> np.ndarray:
        return self.members[h] if self.per_step else self.members

    def __len__(self):
        return self.members.shape[-4]

    def check_bounded(self, cfg: RegularizationConfig, horizon):
        c_val = horizon * value_scale(cfg.eta, min_ref_prob(cfg.refs))
        if np.abs(self.members).max() > c_val:
            raise DomainError(f"class members exceed the value bound {c_val:.4g} (strict mode)")


def fit_q_finite_class(records: StepRecords, V_next, fclass: FunctionClass, h=0):
    """Least-squares member of the class; ties go to the lowest index."""
    members = fclass.at(h)
    y = records.targets(V_next)
    preds = members[:, records.s, records.a1, records.a2]
    loss = np.sum((preds - y[None, :]) ** 2, axis=1)
    idx = int(np.argmin(loss))
    return members[idx], idx


def d2_table(members, mu_s, mu_a1, mu_a2):
    """D^2 divergence of every (s, a1, a2) cell against the empirical sample.

    Pairs whose empirical mean squared difference is zero are excluded; the
    result is 0 where no admissible pair exists.
    """
    members = np.asarray(members, dtype=float)
    K = members.shape[0]
    out = np.zeros(members.shape[1:])
    for i, j in itertools.combinations(range(K), 2):
        diff2 = (members[i] - members[j]) ** 2
        denom = diff2[mu_s, mu_a1, mu_a2].mean() if len(mu_s) else 0.0
        if denom > 0:
            np.maximum(out, diff2 / denom, out=out)
    return out


def d2_divergence(fclass, mu_samples: Sequence, point, h=0) -> float:
    """Sup over class pairs of the squared gap at ``point`` relative to its empirical mean."""
    members = fclass.at(h) if isinstance(fclass, FunctionClass) else np.asarray(fclass, dtype=float)
    mu = np.asarray(mu_samples, dtype=np.int64).reshape(-1, 3)
    table = d2_table(members, mu[:, 0], mu[:, 1], mu[:, 2])
    return float(table[tuple(point)])


# --------------------------------------------------------------------------
# Unilateral concentrability


def step_visitation(game: MarkovGame, p1, p2):
    """Occupancy d_h(s, a1, a2) for every step under a joint policy, shape (H, S, A1, A2)."""
    H = game.horizon
    d_s = game.initial_dist.copy()
    out = np.zeros(game.rewards.shape)
    for h in range(H):
        out[h] = d_s[:, None, None] * p1[h][:, :, None] * p2[h][:, None, :]
        d_s = np.einsum("sab,sabt->t", out[h], game.transitions[h])
    return out


@dataclass
class ConcentrabilityEstimate:
    value: float
    sampled: bool
    num_deviations: dict = field(default_factory=dict)
    argmax: tuple = ()


def _deterministic_policies(num_actions, H, S, cap, sample, rng):
    total = num_actions ** (H * S)
    if total <= cap:
        choices = itertools.product(range(num_actions), repeat=H * S)
        return (np.eye(num_actions)[np.array(c).reshape(H, S)] for c in choices), total, False
    if not sample:
        raise CapacityError(f"{total} deterministic deviations exceed the cap {cap}")
    draws = rng.integers(0, num_actions, size=(cap, H, S))
    return (np.eye(num_actions)[d] for d in draws), cap, True


def estimate_unilateral_concentrability(
    game: MarkovGame,
    fclass: FunctionClass,
    dataset: OfflineDataset,
    nash: JointPolicy,
    cap=DEVIATION_CAP,
    sample=True,
    seed=0,
) -> ConcentrabilityEstimate:
    """Max over players, steps and deterministic Markov deviations of E_{d_h}[D^2].

    The opponent plays ``nash``; D^2 is taken against the dataset's own
    step-h records.  Beyond ``cap`` deviations per player a uniform sample of
    size ``cap`` is used and the result is flagged as sampled.
    """
    H = game.horizon
    d2 = np.stack(
        [d2_table(fclass.at(h), dataset.s[:, h], dataset.a1[:, h], dataset.a2[:, h]) for h in range(H)]
    )
    rng = rng_stream(seed, "deviations")
    best, where, sampled, counts = 0.0, (), False, {}
    for player, A in ((1, game.num_actions_p1), (2, game.num_actions_p2)):
        devs, count, was_sampled = _deterministic_policies(A, H, game.num_states, cap, sample, rng)
        sampled |= was_sampled
        counts[player] = count
        for k, dev in enumerate(devs):
            occ = step_visitation(game, dev, nash.p2) if player == 1 else step_visitation(game, nash.p1, dev)
            per_step = np.einsum("hsab,hsab->h", occ, d2)
            h = int(np.argmax(per_step))
            if per_step[h] > best:
                best, where = float(per_step[h]), (player, k, h)
    return ConcentrabilityEstimate(best, sampled, counts, where)
