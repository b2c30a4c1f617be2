"""Offline backward induction with last-iterate mirror-descent self-play."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from klgames.data import OfflineDataset
from klgames.errors import DimensionError, DomainError
from klgames.game import JointPolicy, RegularizationConfig, ValueTables, _safe_log, kl_rows
from klgames.rose import SolveResult, check_dataset_dims, fit_step
from klgames.stage import mirror_logits, solve_stage_batch


def stepsize_schedule(t, eta):
    """gamma_t = 2 eta / (t + 2)."""
    if t < 0:
        raise DomainError(f"t must be >= 0, got {t!r}")
    if not eta > 0:
        raise DomainError(f"eta must be positive, got {eta!r}")
    return 2.0 * eta / (t + 2)


def marginal_payoff(q_hat_h, opponent, s, player):
    """Expected payoff of each own action against the opponent's mixed action at state s."""
    Q = np.asarray(q_hat_h, dtype=float)
    opp = np.asarray(opponent, dtype=float)
    if opp.ndim == 2:
        opp = opp[s]
    if player == 1:
        if opp.shape != (Q.shape[2],):
            raise DimensionError(f"opponent has shape {opp.shape}, expected ({Q.shape[2]},)")
        return Q[s] @ opp
    if player == 2:
        if opp.shape != (Q.shape[1],):
            raise DimensionError(f"opponent has shape {opp.shape}, expected ({Q.shape[1]},)")
        return opp @ Q[s]
    raise DomainError(f"player must be 1 or 2, got {player!r}")


def mirror_step(pi_cur, q, gamma, eta, ref, direction="ascent"):
    """pi+ proportional to pi_cur^(1 - gamma/eta) exp(+-gamma q) ref^(gamma/eta)."""
    pi_cur = np.asarray(pi_cur, dtype=float)
    q = np.asarray(q, dtype=float)
    ref = np.asarray(ref, dtype=float)
    if not 0 < gamma <= eta:
        raise DomainError(f"stepsize must lie in (0, eta], got gamma={gamma!r}, eta={eta!r}")
    if direction not in ("ascent", "descent"):
        raise DomainError(f"unknown direction {direction!r}")
    mask = ref > 0
    sign = 1.0 if direction == "ascent" else -1.0
    logp = mirror_logits(_safe_log(pi_cur), q, gamma, eta, _safe_log(ref), mask, sign)
    return np.where(mask, np.exp(logp), 0.0)


def _log_step(logp, q, gamma, eta, log_ref, mask):
    """Lean mirror ascent step for the self-play loop; -inf off the mask."""
    b = gamma / eta
    with np.errstate(invalid="ignore"):
        w = np.where(mask, (1.0 - b) * logp + gamma * q + b * log_ref, -np.inf)
    w = w - w.max(axis=1, keepdims=True)
    return w - np.log(np.exp(w).sum(axis=1, keepdims=True))


@dataclass
class IterateDiagnostics:
    """Per (h, t) traces.  ``t`` runs over 0..T; row t describes iterate t.

    kl[h, t] and l1[h, t] are sup over states and players of the distance to
    the reference equilibrium of the stage games at step h (NaN when not
    requested).  ``descent[h, t]`` for t < T is the slack of the one-step
    recursion V_{t+1} <= (1 - gamma_t/eta) V_t + 9 gamma_t^2 H^2 lambda^2,
    minimized over states (negative means violated).
    """

    gamma: np.ndarray
    max_log_ratio: np.ndarray
    kl: np.ndarray
    l1: np.ndarray
    descent: np.ndarray
    reference: Optional[JointPolicy] = None
    default_schedule: bool = True

    def rows(self, run_id):
        H, T1 = self.gamma.shape[0], self.kl.shape[1]
        for h in range(H):
            for t in range(T1):
                g = self.gamma[h, t] if t < self.gamma.shape[1] else float("nan")
                yield (run_id, h + 1, "sup_s", t, self.kl[h, t], self.l1[h, t], g)


@dataclass
class SosmdOptions:
    reference: bool = False
    record_every: int = 1
    schedule: Optional[Callable[[int, float], float]] = None
    reference_tol: float = 1e-10
    value_bound: Optional[float] = None
    extra: dict = field(default_factory=dict)


def sosmd_solve(dataset: OfflineDataset, dims, cfg: RegularizationConfig, T, fitter="tabular", options=None):
    """Learn a policy by T rounds of simultaneous mirror self-play per step.

    Returns (SolveResult, IterateDiagnostics).  Diagnostics against the
    reference equilibrium of each fitted stage game are computed only when
    ``options.reference`` is set; they cost one polished certified solve per
    (h, s).
    """
    opts = options or SosmdOptions()
    if int(T) != T or T < 0:
        raise DomainError(f"T must be a non-negative integer, got {T!r}")
    T = int(T)
    schedule = opts.schedule or stepsize_schedule
    dims = check_dataset_dims(dataset, dims)
    cfg.refs.check_dims(dims)
    H, S, A1, A2 = dims
    eta = cfg.eta
    refs = cfg.refs
    m1, m2 = refs.p1 > 0, refs.p2 > 0
    lr1, lr2 = _safe_log(refs.p1), _safe_log(refs.p2)

    p1 = np.zeros((H, S, A1))
    p2 = np.zeros((H, S, A2))
    V = np.zeros((H + 1, S))
    Q_hat = np.zeros((H, S, A1, A2))
    coverage = np.zeros((H, S, A1, A2), dtype=bool)
    gammas = np.array([schedule(t, eta) for t in range(T)])
    if np.any(gammas <= 0) or np.any(gammas > eta):
        raise DomainError("every stepsize must lie in (0, eta]")
    n_rec = T // opts.record_every + 1
    max_ratio = np.zeros((H, n_rec))
    kl_tr = np.full((H, n_rec), np.nan)
    l1_tr = np.full((H, n_rec), np.nan)
    descent = np.full((H, max(T, 0)), np.nan)
    ref1_all = np.zeros_like(p1)
    ref2_all = np.zeros_like(p2)
    lam2 = None if opts.value_bound is None else opts.value_bound**2

    for h in range(H - 1, -1, -1):
        Q_hat[h], coverage[h], _ = fit_step(dataset, h, V[h + 1], fitter)
        Qh = Q_hat[h]
        if opts.reference:
            ref1_all[h], ref2_all[h], *_ = solve_stage_batch(
                Qh, eta, refs.p1[h], refs.p2[h], tol=opts.reference_tol, polish=True
            )
        # log-iterates carry -inf off the reference support
        l1 = np.where(m1[h], lr1[h], -np.inf)
        l2 = np.where(m2[h], lr2[h], -np.inf)
        prev_v = None

        def record(t, l1, l2):
            ratio = max(np.abs((l1 - lr1[h])[m1[h]]).max(), np.abs((l2 - lr2[h])[m2[h]]).max())
            if opts.reference:
                q1, q2 = np.exp(l1), np.exp(l2)
                k1 = kl_rows(ref1_all[h], q1)
                k2 = kl_rows(ref2_all[h], q2)
                d1 = np.abs(ref1_all[h] - q1).sum(axis=1)
                d2 = np.abs(ref2_all[h] - q2).sum(axis=1)
                return ratio, max(k1.max(), k2.max()), max(d1.max(), d2.max()), k1 + k2
            return ratio, np.nan, np.nan, None

        for t in range(T + 1):
            need_v = opts.reference and lam2 is not None
            if t % opts.record_every == 0 or need_v:
                ratio, kl, l1d, v_t = record(t, l1, l2)
                if t % opts.record_every == 0:
                    r = t // opts.record_every
                    max_ratio[h, r], kl_tr[h, r], l1_tr[h, r] = ratio, kl, l1d
                if need_v and prev_v is not None:
                    g = gammas[t - 1]
                    bound = (1 - g / eta) * prev_v + 9 * g * g * H * H * lam2
                    descent[h, t - 1] = float(np.min(bound - v_t))
                prev_v = v_t
            if t == T:
                break
            g = gammas[t]
            q1, q2 = np.exp(l1), np.exp(l2)
            pay1 = (Qh @ q2[:, :, None])[:, :, 0]
            pay2 = (q1[:, None, :] @ Qh)[:, 0, :]
            l1 = _log_step(l1, pay1, g, eta, lr1[h], m1[h])
            l2 = _log_step(l2, -pay2, g, eta, lr2[h], m2[h])

        if T == 0:
            # the initialization itself, without a log/exp round trip
            p1[h], p2[h] = refs.p1[h], refs.p2[h]
        else:
            p1[h] = np.where(m1[h], np.exp(l1), 0.0)
            p2[h] = np.where(m2[h], np.exp(l2), 0.0)
            p1[h] /= p1[h].sum(axis=1, keepdims=True)
            p2[h] /= p2[h].sum(axis=1, keepdims=True)
        V[h] = (
            np.einsum("si,sij,sj->s", p1[h], Qh, p2[h])
            - kl_rows(p1[h], refs.p1[h]) / eta
            + kl_rows(p2[h], refs.p2[h]) / eta
        )

    result = SolveResult(
        JointPolicy(p1, p2),
        Q_hat,
        ValueTables(V),
        np.full((H, S), T, dtype=np.int64),
        np.full((H, S), np.nan),
        coverage,
    )
    gamma_tab = np.broadcast_to(gammas, (H, T)).copy()
    diag = IterateDiagnostics(
        gamma_tab,
        max_ratio,
        kl_tr,
        l1_tr,
        descent,
        JointPolicy(ref1_all, ref2_all) if opts.reference else None,
        opts.schedule is None,
    )
    return result, diag
