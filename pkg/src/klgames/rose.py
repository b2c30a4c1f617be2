"""Offline backward induction with exact-to-tolerance regularized stage equilibria."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from klgames.data import FunctionClass, OfflineDataset, fit_q_finite_class, fit_q_tabular
from klgames.errors import ConvergenceError, DimensionError
from klgames.game import JointPolicy, RegularizationConfig, ValueTables, _continuation
from klgames.stage import solve_stage_batch


@dataclass
class SolveResult:
    policy: JointPolicy
    q_hat: np.ndarray
    v_hat: ValueTables
    stage_iterations: np.ndarray
    stage_exploitability: np.ndarray
    coverage: np.ndarray
    class_index: Optional[list] = None
    extra: dict = field(default_factory=dict)

    def to_dict(self):
        out = {
            "policy": self.policy.to_dict(),
            "q_hat": self.q_hat.tolist(),
            "v_hat": self.v_hat.V.tolist(),
            "stage_iterations": self.stage_iterations.tolist(),
            "stage_exploitability": self.stage_exploitability.tolist(),
            "unvisited_cells": (~self.coverage).sum(axis=(1, 2, 3)).tolist(),
        }
        if self.class_index is not None:
            out["class_index"] = self.class_index
        return out


def fit_step(dataset, h, V_next, fitter):
    """Fit Q_h for one step; returns (Q, coverage mask, class index or None)."""
    records = dataset.step(h)
    if fitter == "tabular":
        fit = fit_q_tabular(records, V_next, dataset.dims)
        return fit.Q, fit.counts > 0, None
    if isinstance(fitter, FunctionClass):
        Q, idx = fit_q_finite_class(records, V_next, fitter, h)
        covered = np.zeros(Q.shape, dtype=bool)
        covered[records.s, records.a1, records.a2] = True
        return Q, covered, idx
    if callable(fitter):
        Q = np.asarray(fitter(h, records, V_next), dtype=float)
        return Q, np.ones(Q.shape, dtype=bool), None
    raise ValueError(f"unknown fitter {fitter!r}")


def check_dataset_dims(dataset, dims):
    if tuple(dims) != tuple(dataset.dims):
        raise DimensionError(f"dataset dims {tuple(dataset.dims)} differ from {tuple(dims)}")
    return dataset.dims


def rose_solve(
    dataset: OfflineDataset,
    dims,
    cfg: RegularizationConfig,
    fitter="tabular",
    stage_tol=1e-10,
    max_iter=10**6,
    polish=True,
):
    """Learn a regularized equilibrium policy from offline data.

    ``fitter`` is ``"tabular"``, a FunctionClass, or a callable
    ``(h, records, V_next) -> Q table`` used to inject known Q values.
    ``polish`` refines each certified stage equilibrium by Newton's method
    (accepted only when it does not raise the certified exploitability).
    """
    dims = check_dataset_dims(dataset, dims)
    cfg.refs.check_dims(dims)
    H, S, A1, A2 = dims
    p1 = np.zeros((H, S, A1))
    p2 = np.zeros((H, S, A2))
    V = np.zeros((H + 1, S))
    Q_hat = np.zeros((H, S, A1, A2))
    coverage = np.zeros((H, S, A1, A2), dtype=bool)
    iters = np.zeros((H, S), dtype=np.int64)
    gaps = np.zeros((H, S))
    class_index = []
    for h in range(H - 1, -1, -1):
        Q, coverage[h], idx = fit_step(dataset, h, V[h + 1], fitter)
        if Q.shape != (S, A1, A2):
            raise DimensionError(f"step h={h}: fitter returned shape {Q.shape}, expected {(S, A1, A2)}")
        Q_hat[h] = Q
        class_index.append(idx)
        try:
            p1[h], p2[h], V[h], gaps[h], iters[h] = solve_stage_batch(
                Q_hat[h], cfg.eta, cfg.refs.p1[h], cfg.refs.p2[h], tol=stage_tol, max_iter=max_iter, polish=polish
            )
        except ConvergenceError as err:
            raise ConvergenceError(f"step h={h}: {err}", err.exploitability, err.iterations) from err
    return SolveResult(
        JointPolicy(p1, p2),
        Q_hat,
        ValueTables(V),
        iters,
        gaps,
        coverage,
        class_index[::-1] if isinstance(fitter, FunctionClass) else None,
    )


def solve_game(game, cfg: RegularizationConfig, stage_tol=1e-10, polish=True, max_iter=10**6):
    """Regularized equilibrium of a known game by exact backward induction."""
    dims = game.dims
    cfg.refs.check_dims(dims)
    H, S, A1, A2 = dims
    p1 = np.zeros((H, S, A1))
    p2 = np.zeros((H, S, A2))
    V = np.zeros((H + 1, S))
    Q = np.zeros((H, S, A1, A2))
    iters = np.zeros((H, S), dtype=np.int64)
    gaps = np.zeros((H, S))
    for h in range(H - 1, -1, -1):
        Q[h] = _continuation(game, V[h + 1], h)
        p1[h], p2[h], V[h], gaps[h], iters[h] = solve_stage_batch(
            Q[h], cfg.eta, cfg.refs.p1[h], cfg.refs.p2[h], tol=stage_tol, max_iter=max_iter, polish=polish
        )
    return SolveResult(JointPolicy(p1, p2), Q, ValueTables(V, Q), iters, gaps, np.ones(Q.shape, dtype=bool))
