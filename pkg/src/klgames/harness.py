"""Random instances, experiment sweeps, slope fits and the verify suite."""

from __future__ import annotations

import csv
import io
import json
import time
from dataclasses import asdict, dataclass, field, fields
from typing import Optional

import numpy as np
from scipy import stats
from scipy.optimize import minimize_scalar

from klgames.data import (
    FunctionClass,
    d2_divergence,
    fit_q_tabular,
    make_behavior_policy,
    rng_stream,
    sample_dataset,
)
from klgames.errors import DomainError, KLGameError
from klgames.game import (
    GameDims,
    JointPolicy,
    MarkovGame,
    RegularizationConfig,
    best_response_values,
    check_side_condition,
    duality_gap,
    evaluate_policy,
    kl_divergence,
    kl_rows,
    min_ref_prob,
    value_scale,
)
from klgames.oracle import brute_force_best_response_value, brute_force_stage_ne, simplex_grid
from klgames.rose import rose_solve, solve_game
from klgames.sosmd import SosmdOptions, sosmd_solve, stepsize_schedule
from klgames.stage import (
    StageGame,
    gibbs_response,
    solve_stage_batch,
    solve_stage_equilibrium,
    stage_exploitability,
    stage_objective,
)

CSV_COLUMNS = (
    "run_id",
    "seed",
    "n",
    "T",
    "eta",
    "H",
    "S",
    "A1",
    "A2",
    "sigma",
    "gap",
    "sup_l1",
    "sup_kl",
    "wallclock_ms",
    "flags",
)


# --------------------------------------------------------------------------
# Instances


@dataclass
class GameSpec:
    horizon: int = 3
    num_states: int = 5
    num_actions_p1: int = 2
    num_actions_p2: int = 2
    concentration: float = 1.0
    deterministic: bool = False
    game_seed: Optional[int] = None

    @property
    def dims(self) -> GameDims:
        return GameDims(self.horizon, self.num_states, self.num_actions_p1, self.num_actions_p2)


def generate_random_game(spec: GameSpec, seed=0, strict=True) -> MarkovGame:
    """Uniform [0,1] rewards, Dirichlet(concentration) transition rows, Dirichlet(1) initial law.

    With ``spec.deterministic`` each transition row is a point mass on a
    uniformly drawn next state instead.
    """
    H, S, A1, A2 = spec.dims
    if min(H, S, A1, A2) < 1:
        raise DomainError(f"all game dimensions must be >= 1, got {(H, S, A1, A2)}")
    if not spec.concentration > 0:
        raise DomainError(f"concentration must be positive, got {spec.concentration!r}")
    rng = rng_stream(seed, "game")
    rewards = rng.random((H, S, A1, A2))
    if spec.deterministic:
        nxt = rng.integers(0, S, size=(H, S, A1, A2))
        transitions = np.eye(S)[nxt]
    else:
        transitions = rng.dirichlet(np.full(S, float(spec.concentration)), size=(H, S, A1, A2))
        transitions /= transitions.sum(axis=-1, keepdims=True)
    rho = rng.dirichlet(np.ones(S))
    rho /= rho.sum()
    return MarkovGame(transitions, rewards, rho, strict=strict)


def make_refs(kind, dims, seed=0, concentration=1.0) -> JointPolicy:
    """Reference pair: 'uniform' or 'dirichlet' rows with the given concentration."""
    if kind == "uniform":
        return JointPolicy.uniform(dims)
    if kind == "dirichlet":
        H, S, A1, A2 = dims
        rng = rng_stream(seed, "refs")
        p1 = rng.dirichlet(np.full(A1, float(concentration)), size=(H, S))
        p2 = rng.dirichlet(np.full(A2, float(concentration)), size=(H, S))
        return JointPolicy(p1 / p1.sum(-1, keepdims=True), p2 / p2.sum(-1, keepdims=True))
    raise DomainError(f"unknown refs kind {kind!r}")


@dataclass
class ExperimentConfig:
    game: GameSpec = field(default_factory=GameSpec)
    eta: float = 0.5
    refs: str = "uniform"
    refs_concentration: float = 1.0
    behavior: str = "uniform"
    sigma: float = 0.1
    n_grid: list = field(default_factory=lambda: [2**k for k in range(7, 15)])
    T_grid: list = field(default_factory=lambda: [2**k for k in range(4, 15)])
    seeds: list = field(default_factory=lambda: list(range(20)))
    fitter: str = "tabular"
    stage_tol: float = 1e-10
    opt_n: int = 1024
    stat_T: Optional[int] = None
    strict: bool = True
    inject_fault: Optional[str] = None
    out: Optional[str] = None

    def validate(self):
        for name in ("n_grid", "T_grid"):
            grid = list(getattr(self, name))
            if not grid:
                raise DomainError(f"{name} must be non-empty")
            if any(b <= a for a, b in zip(grid, grid[1:])):
                raise DomainError(f"{name} must be strictly increasing, got {grid}")
        if not self.seeds:
            raise DomainError("seeds list is empty")
        if len(set(self.seeds)) != len(self.seeds):
            raise DomainError("seeds must be distinct")
        if not self.eta > 0:
            raise DomainError(f"eta must be positive, got {self.eta!r}")
        if self.fitter != "tabular":
            raise DomainError(f"sweeps support the tabular fitter only, got {self.fitter!r}")
        return self

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise DomainError(f"unknown config keys {sorted(unknown)}")
        if "game" in d and not isinstance(d["game"], GameSpec):
            d["game"] = GameSpec(**d["game"])
        return cls(**d)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def build_instance(config: ExperimentConfig, seed):
    """(game, cfg, behavior) for one seed.  A fixed ``game_seed`` shares the game across seeds."""
    gseed = seed if config.game.game_seed is None else config.game.game_seed
    game = generate_random_game(config.game, gseed, strict=config.strict)
    refs = make_refs(config.refs, game.dims, gseed, config.refs_concentration)
    cfg = RegularizationConfig(config.eta, refs)
    behavior = make_behavior_policy(game, config.behavior, refs=refs)
    return game, cfg, behavior


def policy_distances(pol, ref):
    """(sup L1, sup KL(ref || pol)) over steps, states and players."""
    l1 = max(np.abs(pol.p1 - ref.p1).sum(-1).max(), np.abs(pol.p2 - ref.p2).sum(-1).max())
    kl = max(kl_rows(ref.p1, pol.p1).max(), kl_rows(ref.p2, pol.p2).max())
    return float(l1), float(kl)


# --------------------------------------------------------------------------
# Sweeps


def _row(run_id, seed, n, T, config, gap=None, sup_l1=None, sup_kl=None, ms=None, flags=()):
    g = config.game
    return {
        "run_id": run_id,
        "seed": seed,
        "n": n,
        "T": T,
        "eta": config.eta,
        "H": g.horizon,
        "S": g.num_states,
        "A1": g.num_actions_p1,
        "A2": g.num_actions_p2,
        "sigma": config.sigma,
        "gap": gap,
        "sup_l1": sup_l1,
        "sup_kl": sup_kl,
        "wallclock_ms": ms,
        "flags": ";".join(flags),
    }


def _side_flag(cfg, H):
    return () if check_side_condition(cfg.eta, H, min_ref_prob(cfg.refs)) else ("side_condition_false",)


def _slope_row(prefix, config, xs, ys, key):
    """Summary row carrying the log-log slope of medians (in flags)."""
    row = _row(f"{prefix}-slope", None, None, None, config)
    pts = [(x, y) for x, y in zip(xs, ys) if y is not None and np.isfinite(y)]
    if len(pts) < 3:
        row["flags"] = f"summary;slope_skipped:degenerate_grid({len(pts)} points)"
        return row
    try:
        slope, intercept, r2 = fit_loglog_slope(pts)
    except DomainError as err:
        row["flags"] = f"summary;slope_skipped:{err}"
        return row
    row["flags"] = f"summary;metric={key};slope={slope:.6f};intercept={intercept:.6f};r2={r2:.6f}"
    return row


def run_statistical_sweep(config: ExperimentConfig):
    """One row per (seed, n) with the ROSE duality gap, then per-n median rows and a slope row."""
    config.validate()
    rows = []
    for seed in config.seeds:
        game, cfg, behavior = build_instance(config, seed)
        side = _side_flag(cfg, game.horizon)
        for n in config.n_grid:
            flags = list(side)
            t0 = time.perf_counter()
            try:
                data = sample_dataset(game, behavior, n, config.sigma, seed=seed, strict=config.strict)
                res = rose_solve(data, game.dims, cfg, stage_tol=config.stage_tol)
                gap = duality_gap(game, res.policy, cfg)
                unvisited = int((~res.coverage).sum())
                if unvisited:
                    flags.append(f"unvisited={unvisited}")
                sup_l1 = sup_kl = None
                if config.stat_T is not None:
                    sres, _ = sosmd_solve(data, game.dims, cfg, config.stat_T)
                    sup_l1, sup_kl = policy_distances(sres.policy, res.policy)
                    flags.append(f"sosmd_gap={duality_gap(game, sres.policy, cfg):.6e}")
            except KLGameError as err:
                gap = sup_l1 = sup_kl = None
                flags.append(f"error={type(err).__name__}")
            ms = int(round(1000 * (time.perf_counter() - t0)))
            rows.append(_row(f"stat-s{seed}-n{n}", seed, n, config.stat_T, config, gap, sup_l1, sup_kl, ms, flags))
    medians = []
    for n in config.n_grid:
        vals = [r["gap"] for r in rows if r["n"] == n and r["gap"] is not None]
        med = float(np.median(vals)) if vals else None
        medians.append(med)
        rows.append(
            _row(f"stat-median-n{n}", None, n, config.stat_T, config, gap=med, flags=("summary", f"count={len(vals)}"))
        )
    rows.append(_slope_row("stat", config, config.n_grid, medians, "gap"))
    return rows


def run_optimization_sweep(config: ExperimentConfig):
    """One dataset per seed; SOS-MD at each T against the polished ROSE policy on the same data."""
    config.validate()
    rows = []
    for seed in config.seeds:
        game, cfg, behavior = build_instance(config, seed)
        H = game.horizon
        lam = value_scale(cfg.eta, min_ref_prob(cfg.refs))
        side = _side_flag(cfg, H)
        try:
            data = sample_dataset(game, behavior, config.opt_n, config.sigma, seed=seed, strict=config.strict)
            ref = rose_solve(data, game.dims, cfg, stage_tol=config.stage_tol, polish=True)
        except KLGameError as err:
            for T in config.T_grid:
                rows.append(_row(f"opt-s{seed}-T{T}", seed, config.opt_n, T, config, flags=(f"error={type(err).__name__}",)))
            continue
        for T in config.T_grid:
            flags = list(side)
            t0 = time.perf_counter()
            try:
                res, _ = sosmd_solve(data, game.dims, cfg, T)
                sup_l1, sup_kl = policy_distances(res.policy, ref.policy)
                bound = 36 * cfg.eta**2 * H**2 * lam**2 / (T + 1)
                flags.append("kl_bound_ok" if sup_kl <= bound else "kl_bound_violated")
            except KLGameError as err:
                sup_l1 = sup_kl = None
                flags.append(f"error={type(err).__name__}")
            ms = int(round(1000 * (time.perf_counter() - t0)))
            rows.append(_row(f"opt-s{seed}-T{T}", seed, config.opt_n, T, config, None, sup_l1, sup_kl, ms, flags))
    medians = []
    for T in config.T_grid:
        vals = [r["sup_l1"] for r in rows if r["T"] == T and r["sup_l1"] is not None]
        med = float(np.median(vals)) if vals else None
        medians.append(med)
        rows.append(
            _row(f"opt-median-T{T}", None, config.opt_n, T, config, sup_l1=med, flags=("summary", f"count={len(vals)}"))
        )
    rows.append(_slope_row("opt", config, config.T_grid, medians, "sup_l1"))
    return rows


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return "" if np.isnan(v) else repr(v)
    return str(v)


def rows_to_csv(rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for r in rows:
        writer.writerow([_fmt(r[c]) for c in CSV_COLUMNS])
    return buf.getvalue()


def summary_slope(rows, prefix):
    """Parse (slope, intercept, r2) back out of a sweep's slope row, or None if skipped."""
    for r in rows:
        if r["run_id"] == f"{prefix}-slope":
            parts = dict(p.split("=", 1) for p in r["flags"].split(";") if "=" in p)
            if "slope" not in parts:
                return None
            return float(parts["slope"]), float(parts["intercept"]), float(parts["r2"])
    return None


def fit_loglog_slope(points):
    """OLS of log y on log x; returns (slope, intercept, r2)."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 3:
        raise DomainError("need at least 3 (x, y) points")
    if np.any(~np.isfinite(pts)) or np.any(pts <= 0):
        raise DomainError("log-log fit needs finite positive coordinates")
    fit = stats.linregress(np.log(pts[:, 0]), np.log(pts[:, 1]))
    return float(fit.slope), float(fit.intercept), float(fit.rvalue**2)


# --------------------------------------------------------------------------
# Verify suite


def _entry(check, ok, margin, details):
    return {"check": check, "status": "pass" if ok else "fail", "margin": float(margin), "details": details}


def _skipped(check, why):
    return {"check": check, "status": f"skipped ({why})", "margin": None, "details": ""}


def _random_policy(rng, dims, refs):
    H, S, A1, A2 = dims
    p1 = rng.dirichlet(np.ones(A1), size=(H, S)) * (refs.p1 > 0)
    p2 = rng.dirichlet(np.ones(A2), size=(H, S)) * (refs.p2 > 0)
    return JointPolicy(p1 / p1.sum(-1, keepdims=True), p2 / p2.sum(-1, keepdims=True))


def _random_stage(rng, A1, A2, eta):
    return StageGame(rng.random((A1, A2)), eta, rng.dirichlet(np.ones(A1)), rng.dirichlet(np.ones(A2)))


def _check_kl_examples():
    got = [
        kl_divergence([0.5, 0.5], [0.5, 0.5]),
        kl_divergence([1, 0], [0.5, 0.5]),
        kl_divergence([0.9, 0.1], [0.5, 0.5]),
    ]
    want = [0.0, np.log(2), 0.9 * np.log(1.8) + 0.1 * np.log(0.2)]
    err = max(abs(a - b) for a, b in zip(got, want))
    return _entry("kl_examples", err <= 1e-12, 1e-12 - err, f"max error {err:.2e}")


def _check_side_condition_examples():
    got = [check_side_condition(0.01, 1, 0.9), check_side_condition(0.001, 2, 0.5), check_side_condition(0.25, 1, 1.0)]
    ok = got == [True, False, True]
    return _entry("side_condition_examples", ok, 0.0 if ok else -1.0, f"results {got}")


def _check_pinsker(rng, trials=500):
    worst = np.inf
    for _ in range(trials):
        k = int(rng.integers(2, 6))
        p, q = rng.dirichlet(np.ones(k)), rng.dirichlet(np.ones(k))
        worst = min(worst, np.sqrt(2 * kl_divergence(p, q)) + 1e-12 - np.abs(p - q).sum())
    return _entry("pinsker", worst >= 0, worst, f"{trials} random pairs")


def _check_gap_and_saddle(game, cfg, rng, trials=20):
    worst_gap, worst_order = np.inf, np.inf
    for _ in range(trials):
        pol = _random_policy(rng, game.dims, cfg.refs)
        worst_gap = min(worst_gap, duality_gap(game, pol, cfg) + 1e-9)
        v = game.initial_dist @ evaluate_policy(game, pol, cfg).V[0]
        up = game.initial_dist @ best_response_values(game, pol, 1, cfg)[0].V[0]
        down = game.initial_dist @ best_response_values(game, pol, 2, cfg)[0].V[0]
        worst_order = min(worst_order, v - down + 1e-9, up - v + 1e-9)
    return [
        _entry("gap_nonnegative", worst_gap >= 0, worst_gap, f"{trials} random policies"),
        _entry("saddle_ordering", worst_order >= 0, worst_order, f"{trials} random policies"),
    ]


def _check_value_bound(config, rng, games=10, opponents=5):
    worst = np.inf
    for g in range(games):
        game, cfg, _ = build_instance(config, 10_000 + g)
        H = game.horizon
        lam = value_scale(cfg.eta, min_ref_prob(cfg.refs))
        scale = (H - np.arange(H + 1))[:, None] * lam
        for _ in range(opponents):
            pol = _random_policy(rng, game.dims, cfg.refs)
            for responder in (1, 2):
                V = best_response_values(game, pol, responder, cfg)[0].V
                worst = min(worst, float((scale - np.abs(V)).min()))
    return _entry("value_bound", worst >= 0, worst, f"{games} games x {opponents} opponents x 2 responders")


def _check_eval_br_consistency(game, cfg, rng, trials=10):
    worst = 0.0
    for _ in range(trials):
        pol = _random_policy(rng, game.dims, cfg.refs)
        for responder in (1, 2):
            tables, br = best_response_values(game, pol, responder, cfg)
            joint = JointPolicy(br, pol.p2) if responder == 1 else JointPolicy(pol.p1, br)
            worst = max(worst, float(np.abs(evaluate_policy(game, joint, cfg).V - tables.V).max()))
    return _entry("eval_br_consistency", worst <= 1e-9, 1e-9 - worst, f"max |dV| {worst:.2e}")


def _check_lse_oracle(rng, trials=10):
    worst = 0.0
    for i in range(trials):
        k = 2 + i % 2
        eta = [0.2, 1.0, 5.0][i % 3]
        q, ref = rng.random(k), rng.dirichlet(np.ones(k))
        game = MarkovGame(np.ones((1, 1, k, 1, 1)), q.reshape(1, 1, k, 1), np.ones(1))
        refs = JointPolicy(ref.reshape(1, 1, k), np.ones((1, 1, 1)))
        cfg = RegularizationConfig(eta, refs)
        lse = best_response_values(game, refs, 1, cfg)[0].V[0, 0]
        worst = max(worst, abs(lse - brute_force_best_response_value(q, eta, ref, 1e-4)))
    return _entry("lse_oracle_equivalence", worst <= 1e-6, 1e-6 - worst, f"max error {worst:.2e}")


def _check_gibbs_optimality(rng, trials=10):
    worst = np.inf
    for i in range(trials):
        k = 2 + i % 2
        eta = [0.2, 1.0, 5.0][i % 3]
        q, ref = rng.random(k), rng.dirichlet(np.ones(k))
        grid = simplex_grid(k, 1e-3)
        for sign, direction in ((1, "maximize"), (-1, "minimize")):
            g = gibbs_response(q, eta, ref, direction)
            obj = lambda p: sign * (p @ q) - kl_rows(p, np.broadcast_to(ref, p.shape)) / eta
            worst = min(worst, float(obj(g[None])[0] - obj(grid).max() + 1e-9))
    return _entry("gibbs_optimality", worst >= 0, worst, f"{trials} payoffs, both directions, 1e-3 grid")


def _check_stage_oracle(rng, trials=6):
    worst = np.inf
    for i in range(trials):
        A = 2 + i % 2
        sg = _random_stage(rng, A, A, [0.2, 1.0, 5.0][i % 3])
        sol = solve_stage_equilibrium(sg)
        orc = brute_force_stage_ne(sg, 1e-4)
        err = max(np.abs(sol.pi1 - orc.pi1).sum(), np.abs(sol.pi2 - orc.pi2).sum())
        worst = min(worst, 5e-4 - err)
    return _entry("stage_oracle", worst >= 0, worst, f"{trials} games at grid_res 1e-4")


def _check_stability(rng, trials=200, tol=1e-10):
    worst = np.inf
    for eta in (0.2, 1.0, 5.0):
        m = trials // 3
        A = 3
        Q = rng.random((m, A, A))
        D = rng.uniform(-1, 1, (m, A, A)) * rng.random((m, 1, 1))
        r1, r2 = rng.dirichlet(np.ones(A), m), rng.dirichlet(np.ones(A), m)
        a1, a2, *_ = solve_stage_batch(Q, eta, r1, r2, tol=tol, polish=True)
        b1, b2, *_ = solve_stage_batch(Q + D, eta, r1, r2, tol=tol, polish=True)
        bound = 2 * eta * np.abs(D).max(axis=(1, 2)) + 10 * tol
        worst = min(worst, float((bound - np.abs(a1 - b1).sum(1)).min()), float((bound - np.abs(a2 - b2).sum(1)).min()))
    return _entry("stability", worst >= 0, worst, f"{3 * (trials // 3)} perturbation trials")


def _check_uniqueness(rng, trials=30, tol=1e-10):
    worst = np.inf
    for i in range(trials):
        sg = _random_stage(rng, 3, 3, [0.2, 1.0, 5.0][i % 3])
        a = solve_stage_equilibrium(sg, tol=tol)
        b = solve_stage_equilibrium(sg, tol=tol, init=(rng.dirichlet(np.ones(3)), rng.dirichlet(np.ones(3))))
        worst = min(worst, 10 * tol - max(np.abs(a.pi1 - b.pi1).sum(), np.abs(a.pi2 - b.pi2).sum()))
    return _entry("uniqueness", worst >= 0, worst, f"{trials} games, refs vs random start")


def _check_certificate(rng, trials=30, tol=1e-10):
    worst = np.inf
    for i in range(trials):
        sg = _random_stage(rng, 3, 2, [0.2, 1.0, 5.0][i % 3])
        sol = solve_stage_equilibrium(sg, tol=tol)
        worst = min(worst, tol - stage_exploitability(sg, sol.pi1, sol.pi2), tol - sol.exploitability)
        worst = min(worst, 1e-12 - abs(sol.value - stage_objective(sg, sol.pi1, sol.pi2)))
    return _entry("solver_certificate", worst >= 0, worst, f"{trials} games")


def _check_rose(game, cfg, behavior, config):
    out = []
    data = sample_dataset(game, behavior, 512, config.sigma, seed=1, strict=config.strict)
    res = rose_solve(data, game.dims, cfg, stage_tol=config.stage_tol)
    resid = 0.0
    for h in range(game.horizon):
        g1 = gibbs_response(np.einsum("sab,sb->sa", res.q_hat[h], res.policy.p2[h]), cfg.eta, cfg.refs.p1[h])
        g2 = gibbs_response(np.einsum("sab,sa->sb", res.q_hat[h], res.policy.p1[h]), cfg.eta, cfg.refs.p2[h], "minimize")
        resid = max(resid, np.abs(g1 - res.policy.p1[h]).sum(-1).max(), np.abs(g2 - res.policy.p2[h]).sum(-1).max())
    out.append(_entry("rose_gibbs_consistency", resid <= 1e-8, 1e-8 - resid, f"max L1 residual {resid:.2e}"))
    cert = float(res.stage_exploitability.max())
    out.append(_entry("rose_certificate", cert <= config.stage_tol, config.stage_tol - cert, f"max {cert:.2e}"))
    again = rose_solve(data, game.dims, cfg, stage_tol=config.stage_tol)
    same = np.array_equal(again.policy.p1, res.policy.p1) and np.array_equal(again.policy.p2, res.policy.p2)
    out.append(_entry("rose_determinism", same, 0.0 if same else -1.0, "two identical runs"))
    exact = solve_game(game, cfg)
    gap = duality_gap(game, exact.policy, cfg)
    out.append(_entry("exact_solution_gap", gap <= 1e-8, 1e-8 - gap, f"gap {gap:.2e}"))
    return out, data, res


def _check_sosmd(game, cfg, data, T=256):
    H = game.horizon
    lam = value_scale(cfg.eta, min_ref_prob(cfg.refs))
    res, diag = sosmd_solve(data, game.dims, cfg, T, options=SosmdOptions(reference=True, value_bound=lam))
    t = np.arange(T + 1)
    ratio = 2 * cfg.eta * H * lam - diag.max_log_ratio.max()
    kl_bound = 36 * cfg.eta**2 * H**2 * lam**2 / (t[1:] + 1)
    kl_margin = float((kl_bound[None] - diag.kl[:, 1:]).min())
    pinsker = float((np.sqrt(2 * diag.kl) + 1e-12 - diag.l1).min())
    descent = float(np.nanmin(diag.descent))
    sched = float(np.abs(diag.gamma[0] - [stepsize_schedule(k, cfg.eta) for k in range(T)]).max())
    res0, _ = sosmd_solve(data, game.dims, cfg, 0)
    t0 = np.array_equal(res0.policy.p1, cfg.refs.p1) and np.array_equal(res0.policy.p2, cfg.refs.p2)
    return [
        _entry("log_linear_bound", ratio >= 0, ratio, f"T={T}, all h, s, t"),
        _entry("last_iterate_kl_bound", kl_margin >= 0, kl_margin, f"T={T}, all h, t >= 1"),
        _entry("pinsker_transfer", pinsker >= 0, pinsker, "sup-state L1 vs KL"),
        _entry("v_recursion", descent >= 0, descent, "per state, per iteration"),
        _entry("stepsize_schedule", sched == 0.0, -sched, "2 eta / (t + 2)"),
        _entry("sosmd_T0_returns_refs", t0, 0.0 if t0 else -1.0, "T = 0"),
    ]


def _check_large_T(config, seeds=2, T=20_000):
    worst = np.inf
    spec = GameSpec(2, 2, 2, 2)
    small = ExperimentConfig(game=spec, eta=config.eta, sigma=config.sigma)
    for seed in range(seeds):
        game, cfg, behavior = build_instance(small, 20_000 + seed)
        data = sample_dataset(game, behavior, 256, small.sigma, seed=seed)
        a = rose_solve(data, game.dims, cfg)
        b, _ = sosmd_solve(data, game.dims, cfg, T)
        worst = min(worst, 1e-3 - policy_distances(b.policy, a.policy)[0])
    return _entry("large_T_agreement", worst >= 0, worst, f"{seeds} instances at T={T}")


def _check_data(game, behavior, rng, config):
    out = []
    data = sample_dataset(game, behavior, 200, config.sigma, seed=3, strict=config.strict)
    again = sample_dataset(game, behavior, 200, config.sigma, seed=3, strict=config.strict)
    same = all(np.array_equal(getattr(data, k), getattr(again, k)) for k in ("s", "a1", "a2", "r", "s_next"))
    out.append(_entry("dataset_determinism", same, 0.0 if same else -1.0, "same seed twice"))
    rec = data.step(0)
    V_next = rng.random(game.num_states)
    fit = fit_q_tabular(rec, V_next, game.dims)
    y = rec.targets(V_next)
    worst = 0.0
    for cell in np.argwhere(fit.counts > 0)[:10]:
        hit = (rec.s == cell[0]) & (rec.a1 == cell[1]) & (rec.a2 == cell[2])
        worst = max(worst, abs(golden_least_squares(y[hit]) - fit.Q[tuple(cell)]))
    out.append(_entry("tabular_least_squares", worst <= 1e-9, 1e-9 - worst, "golden-section comparison"))
    noiseless = sample_dataset(game, behavior, 4000, 0.0, seed=4)
    exact = np.zeros(game.num_states)
    fit = fit_q_tabular(noiseless.step(game.horizon - 1), exact, game.dims)
    covered = fit.counts > 0
    err = float(np.abs(fit.Q - game.rewards[-1])[covered].max())
    out.append(_entry("noiseless_exact_backup", err <= 1e-12, 1e-12 - err, f"{int(covered.sum())} covered cells"))
    members = rng.random((3, game.num_states, game.num_actions_p1, game.num_actions_p2))
    mu = np.stack([rec.s, rec.a1, rec.a2], axis=1)[:50]
    point = (0, 0, 0)
    a = d2_divergence(FunctionClass(members), mu, point)
    b = d2_divergence(FunctionClass(members[::-1].copy()), mu, point)
    out.append(_entry("d2_symmetry", abs(a - b) <= 1e-12, 1e-12 - abs(a - b), f"D2 = {a:.6g}"))
    return out


def golden_least_squares(y, rounds=3):
    """argmin_c sum (y - c)^2 by golden-section search.

    Each round searches the loss change relative to the current point c,
    sum (y - c - d)^2 - sum (y - c)^2 = n d^2 - 2 d sum (y - c), so the
    minimizer is resolved to far below the sqrt(eps) limit of the raw loss.
    """
    y = np.asarray(y, dtype=float)
    c = float(np.median(y))
    width = float(np.ptp(y)) + 1.0
    for _ in range(rounds):
        resid = float(np.sum(y - c))
        opt = minimize_scalar(
            lambda d: y.size * d * d - 2 * d * resid, bracket=(-width, 0.0, width), method="golden", options={"xtol": 1e-14}
        )
        c += opt.x
        width = 10 * abs(opt.x) + 1e-300
    return c


def _check_slope_examples(rng):
    x = np.array([1.0, 2.0, 4.0, 8.0])
    s1, _, r2 = fit_loglog_slope(np.stack([x, 1 / x], 1))
    s2, _, _ = fit_loglog_slope(np.stack([x, 3 / np.sqrt(x)], 1))
    xs = 2.0 ** np.arange(4, 15)
    s3, _, _ = fit_loglog_slope(np.stack([xs, (1 / xs) * (1 + 0.1 * rng.uniform(-1, 1, xs.size))], 1))
    err = max(abs(s1 + 1), abs(r2 - 1), abs(s2 + 0.5))
    ok = err <= 1e-12 and -1.1 <= s3 <= -0.9
    return _entry("loglog_slope_examples", ok, 1e-12 - err, f"noisy slope {s3:.4f}")


def _check_density_ratio(game, cfg, behavior, config, T=256):
    alpha = min_ref_prob(cfg.refs)
    if not check_side_condition(cfg.eta, game.horizon, alpha):
        return _skipped("density_ratio", "side condition false")
    data = sample_dataset(game, behavior, 512, config.sigma, seed=5, strict=config.strict)
    res, _ = sosmd_solve(data, game.dims, cfg, T)
    exact = solve_game(game, cfg).policy
    h = np.arange(game.horizon)[None, :]
    num = res.policy.p1[h, data.s, data.a1] * res.policy.p2[h, data.s, data.a2]
    den = exact.p1[h, data.s, data.a1] * exact.p2[h, data.s, data.a2]
    worst = float(np.exp(np.max(np.sum(np.log(num) - np.log(den), axis=1))))
    return _entry("density_ratio", worst <= np.e, np.e - worst, f"max per-trajectory ratio {worst:.4f}")


def _corrupt(game: MarkovGame):
    d = game.to_dict()
    d["transitions"][0][0][0][0][0] += 0.5
    return d


def verify_suite(config: Optional[ExperimentConfig] = None, seed=0):
    """Run every invariant check; returns a list of {check, status, margin, details}."""
    config = config or ExperimentConfig()
    rng = np.random.default_rng(seed)
    report = []

    def run(fn, *args):
        name = getattr(fn, "__name__", "check").removeprefix("_check_")
        try:
            res = fn(*args)
        except Exception as err:  # report, never raise
            res = _entry(name, False, -np.inf, f"{type(err).__name__}: {err}")
        report.extend(res if isinstance(res, list) else [res])

    for fn in (_check_kl_examples, _check_side_condition_examples):
        run(fn)
    run(_check_pinsker, rng)
    run(_check_lse_oracle, rng)
    run(_check_gibbs_optimality, rng)
    run(_check_stage_oracle, rng)
    run(_check_stability, rng)
    run(_check_uniqueness, rng)
    run(_check_certificate, rng)
    run(_check_slope_examples, rng)

    instance_checks = (
        "gap_nonnegative", "saddle_ordering", "value_bound", "eval_br_consistency", "rose_gibbs_consistency",
        "rose_certificate", "rose_determinism", "exact_solution_gap", "log_linear_bound", "last_iterate_kl_bound",
        "pinsker_transfer", "v_recursion", "stepsize_schedule", "sosmd_T0_returns_refs", "large_T_agreement",
        "dataset_determinism", "tabular_least_squares", "noiseless_exact_backup", "d2_symmetry", "density_ratio",
    )  # fmt: skip
    try:
        game, cfg, behavior = build_instance(config, config.seeds[0] if config.seeds else seed)
        if config.inject_fault == "transition_row":
            game = MarkovGame.from_dict(_corrupt(game), strict=config.strict)
        report.append(_entry("game_validation", True, 0.0, f"dims {tuple(game.dims)}"))
    except KLGameError as err:
        report.append(_entry("game_validation", False, -1.0, f"{type(err).__name__}: {err}"))
        report.extend(_skipped(name, "invalid game instance") for name in instance_checks)
        return report

    run(_check_gap_and_saddle, game, cfg, rng)
    run(_check_value_bound, config, rng)
    run(_check_eval_br_consistency, game, cfg, rng)
    data = None
    try:
        entries, data, _ = _check_rose(game, cfg, behavior, config)
        report.extend(entries)
    except Exception as err:
        report.append(_entry("rose", False, -np.inf, f"{type(err).__name__}: {err}"))
    if data is not None:
        run(_check_sosmd, game, cfg, data)
    run(_check_large_T, config)
    run(_check_data, game, behavior, rng, config)
    run(_check_density_ratio, game, cfg, behavior, config)
    return report


def report_passed(report) -> bool:
    return all(e["status"] != "fail" for e in report)
