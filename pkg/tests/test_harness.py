import csv
import io

import numpy as np
import pytest

from klgames.errors import DomainError
from klgames.harness import (
    CSV_COLUMNS,
    ExperimentConfig,
    GameSpec,
    fit_loglog_slope,
    generate_random_game,
    report_passed,
    rows_to_csv,
    run_optimization_sweep,
    run_statistical_sweep,
    summary_slope,
    verify_suite,
)


def tiny(**kw):
    base = dict(game=GameSpec(2, 2, 2, 2), n_grid=[64, 512], T_grid=[4, 64], seeds=[0, 1], opt_n=128)
    base.update(kw)
    return ExperimentConfig(**base)


def strip_wallclock(text):
    rows = list(csv.reader(io.StringIO(text)))
    i = rows[0].index("wallclock_ms")
    return [r[:i] + r[i + 1 :] for r in rows]


# random games


def test_generate_same_seed_identical():
    a = generate_random_game(GameSpec(), 5)
    b = generate_random_game(GameSpec(), 5)
    assert np.array_equal(a.transitions, b.transitions) and np.array_equal(a.rewards, b.rewards)
    assert not np.array_equal(a.rewards, generate_random_game(GameSpec(), 6).rewards)


def test_generate_matrix_game_shape():
    g = generate_random_game(GameSpec(1, 1, 2, 2), 0)
    assert g.rewards.shape == (1, 1, 2, 2) and g.transitions.shape == (1, 1, 2, 2, 1)
    assert np.all((g.rewards >= 0) & (g.rewards <= 1))


def test_generate_high_concentration_is_near_uniform():
    spec = GameSpec(1, 4, 1, 1, concentration=1e6)
    dev = max(np.abs(generate_random_game(spec, s).transitions - 0.25).max() for s in range(100))
    assert dev <= 1e-3


def test_generate_deterministic_transitions():
    g = generate_random_game(GameSpec(2, 3, 2, 2, deterministic=True), 0)
    assert np.all(np.isin(g.transitions, [0.0, 1.0]))


def test_generate_rejects_zero_dims():
    with pytest.raises(DomainError):
        generate_random_game(GameSpec(0, 1, 1, 1), 0)


# config


def test_config_validation():
    with pytest.raises(DomainError):
        tiny(seeds=[]).validate()
    with pytest.raises(DomainError):
        tiny(seeds=[1, 1]).validate()
    with pytest.raises(DomainError):
        tiny(n_grid=[64, 64]).validate()
    with pytest.raises(DomainError):
        ExperimentConfig.from_dict({"bogus": 1})


def test_config_roundtrip():
    cfg = tiny(eta=0.3)
    back = ExperimentConfig.from_dict(cfg.to_dict())
    assert back == cfg


# slope fitting


def test_slope_exact_examples():
    x = np.array([1.0, 2.0, 4.0, 8.0])
    slope, _, r2 = fit_loglog_slope(np.stack([x, 1 / x], 1))
    assert slope == pytest.approx(-1.0, abs=1e-12) and r2 == pytest.approx(1.0, abs=1e-12)
    assert fit_loglog_slope(np.stack([x, 2 / np.sqrt(x)], 1))[0] == pytest.approx(-0.5, abs=1e-12)


def test_slope_noisy():
    rng = np.random.default_rng(0)
    x = 2.0 ** np.arange(4, 15)
    y = (1 / x) * (1 + 0.1 * rng.uniform(-1, 1, x.size))
    assert -1.1 <= fit_loglog_slope(np.stack([x, y], 1))[0] <= -0.9


def test_slope_errors():
    with pytest.raises(DomainError):
        fit_loglog_slope([(1, 1), (2, 2)])
    with pytest.raises(DomainError):
        fit_loglog_slope([(1, 1), (2, 0), (3, 1)])


# sweeps


def test_stat_sweep_schema_and_determinism():
    cfg = tiny()
    a, b = rows_to_csv(run_statistical_sweep(cfg)), rows_to_csv(run_statistical_sweep(cfg))
    assert a.splitlines()[0] == ",".join(CSV_COLUMNS)
    assert strip_wallclock(a) == strip_wallclock(b)
    rows = list(csv.DictReader(io.StringIO(a)))
    assert [r["run_id"] for r in rows][-3:] == ["stat-median-n64", "stat-median-n512", "stat-slope"]
    assert rows[-1]["flags"].startswith("summary;slope_skipped")
    assert all(r["sup_l1"] == "" for r in rows)


def test_stat_sweep_median_decreases():
    cfg = tiny(game=GameSpec(2, 3, 2, 2), n_grid=[64, 4096], seeds=list(range(20)))
    rows = run_statistical_sweep(cfg)
    med = {r["n"]: r["gap"] for r in rows if r["run_id"].startswith("stat-median")}
    assert med[4096] < med[64]


def test_stat_sweep_noiseless_full_coverage_is_exact():
    cfg = tiny(game=GameSpec(2, 2, 2, 2, deterministic=True), n_grid=[2000], sigma=0.0)
    rows = run_statistical_sweep(cfg)
    for r in rows:
        if r["seed"] is not None:
            assert "unvisited" not in r["flags"] and r["gap"] <= 1e-6


def test_stat_sweep_with_sosmd_columns():
    rows = run_statistical_sweep(tiny(n_grid=[256], seeds=[0], stat_T=256))
    assert rows[0]["sup_l1"] is not None and "sosmd_gap=" in rows[0]["flags"]


def test_opt_sweep_rows():
    cfg = tiny(T_grid=[16, 1024])
    rows = run_optimization_sweep(cfg)
    per_seed = [r for r in rows if r["seed"] is not None]
    assert all("kl_bound_ok" in r["flags"] for r in per_seed)
    for seed in cfg.seeds:
        l1 = {r["T"]: r["sup_l1"] for r in per_seed if r["seed"] == seed}
        assert l1[1024] < l1[16]


def test_opt_sweep_degenerate_grid_flagged():
    rows = run_optimization_sweep(tiny(T_grid=[32]))
    assert rows[-1]["run_id"] == "opt-slope" and "slope_skipped" in rows[-1]["flags"]
    assert summary_slope(rows, "opt") is None


# verify suite


def test_verify_default_all_pass():
    report = verify_suite(ExperimentConfig())
    assert report_passed(report)
    statuses = {e["check"]: e["status"] for e in report}
    assert statuses["density_ratio"] == "skipped (side condition false)"
    assert all(set(e) == {"check", "status", "margin", "details"} for e in report)


def test_verify_fault_injection():
    report = verify_suite(ExperimentConfig(inject_fault="transition_row"))
    statuses = {e["check"]: e["status"] for e in report}
    assert statuses["game_validation"] == "fail"
    assert statuses["value_bound"].startswith("skipped")
    assert statuses["kl_examples"] == "pass"
    assert not report_passed(report)


def test_verify_density_ratio_runs_when_side_condition_holds():
    cfg = ExperimentConfig(game=GameSpec(1, 2, 1, 1), eta=0.1, seeds=[0])
    statuses = {e["check"]: e["status"] for e in verify_suite(cfg)}
    assert statuses["density_ratio"] == "pass"
