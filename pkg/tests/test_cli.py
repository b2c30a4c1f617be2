import json

import pytest

from klgames.cli import main


@pytest.fixture
def workdir(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert main(["gen-game", "--seed", "3", "--horizon", "2", "--states", "3", "--out", "g.json"]) == 0
    assert main(["sample", "--game", "g.json", "--n", "200", "--seed", "1", "--out", "d.jsonl"]) == 0
    return tmp_path


def test_pipeline(workdir):
    assert main(["rose", "--game", "g.json", "--data", "d.jsonl", "--out", "r.json"]) == 0
    res = json.loads((workdir / "r.json").read_text())
    assert res["duality_gap"] >= 0 and len(res["policy"]["p1"]) == 2
    (workdir / "p.json").write_text(json.dumps(res["policy"]))
    assert main(["eval-gap", "--game", "g.json", "--policy", "p.json", "--out", "gap.json"]) == 0
    assert json.loads((workdir / "gap.json").read_text())["duality_gap"] == pytest.approx(res["duality_gap"])
    assert main(["sosmd", "--game", "g.json", "--data", "d.jsonl", "--T", "32", "--diagnostics", "diag.csv", "--out", "s.json"]) == 0
    lines = (workdir / "diag.csv").read_text().splitlines()
    assert lines[0] == "run_id,h,agg,t,kl,l1,gamma" and len(lines) == 1 + 2 * 33


def test_outputs_are_byte_identical(workdir):
    for args in (
        ["gen-game", "--seed", "3", "--horizon", "2", "--states", "3"],
        ["sample", "--game", "g.json", "--n", "200", "--seed", "1"],
        ["rose", "--game", "g.json", "--data", "d.jsonl"],
        ["sosmd", "--game", "g.json", "--data", "d.jsonl", "--T", "16"],
    ):
        main(args + ["--out", "a.out"])
        main(args + ["--out", "b.out"])
        assert (workdir / "a.out").read_bytes() == (workdir / "b.out").read_bytes()


def test_verify_exit_codes(workdir):
    (workdir / "bad.json").write_text(json.dumps({"inject_fault": "transition_row"}))
    assert main(["verify", "--config", "bad.json", "--out", "rep.json"]) == 1
    report = json.loads((workdir / "rep.json").read_text())
    assert any(e["check"] == "game_validation" and e["status"] == "fail" for e in report)


def test_sweep_command(workdir):
    cfg = {"game": {"horizon": 1, "num_states": 2}, "n_grid": [32, 64, 128], "seeds": [0, 1]}
    (workdir / "c.json").write_text(json.dumps(cfg))
    assert main(["stat-sweep", "--config", "c.json", "--out", "s.csv"]) == 0
    assert (workdir / "s.csv").read_text().startswith("run_id,seed,n,T,eta,H,S,A1,A2,sigma,gap,sup_l1,sup_kl,wallclock_ms,flags\n")


def test_errors_exit_nonzero(workdir, capsys):
    assert main(["rose", "--game", "missing.json", "--data", "d.jsonl"]) == 2
    assert "error" in capsys.readouterr().err
    assert main(["sample", "--game", "g.json", "--n", "5", "--sigma", "2"]) == 2
    assert main(["sample", "--game", "g.json", "--n", "5", "--sigma", "2", "--no-strict", "--out", "x.jsonl"]) == 0
