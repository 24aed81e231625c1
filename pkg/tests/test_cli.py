import json
import math
import shutil
from pathlib import Path

import pytest

from excursion_area.cli import RunConfig, main, parse_grid

ROOT = Path(__file__).resolve().parents[1]
CHECK_NAMES = {"local_asymptotics", "tail_asymptotics", "chebyshev_bound", "duration_clt", "free_local_limit",
               "barrier_local_limit", "bridge_local_limit"}


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def small(tmp_path, *extra):
    return ["--pmf", ROOT / "configs" / "example_pmf.json", "--amax", 300, "--out", tmp_path, *extra]


def run_dir(tmp_path) -> Path:
    dirs = [d for d in Path(tmp_path).iterdir() if d.is_dir()]
    assert len(dirs) == 1
    return dirs[0]


def test_config_round_trip():
    cfg = RunConfig.from_dict(json.loads((ROOT / "configs" / "example.json").read_text()), ROOT / "configs")
    again = RunConfig.from_dict(json.loads(cfg.canonical()))
    assert again.canonical() == cfg.canonical()
    assert again.config_hash() == cfg.config_hash()
    other = RunConfig.from_dict({**json.loads(cfg.canonical()), "command": "fit"})
    assert other.config_hash() == cfg.config_hash()
    assert RunConfig.from_dict({**json.loads(cfg.canonical()), "seed": 1}).config_hash() != cfg.config_hash()


def test_parse_grid():
    assert parse_grid("400:4000:400")[-1] == 4000
    with pytest.raises(ValueError):
        parse_grid("4:1:1")


def test_analyze(capsys, tmp_path):
    code, out, _ = run(capsys, "analyze", *small(tmp_path))
    assert code == 0
    doc = json.loads((run_dir(tmp_path) / "profile.json").read_text())
    assert doc["profile"]["lambda"] == pytest.approx(math.log(2.5), abs=1e-12)
    assert doc["theta_identity_gap"] <= 1e-12
    assert doc["config_hash"] == run_dir(tmp_path).name
    assert "theta^2/(4 lambda^2) - I" in out


@pytest.mark.parametrize("pairs", [[[-1, 0.5], [1, 0.6]], [[-1, 0.6], [1, 0.4]], [[-1, 1.0]]])
def test_analyze_invalid_pmf(capsys, tmp_path, pairs):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"pmf": pairs}))
    code, _, err = run(capsys, "analyze", "--pmf", path, "--out", tmp_path / "o")
    assert code == 2 and err.strip()


def test_exact_and_cache(capsys, tmp_path):
    code, out, _ = run(capsys, "exact", *small(tmp_path))
    assert code == 0 and "table computed" in out
    line = next(s for s in out.splitlines() if s.startswith("conservation"))
    total = float(line.split("=")[-1].split("(")[0])
    assert abs(total - 1) <= 1e-10
    d = run_dir(tmp_path)
    first = {p.name: p.read_bytes() for p in d.iterdir() if p.is_file()}
    code, out, _ = run(capsys, "exact", *small(tmp_path))
    assert code == 0 and "table cached" in out
    assert {p.name: p.read_bytes() for p in d.iterdir() if p.is_file()} == first
    header = json.loads((d / "table_header.json").read_text())
    assert header["config_hash"] == d.name
    row1 = (d / "marginals.csv").read_text().splitlines()[1].split(",")
    assert float(row1[1]) == pytest.approx(0.8, abs=1e-15)


def test_exact_caps_too_small(capsys, tmp_path):
    code, _, err = run(capsys, "exact", *small(tmp_path, "--nmax", 5))
    assert code == 3 and "error" in err


def test_exact_extended_precision(capsys, tmp_path):
    code, _, _ = run(capsys, "exact", *small(tmp_path, "--precision", "dd"))
    assert code == 0
    assert json.loads((run_dir(tmp_path) / "table_header.json").read_text())["precision"] == "dd"


def test_mc_deterministic_and_scaling(capsys, tmp_path):
    args = small(tmp_path, "--mc-x", 100, "--replicas", 20000, "--is-replicas", 64)
    code, out, _ = run(capsys, "mc", *args)
    assert code == 0 and "IS-vs-DP" in out
    path = run_dir(tmp_path) / "mc.json"
    first = path.read_bytes()
    run(capsys, "mc", *args)
    assert path.read_bytes() == first
    doc = json.loads(first)
    assert set(doc["is_vs_dp"]) == {"local", "tail"}
    assert doc["config_hash"] == run_dir(tmp_path).name
    run(capsys, "mc", *small(tmp_path / "double", "--mc-x", 100, "--replicas", 40000, "--is-replicas", 64))
    doubled = json.loads((run_dir(tmp_path / "double") / "mc.json").read_text())
    ratio = doc["naive"]["P(A=0)"]["std_error"] / doubled["naive"]["P(A=0)"]["std_error"]
    assert ratio == pytest.approx(math.sqrt(2), rel=0.10)


def test_fit_requires_table(capsys, tmp_path):
    code, _, err = run(capsys, "fit", *small(tmp_path))
    assert code == 2
    assert "exact" in err and "run" in err


def test_fit_rejects_foreign_table(capsys, tmp_path):
    run(capsys, "exact", *small(tmp_path / "a"))
    other = tmp_path / "b.json"
    other.write_text(json.dumps({"pmf": [[-1, 0.6], [0, 0.2], [1, 0.2]]}))
    run(capsys, "analyze", "--pmf", other, "--amax", 300, "--out", tmp_path / "b")
    src, dst = run_dir(tmp_path / "a"), run_dir(tmp_path / "b")
    for name in ("table.bin", "table_header.json"):
        shutil.copy(src / name, dst / name)
    code, _, err = run(capsys, "fit", "--pmf", other, "--amax", 300, "--out", tmp_path / "b")
    assert code == 2 and "different increment law" in err


def test_fit_schema(capsys, tmp_path):
    args = small(tmp_path, "--xgrid", "100:300:100", "--replicas", 20000)
    run(capsys, "exact", *args)
    code, out, _ = run(capsys, "fit", *args)
    assert code in (0, 4)
    d = run_dir(tmp_path)
    summary = json.loads((d / "summary.json").read_text())
    assert set(summary["checks"]) == CHECK_NAMES
    assert summary["config_hash"] == d.name
    assert (code == 0) == summary["all_passed"]
    assert len(out.splitlines()) == len(summary["verdicts"])
    assert (d / "traces" / "kappa_hat.csv").exists()
    first = (d / "summary.json").read_bytes()
    run(capsys, "fit", *args)
    assert (d / "summary.json").read_bytes() == first


def test_zeromean_command(capsys, tmp_path):
    code, out, _ = run(capsys, "zeromean", "--amax", 1000, "--out", tmp_path)
    assert code in (0, 4)
    doc = json.loads((run_dir(tmp_path) / "zeromean" / "summary.json").read_text())
    assert doc["C0"] > 0 and "zero_mean_tail" in out


def test_fit_shipped_config_all_pass(capsys, tmp_path):
    """The shipped example configuration, end to end."""
    cfg = ROOT / "configs" / "example.json"
    assert run(capsys, "exact", "--config", cfg, "--out", tmp_path)[0] == 0
    code, out, _ = run(capsys, "fit", "--config", cfg, "--out", tmp_path)
    print(out)
    assert code == 0
