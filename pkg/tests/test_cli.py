import json
import subprocess
import sys

import pytest

from elasticpipe import cli
from elasticpipe.cost_model import CostParams

from conftest import CONFIGS, make_configs


def write_config(path, configs):
    path.write_text(json.dumps(configs.to_dict()))
    return str(path)


def run(capsys, *argv):
    code = cli.main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


@pytest.fixture
def unit_time(tmp_path):
    """Two stages, every chunk one second forward and backward, ample memory."""
    cfg = make_configs(dp=2, layers=4, capacity=1e15, params=CostParams(0, 0, 2, 0, 0, 2))
    return write_config(tmp_path / "unit.json", cfg)


def test_gen_writes_and_reproduces(tmp_path, capsys):
    a, b = tmp_path / "a.txt", tmp_path / "b.txt"
    code, out, _ = run(capsys, "gen", "--preset", "github_like", "--count", 512, "--seed", 7, "--out", a)
    assert code == 0 and "512 lengths" in out
    run(capsys, "gen", "--preset", "github_like", "--count", 512, "--seed", 7, "--out", b)
    assert len(a.read_text().splitlines()) == 512
    assert a.read_bytes() == b.read_bytes()


def test_gen_unknown_preset_is_a_usage_error(tmp_path, capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main(["gen", "--preset", "zipf", "--count", "3", "--out", str(tmp_path / "x")])
    assert exc.value.code == cli.EXIT_PARSE
    assert "usage" in capsys.readouterr().err


def test_trivial_plan_and_hand_built_simulation(tmp_path, capsys, unit_time):
    wl = tmp_path / "w.txt"
    wl.write_text("20\n")
    code, out, _ = run(capsys, "plan", "--config", unit_time, "--workload", wl, "--slices", 2,
                       "--out", tmp_path / "p.json")
    assert code == 0 and "units" in out
    doc = json.loads((tmp_path / "p.json").read_text())
    assert doc["metrics"]["units"] == 1 and doc["metrics"]["total_ckpt_layers"] == 0
    code, out, _ = run(capsys, "simulate", "--plan", tmp_path / "p.json", "--out", tmp_path / "t.json")
    assert code == 0
    trace = json.loads((tmp_path / "t.json").read_text())
    assert trace["summary"]["total_time"] == pytest.approx(6.0)
    assert trace["summary"]["violations"] == []


def test_single_stage_plan_has_no_bubble(tmp_path, capsys):
    cfg = write_config(tmp_path / "one.json", make_configs(dp=1, layers=4, capacity=1e15))
    wl = tmp_path / "w.txt"
    wl.write_text("100\n200\n300\n")
    assert run(capsys, "plan", "--config", cfg, "--workload", wl, "--out", tmp_path / "p.json")[0] == 0
    run(capsys, "simulate", "--plan", tmp_path / "p.json", "--out", tmp_path / "t.json")
    assert json.loads((tmp_path / "t.json").read_text())["summary"]["bubble_ratio"] == 0.0


def test_infeasible_plan_reports_deficit(tmp_path, capsys):
    tiny = make_configs(dp=2, layers=4, capacity=2.0, m_token=1.0, ms=1.0)
    cfg = write_config(tmp_path / "tiny.json", tiny)
    wl = tmp_path / "w.txt"
    wl.write_text("500\n")
    code, _, err = run(capsys, "plan", "--config", cfg, "--workload", wl, "--slices", 1,
                       "--out", tmp_path / "p.json")
    assert code == cli.EXIT_INFEASIBLE
    assert "infeasible" in err
    assert not (tmp_path / "p.json").exists()


def test_parse_and_io_exit_codes(tmp_path, capsys):
    desk = str(CONFIGS / "desk.json")
    assert run(capsys, "plan", "--config", desk, "--out", tmp_path / "p.json")[0] == cli.EXIT_PARSE
    assert run(capsys, "plan", "--config", desk, "--preset", "uniform", "--count", 4,
               "--slices", 0, "--out", tmp_path / "p.json")[0] == cli.EXIT_PARSE
    missing = tmp_path / "missing.txt"
    assert run(capsys, "plan", "--config", desk, "--workload", missing,
               "--out", tmp_path / "p.json")[0] == cli.EXIT_IO
    bad = tmp_path / "bad.json"
    bad.write_text('{"kind": "elasticpipe.plan", "version": 0}')
    assert run(capsys, "simulate", "--plan", bad, "--out", tmp_path / "t.json")[0] == cli.EXIT_PARSE
    bad.write_text('{"kind": "elasticpipe.trace", "version": 1, "summary": {"total_time": 0, '
                   '"bubble_ratio": 0, "violations": []}, "units": []}')
    assert run(capsys, "render", "--trace", bad, "--out", tmp_path / "x.svg")[0] == cli.EXIT_PARSE
    assert run(capsys, "gen", "--preset", "uniform", "--count", 3,
               "--out", tmp_path / "no" / "dir.txt")[0] == cli.EXIT_IO


def test_compare_roomy_workload(tmp_path, capsys):
    roomy = make_configs(dp=4, layers=32, capacity=1e15, m_token=4.46e6, hidden=4096)
    cfg = write_config(tmp_path / "roomy.json", roomy)
    code, out, _ = run(capsys, "compare", "--config", cfg, "--preset", "github_like", "--count", 64,
                       "--seed", 2, "--out", tmp_path / "c.json")
    assert code == 0 and "normalized" in out
    rows = {r["mode"]: r for r in json.loads((tmp_path / "c.json").read_text())["rows"]}
    assert rows["main"]["sim_time"] == rows["no_ckpt"]["sim_time"]
    assert rows["full_ckpt"]["sim_time"] >= rows["main"]["sim_time"]
    assert rows["main"]["normalized_time"] == 1.0


def test_compare_marks_infeasible_modes(capsys, tmp_path):
    code, out, _ = run(capsys, "compare", "--config", CONFIGS / "desk_dp8.json", "--preset",
                       "github_like", "--count", 128, "--seed", 1, "--modes", "no_ckpt,full_ckpt",
                       "--out", tmp_path / "c.json")
    assert code == 0
    rows = {r["mode"]: r for r in json.loads((tmp_path / "c.json").read_text())["rows"]}
    assert set(rows) == {"main", "no_ckpt", "full_ckpt"}
    assert not rows["no_ckpt"]["feasible"] and "infeasible" in out
    assert rows["full_ckpt"]["sim_time"] >= rows["main"]["sim_time"]


def test_pipeline_is_deterministic(tmp_path, capsys):
    cfg = CONFIGS / "desk_dp8.json"
    outputs = []
    for tag in ("a", "b"):
        d = tmp_path / tag
        d.mkdir()
        run(capsys, "gen", "--preset", "github_like", "--count", 128, "--seed", 3, "--out", d / "w.txt")
        assert run(capsys, "plan", "--config", cfg, "--workload", d / "w.txt", "--jobs", 2,
                   "--out", d / "p.json")[0] == 0
        run(capsys, "simulate", "--plan", d / "p.json", "--out", d / "t.json")
        run(capsys, "render", "--trace", d / "t.json", "--out", d / "g.svg")
        outputs.append([(d / f).read_bytes() for f in ("w.txt", "p.json", "t.json", "g.svg")])
    assert outputs[0] == outputs[1]


def test_console_script_entry_point(tmp_path):
    out = tmp_path / "w.txt"
    res = subprocess.run([sys.executable, "-m", "elasticpipe.cli", "gen", "--preset", "uniform",
                          "--count", "3", "--out", str(out)], capture_output=True, text=True)
    assert res.returncode == 0, res.stderr
    assert out.read_text() == "4096\n4096\n4096\n"
