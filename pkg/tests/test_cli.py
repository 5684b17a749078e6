import json
import subprocess
import sys

import pytest

from btforge.cli import ascii_outline, main
from btforge.text import parse

from conftest import flat_level_text


@pytest.fixture
def files(tmp_path):
    level = tmp_path / "flat.lvl"
    level.write_text(flat_level_text(width=12))
    obstacle = tmp_path / "obstacle.lvl"
    obstacle.write_text(flat_level_text(width=20, ticks=20, extra={(1, 8): "#"}))

    def bt(name, text):
        p = tmp_path / name
        p.write_text(text)
        return str(p)

    return tmp_path, str(level), str(obstacle), bt


def test_run_right_on_flat(files, capsys):
    _, level, _, bt = files
    assert main(["run", "--bt", bt("r.bt", "(act right)"), "--level", level, "--seed", "0"]) == 0
    out = capsys.readouterr().out
    assert "gamma=1 " in out and "terminal=ReachedFinish" in out


def test_run_cond_only_times_out(files, capsys):
    tmp, level, _, bt = files
    trace = tmp / "trace.jsonl"
    code = main(["run", "--bt", bt("c.bt", "(cond enemy@0,0)"), "--level", level, "--trace", str(trace)])
    assert code == 1
    assert "gamma=0 terminal=TimedOut" in capsys.readouterr().out
    records = [json.loads(line) for line in trace.read_text().splitlines()]
    assert records[0] == {"t": 0, "a": None, "g": 0.0}


def test_run_bad_syntax_reports_position(files, capsys):
    _, level, _, bt = files
    assert main(["run", "--bt", bt("bad.bt", "(sel\n  (act fly))"), "--level", level]) == 2
    assert ":2:8:" in capsys.readouterr().err


def test_run_bad_level(files, capsys):
    tmp, _, _, bt = files
    broken = tmp / "broken.lvl"
    broken.write_text("ticks=10\n.M........\n##########\n")
    assert main(["run", "--bt", bt("r.bt", "(act right)"), "--level", str(broken)]) == 2
    assert main(["run", "--bt", bt("r.bt", "(act right)"), "--level", str(tmp / "nope.lvl")]) == 2


def test_run_ascii_frames(files, capsys):
    _, level, _, bt = files
    main(["run", "--bt", bt("r.bt", "(act right)"), "--level", level, "--ascii"])
    assert capsys.readouterr().out.count("t=") >= 10


def test_learn_writes_artifacts_and_replays(files, capsys):
    tmp, _, obstacle, _ = files
    out = tmp / "run" / "tree.bt"
    assert main(["learn", "--level", obstacle, "--seed", "7", "--out", str(out)]) == 0
    logged = capsys.readouterr().out
    manifest = json.loads((tmp / "run" / "tree.manifest.json").read_text())
    assert manifest["seed"] == 7 and manifest["final_gamma"] == 1.0
    for key in ("tree", "phase_log", "trace", "prune_report", "manifest"):
        assert (tmp / "run" / manifest["outputs"][key].split("/")[-1]).exists()
    assert manifest["config"]["gp"]["population_size"] == 16
    # replay through cmd_run reproduces the learner's final gamma
    assert main(["run", "--bt", str(out), "--level", obstacle, "--seed", "7"]) == 0
    assert "gamma=1 " in capsys.readouterr().out
    phases = [json.loads(x) for x in (tmp / "run" / "tree.phases.jsonl").read_text().splitlines()]
    assert set(phases[0]) == {"phase", "method", "gamma", "nodes"}
    assert "gamma=1" in logged
    # manifest replay is byte-identical
    again = tmp / "again.bt"
    assert main(["learn", "--manifest", str(tmp / "run" / "tree.manifest.json"), "--out", str(again)]) == 0
    assert again.read_bytes() == out.read_bytes()


def test_learn_same_flags_twice(files):
    tmp, _, obstacle, _ = files
    a, b = tmp / "a.bt", tmp / "b.bt"
    flags = ["--level", obstacle, "--seed", "3", "--selection", "diversity", "--pop-size", "6"]
    assert main(["learn", *flags, "--out", str(a)]) == main(["learn", *flags, "--out", str(b)])
    assert a.read_bytes() == b.read_bytes()


def test_learn_budget_exhaustion_exit_1(files, capsys):
    tmp, _, _, _ = files
    wall = tmp / "wall.lvl"
    wall.write_text(flat_level_text(width=12, rows=6, extra={(r, 5): "#" for r in range(4)}))
    out = tmp / "w.bt"
    code = main(["learn", "--level", str(wall), "--out", str(out), "--max-phases", "2",
                 "--pop-size", "4", "--generations", "1"])
    assert code == 1
    assert parse(out.read_text())  # tree still written


@pytest.mark.parametrize(
    "argv",
    [
        ["learn", "--level", "x", "--out", "y", "--selection", "rank", "--pc", "1.5"],
        ["learn", "--level", "x", "--out", "y", "--seed", "-1"],
        ["learn", "--level", "x", "--out", "y", "--seed", str(2**64)],
        ["learn", "--level", "x", "--out", "y", "--selection", "roulette"],
        ["learn", "--out", "y"],
        ["learn", "--level", "does-not-exist.lvl", "--out", "y"],
        ["render", "--bt", "missing.bt"],
        [],
    ],
)
def test_usage_errors_exit_2(argv):
    try:
        code = main(argv)
    except SystemExit as exc:  # argparse rejects the flags itself
        code = exc.code
    assert code == 2


def test_simplify_dead_branch(files, capsys):
    tmp, level, _, bt = files
    src = bt("dead.bt", "(sel (seq (cond enemy@0,0) (act left)) (act right))")
    out = tmp / "pruned.bt"
    assert main(["simplify", "--bt", src, "--level", level, "--seed", "0", "--out", str(out)]) == 0
    report = json.loads((tmp / "pruned.prune.json").read_text())
    assert len(report["removed"]) >= 1
    assert report["final_nodes"] < report["initial_nodes"]
    assert report["final_fitness"] >= report["initial_fitness"]
    assert parse(out.read_text()) == parse("(sel (act right))")


def test_simplify_minimal_tree_byte_identical(files):
    tmp, level, _, _ = files
    src = tmp / "min.bt"
    src.write_text("; bt-forge v1\n(act right)\n")
    out = tmp / "min2.bt"
    assert main(["simplify", "--bt", str(src), "--level", level, "--out", str(out)]) == 0
    assert out.read_bytes() == src.read_bytes()
    assert json.loads((tmp / "min2.prune.json").read_text())["removed"] == []


def test_render(files, capsys):
    _, _, _, bt = files
    assert main(["render", "--bt", bt("a.bt", "(act right)"), "--format", "dot"]) == 0
    dot = capsys.readouterr().out
    assert dot.count("[label=") == 1 and "->" not in dot
    five = "(sel (seq (cond enemy@1,3) (act jump)) (act right))"
    main(["render", "--bt", bt("b.bt", five), "--format", "dot"])
    dot = capsys.readouterr().out
    assert dot.count("[label=") == 5 and dot.count("->") == 4
    main(["render", "--bt", bt("b.bt", five), "--format", "ascii"])
    assert len(capsys.readouterr().out.splitlines()) == 5
    assert ascii_outline(parse(five)).splitlines()[1] == "  seq"


def test_eval_table_and_json(files, capsys):
    tmp, level, _, bt = files
    levels = tmp / "levels"
    levels.mkdir()
    (levels / "one.lvl").write_text(flat_level_text(width=12))
    tree = bt("r.bt", "(sel (act shoot) (act right))")
    assert main(["eval", "--bt", tree, "--levels", str(levels), "--seeds", "1"]) == 0
    table = capsys.readouterr().out.splitlines()
    assert len(table) == 3 and table[1].split()[0] == "one"
    main(["run", "--bt", tree, "--level", str(levels / "one.lvl")])
    run_gamma = capsys.readouterr().out.split()[0]
    assert run_gamma == "gamma=" + table[1].split()[2]
    assert main(["eval", "--bt", tree, "--levels", str(levels), "--seeds", "3", "--json"]) == 0
    data = json.loads(capsys.readouterr().out)
    assert len({row["gamma"] for row in data["rows"]}) == 1
    assert data["summary"]["cells"] == 3


def test_eval_empty_or_missing_dir(files):
    tmp, _, _, bt = files
    (tmp / "empty").mkdir()
    tree = bt("r.bt", "(act right)")
    assert main(["eval", "--bt", tree, "--levels", str(tmp / "empty")]) == 2
    assert main(["eval", "--bt", tree, "--levels", str(tmp / "missing")]) == 2


def test_module_entry_point(files):
    _, level, _, bt = files
    proc = subprocess.run(
        [sys.executable, "-m", "btforge", "run", "--bt", bt("r.bt", "(act right)"), "--level", level],
        capture_output=True, text=True, env={"BTFORGE_LOG": "quiet", "PATH": ""},
    )
    assert proc.returncode == 0 and "ReachedFinish" in proc.stdout
