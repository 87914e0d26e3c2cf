import csv
import json
import subprocess
import sys

import pytest

from kmergodic import __version__
from kmergodic.cli import build_parser, main

SMALL = ["--set", "T=5", "--set", "M=20"]


def _subcommand_parsers():
    parser = build_parser()
    sub = next(a for a in parser._actions if a.dest == "command")
    return parser, sub.choices


@pytest.mark.parametrize("name", ["run", "suite", "sample-target", "export"])
def test_help_documents_every_flag(name, capsys):
    _, subs = _subcommand_parsers()
    with pytest.raises(SystemExit) as exc:
        main([name, "--help"])
    assert exc.value.code == 0
    out = capsys.readouterr().out
    for action in subs[name]._actions:
        for flag in action.option_strings:
            assert flag in out
        if action.option_strings and action.help is not None:
            assert action.help.split()[0] in out


def test_top_level_help_and_version(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--help"])
    assert exc.value.code == 0
    assert "sample-target" in capsys.readouterr().out
    with pytest.raises(SystemExit) as exc:
        main(["--version"])
    assert exc.value.code == 0 and __version__ in capsys.readouterr().out


def test_run_writes_outputs(tmp_path, capsys):
    assert main(["run", "--scenario", "box2d", "--seed", "7", "--out", str(tmp_path), *SMALL]) == 0
    d = tmp_path / "run" / "box2d" / "7"
    assert (d / "trace.csv").is_file() and (d / "summary.json").is_file()
    out = json.loads(capsys.readouterr().out)
    assert [t["seed"] for t in out["trials"]] == [7]


def test_missing_scenario_exit_1(tmp_path, capsys):
    assert main(["run", "--scenario", "missing.toml", "--out", str(tmp_path)]) == 1
    assert "missing.toml" in capsys.readouterr().err


def test_bad_override_exit_1_json(tmp_path, capsys):
    code = main(["--json-errors", "run", "--scenario", "box2d", "--set", "planner.depth=3", "--out", str(tmp_path)])
    assert code == 1
    err = json.loads(capsys.readouterr().err)
    assert err["exit_code"] == 1 and err["key"] == "planner.depth"
    assert "planner.mpc.horizon" in err["error"]


def test_runtime_failure_exit_2(tmp_path, capsys, monkeypatch):
    import kmergodic.harness as h

    def boom(*a, **k):
        raise FloatingPointError("bad")

    monkeypatch.setattr(h, "error_step", boom)
    code = main(["--json-errors", "run", "--scenario", "box2d", "--out", str(tmp_path), *SMALL])
    assert code == 2
    err = json.loads(capsys.readouterr().err)
    assert err["module"] == "visitation" and err["step"] == 0


def test_override_round_trip_into_manifest(tmp_path):
    args = ["run", "--scenario", "box2d", "--seed", "0", "--out", str(tmp_path),
            "--set", "planner.mpc.horizon=60", *SMALL]
    assert main(args) == 0
    manifest = json.loads((tmp_path / "run" / "box2d" / "manifest.json").read_text())
    assert manifest["effective_config"]["planner"]["mpc"]["horizon"] == 60


def test_output_dir_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("KMERGODIC_OUTPUT_DIR", str(tmp_path))
    assert main(["run", "--scenario", "box2d", "--seed", "1", *SMALL]) == 0
    assert (tmp_path / "run" / "box2d" / "1" / "trace.csv").is_file()


def test_sample_target_csv(tmp_path):
    out = tmp_path / "s.csv"
    assert main(["sample-target", "--scenario", "box2d", "--seed", "2", "--set", "M=15", "--output", str(out)]) == 0
    rows = list(csv.reader(out.open()))
    assert len(rows) == 16


def test_suite_scaling_and_export(tmp_path, capsys):
    args = ["suite", "scaling", "--param", "T", "--values", "10,30", "--repeats", "1", "--out", str(tmp_path),
            "--set", "M=10", "--set", "planner.mpc.horizon=3", "--set", "planner.mpc.iterations=1"]
    assert main(args) == 0
    res = json.loads(capsys.readouterr().out)
    assert [r["T"] for r in res["table"]] == [10, 30]
    assert (tmp_path / "scaling" / "scaling" / "scaling_T.csv").is_file()

    assert main(["run", "--scenario", "box2d", "--seed", "0", "--seed", "1", "--out", str(tmp_path), *SMALL]) == 0
    capsys.readouterr()
    assert main(["export", str(tmp_path / "run")]) == 0
    rows = list(csv.DictReader((tmp_path / "run" / "trials.csv").open()))
    assert [r["seed"] for r in rows] == ["0", "1"]
    assert main(["export", str(tmp_path / "nothing")]) == 1


def test_console_entry_point_runs():
    proc = subprocess.run([sys.executable, "-c", "import sys; from kmergodic.cli import main; sys.exit(main())",
                           "--version"], capture_output=True, text=True)
    assert proc.returncode == 0 and __version__ in proc.stdout
