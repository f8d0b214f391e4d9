"""Command-line workflows, exercised in-process via main(argv)."""

import json

import pytest

from mgsched.cli import ENV_OUT, main

from conftest import tiny_document


@pytest.fixture()
def sys_file(tmp_path):
    p = tmp_path / "system.json"
    p.write_text(json.dumps(tiny_document()))
    return p


def test_missing_input_is_usage_error(tmp_path, capsys):
    with pytest.raises(SystemExit) as exc:
        main(["schedule", "--input", str(tmp_path / "nope.json")])
    assert exc.value.code == 2
    assert "not found" in capsys.readouterr().err


def test_dry_run_builds_without_solving(sys_file, tmp_path, capsys):
    out = tmp_path / "dry"
    rc = main(["schedule", "--input", str(sys_file), "--out", str(out),
               "--dry-run"])
    assert rc == 0
    assert "model ok" in capsys.readouterr().out
    assert not (out / "schedule.csv").exists()


def test_schedule_writes_artifacts(sys_file, tmp_path, capsys):
    out = tmp_path / "run"
    rc = main(["schedule", "--input", str(sys_file), "--out", str(out),
               "--gap", "1e-3", "--export", "mps"])
    assert rc == 0
    for name in ("schedule.csv", "costs.csv", "solve.log",
                 "frequency_report.csv", "model.mps"):
        assert (out / name).exists(), name
    assert "objective" in capsys.readouterr().out
    costs = (out / "costs.csv").read_text()
    assert costs.startswith("component,value")
    assert "total," in costs


def test_artifacts_reproducible(sys_file, tmp_path):
    outs = []
    for tag in ("a", "b"):
        out = tmp_path / tag
        assert main(["schedule", "--input", str(sys_file), "--out", str(out),
                     "--gap", "1e-3", "--seed", "7"]) == 0
        outs.append(out)
    for name in ("schedule.csv", "costs.csv", "frequency_report.csv"):
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()


def test_validate_roundtrip_and_tamper(sys_file, tmp_path, capsys):
    out = tmp_path / "run"
    assert main(["schedule", "--input", str(sys_file), "--out", str(out),
                 "--gap", "1e-3"]) == 0
    sched = out / "schedule.csv"
    rc = main(["validate", str(sched), "--input", str(sys_file),
               "--out", str(tmp_path / "val")])
    assert rc == 0

    # wipe the reserve column: the settling point must now be flagged
    lines = sched.read_text().splitlines(keepends=True)
    tampered = tmp_path / "tampered.csv"
    tampered.write_text("".join(
        line.rsplit(",", 1)[0] + ",0\n" if ",pfr," in line else line
        for line in lines))
    rc = main(["validate", str(tampered), "--input", str(sys_file),
               "--out", str(tmp_path / "val2")])
    assert rc == 1
    assert "violation" in capsys.readouterr().err


def test_validate_usage_errors(sys_file, tmp_path, capsys):
    rc = main(["validate", str(tmp_path / "missing.csv"),
               "--input", str(sys_file), "--out", str(tmp_path / "v")])
    assert rc == 2
    empty = tmp_path / "empty.csv"
    empty.write_text("t,s,kind,id,field,value\n")
    rc = main(["validate", str(empty), "--input", str(sys_file),
               "--out", str(tmp_path / "v")])
    assert rc == 2
    assert "no event/commitment rows" in capsys.readouterr().err


def test_experiment_unknown_name(sys_file, tmp_path, capsys):
    rc = main(["experiment", "volcano", "--input", str(sys_file),
               "--out", str(tmp_path / "e")])
    assert rc == 2
    assert "valid names" in capsys.readouterr().err


def test_experiment_dry_run(sys_file, tmp_path):
    rc = main(["experiment", "cases_I_IV", "--input", str(sys_file),
               "--out", str(tmp_path / "e"), "--dry-run"])
    assert rc == 0


def test_export_formats(sys_file, tmp_path, capsys):
    out = tmp_path / "x"
    rc = main(["export", "--input", str(sys_file), "--out", str(out)])
    assert rc == 0
    assert (out / "model.mps").exists()
    # this model carries cone rows, which the LP format cannot express
    rc = main(["export", "--input", str(sys_file), "--out", str(out),
               "--export", "lp"])
    assert rc == 1
    assert "export failed" in capsys.readouterr().err


def test_out_dir_from_environment(sys_file, tmp_path, monkeypatch):
    env_out = tmp_path / "from_env"
    monkeypatch.setenv(ENV_OUT, str(env_out))
    rc = main(["export", "--input", str(sys_file)])
    assert rc == 0
    assert (env_out / "model.mps").exists()


def test_delay_override_flag(sys_file, tmp_path, capsys):
    out = tmp_path / "d"
    rc = main(["schedule", "--input", str(sys_file), "--out", str(out),
               "--gap", "1e-3", "--delay", "0.0"])
    assert rc == 0
    text = (out / "schedule.csv").read_text()
    assert ",t_s,0" in text  # event data carries the overridden delay
