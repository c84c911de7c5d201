import json
import os
import subprocess
import sys

import pytest

from fkcoarse import cli
from fkcoarse.cli import EXIT_CONFIG, EXIT_MISMATCH, EXIT_OK, EXIT_VIOLATION, ConfigError, load_config, main, parse_text


def test_parse_text_comments_and_spaces():
    text = "# header\nmodel.q = 2   # trailing\n\n run.replicas=5\n"
    assert parse_text(text) == {"model.q": "2", "run.replicas": "5"}
    with pytest.raises(ConfigError):
        parse_text("no equals sign")


def test_hash_stable_under_spelling():
    a = load_config("dlr-failure", None, ["model.q=2", "model.p=0.5"], 7)
    b = load_config("dlr-failure", None, ["model.q=2.0", "model.p=5e-1"], 7)
    c = load_config("dlr-failure", None, ["model.q=3"], 7)
    assert a.hash == b.hash
    assert a.hash != c.hash
    assert a.hash != load_config("dlr-failure", None, ["model.q=2"], 8).hash


def test_config_file_and_override(tmp_path):
    f = tmp_path / "c.txt"
    f.write_text("model.q = 4\nmodel.p = 0.3\n")
    cfg = load_config("dlr-failure", str(f), ["model.q=2"], 0)
    assert cfg["model.q"] == 2.0 and cfg["model.p"] == 0.3


@pytest.mark.parametrize(
    "sets",
    [["bogus.key=1"], ["geometry.N=8"], ["model.q=abc"], ["model.q=0.5"], ["model.lambda=1"], ["noequals"]],
)
def test_config_errors(tmp_path, sets, capsys):
    argv = ["dlr-failure", "--out", str(tmp_path)]
    for s in sets:
        argv += ["--set", s]
    assert main(argv) == EXIT_CONFIG
    assert "config error" in capsys.readouterr().err
    assert not os.listdir(tmp_path)


def test_unknown_experiment_and_bad_seed(tmp_path):
    assert main(["nope", "--out", str(tmp_path)]) == EXIT_CONFIG
    assert main(["dlr-failure", "--seed", "-1", "--out", str(tmp_path)]) == EXIT_CONFIG
    assert main(["reproduce"]) == EXIT_CONFIG


def test_run_writes_records(tmp_path):
    assert main(["dlr-failure", "--out", str(tmp_path), "--seed", "3"]) == EXIT_OK
    lines = (tmp_path / "dlr-failure.jsonl").read_text(encoding="utf-8").splitlines()
    head = json.loads(lines[0])
    assert head["kind"] == "config" and head["seed"] == 3
    recs = [json.loads(ln) for ln in lines[1:]]
    assert [r["metric"] for r in recs] == ["conditional", "closed_form", "unconditional_sup", "margin"]
    assert all(r["config_hash"] == head["config_hash"] for r in recs)
    assert abs(recs[0]["value"] - 3 / 11) < 1e-15


def test_csv_table(tmp_path):
    assert main(["enumerate", "--out", str(tmp_path)]) == EXIT_OK
    rows = (tmp_path / "enumerate.csv").read_text().splitlines()
    assert rows[0] == "q,p,wired,free,deviation"
    assert len(rows) == 1 + 4 * 9


def test_reproduce_identical_and_altered(tmp_path, capsys):
    out = tmp_path / "r"
    argv = ["crossing", "--out", str(out), "--seed", "5", "--set", "geometry.N_list=8", "--set", "run.replicas=4", "--set", "run.sweeps=4"]
    assert main(argv) == EXIT_OK
    capsys.readouterr()
    assert main(["reproduce", str(out)]) == EXIT_OK
    assert "identically" in capsys.readouterr().out
    assert main(["reproduce", str(out), "--seed", "6"]) == EXIT_MISMATCH
    msg = capsys.readouterr().out
    assert "MISMATCH" in msg and "seed: 5 -> 6" in msg
    assert main(["reproduce", str(out), "--set", "run.replicas=5"]) == EXIT_MISMATCH
    assert "run.replicas: 4 -> 5" in capsys.readouterr().out


def test_reproduce_detects_edited_record(tmp_path):
    assert main(["dlr-failure", "--out", str(tmp_path)]) == EXIT_OK
    path = tmp_path / "dlr-failure.jsonl"
    lines = path.read_text().splitlines()
    rec = json.loads(lines[1])
    rec["value"] = 0.5
    lines[1] = json.dumps(rec)
    path.write_text("\n".join(lines) + "\n")
    assert main(["reproduce", str(tmp_path)]) == EXIT_MISMATCH


def test_violation_exit(tmp_path, monkeypatch):
    from fkcoarse import experiments
    from fkcoarse.experiments import constants_check

    real = constants_check()

    def broken(grid=1000):
        real.guard_failures = 1
        return real

    monkeypatch.setattr(experiments, "constants_check", broken)
    assert main(["constants", "--out", str(tmp_path), "--set", "run.samples=10"]) == EXIT_VIOLATION
    assert '"kind":"violation"' in (tmp_path / "constants.jsonl").read_text()


def test_invariant_exception_exit(tmp_path, monkeypatch):
    from fkcoarse.ising import InvariantViolation

    def boom(cfg):
        raise InvariantViolation("forced")

    monkeypatch.setitem(cli.EXPERIMENTS, "constants", cli.Experiment(boom, ("run.samples",)))
    assert main(["constants", "--out", str(tmp_path)]) == EXIT_VIOLATION


def test_schema_lists_every_key(capsys):
    assert main(["schema"]) == EXIT_OK
    out = capsys.readouterr().out
    for k in cli.SCHEMA:
        assert k in out


def test_console_script(tmp_path):
    proc = subprocess.run(
        [sys.executable, "-m", "fkcoarse.cli", "dlr-failure", "--out", str(tmp_path), "--set", "model.q=1"],
        capture_output=True, text=True,
    )
    assert proc.returncode == EXIT_OK
    assert "margin = 0" in proc.stdout
