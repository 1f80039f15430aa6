"""Command-line surface: exit codes, artifacts, resume, ablation table."""

import dataclasses
import json
import os

import pytest

from driftlab.cli import main
from driftlab.config import default_config, save_config
from driftlab.persist import load_json

pytestmark = pytest.mark.usefixtures("chdir_tmp")


@pytest.fixture
def chdir_tmp(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    monkeypatch.delenv("DRIFTLAB_THREADS", raising=False)


def small_config_file(path="small.json", **run_overrides):
    exp = default_config()
    exp = dataclasses.replace(
        exp,
        stream=dataclasses.replace(exp.stream, n_per_class=40),
        net=dataclasses.replace(exp.net, hidden=(12, 8), feature_dim=6),
        pretrain=dataclasses.replace(exp.pretrain, epochs=12),
    )
    if run_overrides:
        exp = dataclasses.replace(
            exp, run=dataclasses.replace(exp.run, **run_overrides)
        )
    save_config(path, exp)
    return path


def test_run_emits_artifacts_and_summary(capsys):
    cfg = small_config_file()
    assert main(["run", "--config", cfg, "--out", "out"]) == 0
    got = capsys.readouterr().out
    assert got.startswith("run [ACLS_ADIS seed 0]: mean accuracy ")
    for name in (
        "pretrain.json",
        "ledger.json",
        "ledger.csv",
        "checkpoint_final.json",
        "checkpoint_step01.json",
        "checkpoint_step06.json",
    ):
        assert os.path.exists(os.path.join("out", name)), name


def test_run_is_seed_deterministic(capsys):
    cfg = small_config_file()
    assert main(["run", "--config", cfg, "--seed", "3", "--out", "a"]) == 0
    assert main(["run", "--config", cfg, "--seed", "3", "--out", "b"]) == 0
    with open("a/ledger.json", "rb") as fh:
        first = fh.read()
    with open("b/ledger.json", "rb") as fh:
        second = fh.read()
    assert first == second
    assert json.loads(first)["seed"] == 3


def test_variant_override_is_case_insensitive(capsys):
    cfg = small_config_file()
    assert main(["run", "--config", cfg, "--variant", "cls", "--out", "o"]) == 0
    doc = load_json(os.path.join("o", "ledger.json"))
    assert doc["variant"] == "CLS"


def test_unknown_variant_exits_config(capsys):
    cfg = small_config_file()
    assert main(["run", "--config", cfg, "--variant", "nope", "--out", "o"]) == 2
    err = capsys.readouterr().err
    assert "config error" in err and "ACLS_ADIS" in err


def test_invalid_config_value_exits_config(capsys):
    cfg = small_config_file(alpha=-1.0)
    assert main(["run", "--config", cfg, "--out", "o"]) == 2
    err = capsys.readouterr().err
    assert "run/alpha" in err or "run.alpha" in err


def test_unwritable_out_exits_io(capsys):
    cfg = small_config_file()
    with open("blocker", "w") as fh:
        fh.write("x")
    assert main(["run", "--config", cfg, "--out", "blocker/sub"]) == 1
    assert "i/o error" in capsys.readouterr().err


def test_resume_rebuilds_identical_artifacts(capsys):
    cfg = small_config_file()
    assert main(["run", "--config", cfg, "--out", "full"]) == 0
    args = ["run", "--config", cfg, "--out", "late",
            "--resume", "full/checkpoint_step03.json"]
    assert main(args) == 0
    for name in ("ledger.json", "ledger.csv", "checkpoint_final.json"):
        with open(os.path.join("full", name), "rb") as fh:
            a = fh.read()
        with open(os.path.join("late", name), "rb") as fh:
            b = fh.read()
        assert a == b, f"{name} differs after resume"


def test_resume_wrong_config_exits_config(capsys):
    cfg = small_config_file()
    assert main(["run", "--config", cfg, "--out", "full"]) == 0
    other = small_config_file(path="other.json", alpha=2.0)
    args = ["run", "--config", other, "--out", "late",
            "--resume", "full/checkpoint_step02.json"]
    assert main(args) == 2
    assert "different config" in capsys.readouterr().err


def test_resume_non_checkpoint_exits_io(capsys):
    cfg = small_config_file()
    with open("junk.json", "w") as fh:
        json.dump({"kind": "something"}, fh)
    assert main(["run", "--config", cfg, "--out", "o",
                 "--resume", "junk.json"]) == 1
    assert "not a driftlab checkpoint" in capsys.readouterr().err


def test_resume_honors_thread_override(capsys):
    # thread count is an execution detail; changing it must not be
    # mistaken for a config change at resume time
    cfg = small_config_file()
    assert main(["run", "--config", cfg, "--out", "full"]) == 0
    args = ["run", "--config", cfg, "--out", "late", "--threads", "2",
            "--resume", "full/checkpoint_step03.json"]
    assert main(args) == 0
    with open("full/ledger.json", "rb") as fh:
        a = fh.read()
    with open("late/ledger.json", "rb") as fh:
        b = fh.read()
    assert a == b


def test_threads_flag_beats_env(capsys, monkeypatch):
    cfg = small_config_file()
    monkeypatch.setenv("DRIFTLAB_THREADS", "garbage")
    assert main(["run", "--config", cfg, "--out", "o"]) == 2
    assert "DRIFTLAB_THREADS" in capsys.readouterr().err
    assert main(["run", "--config", cfg, "--threads", "2", "--out", "o"]) == 0


def test_pretrain_then_run_reuses_checkpoint(capsys):
    cfg = small_config_file()
    assert main(["pretrain", "--config", cfg, "--out", "o"]) == 0
    out = capsys.readouterr().out
    assert out.startswith("pretrain: source test accuracy ")
    stamp = os.path.getmtime(os.path.join("o", "pretrain.json"))
    assert main(["run", "--config", cfg, "--out", "o"]) == 0
    assert os.path.getmtime(os.path.join("o", "pretrain.json")) == stamp


def test_ablate_covers_every_variant(capsys):
    cfg = small_config_file()
    assert main(["ablate", "--config", cfg, "--out", "ab"]) == 0
    with open("ab/ablation.csv", "r", encoding="utf-8") as fh:
        rows = fh.read().splitlines()
    assert rows[0] == "variant,mean_accuracy,mean_forgetting"
    variants = [r.split(",")[0] for r in rows[1:]]
    assert variants == [
        "ACLS_ADIS", "ACLS_DIS", "CLS_DIS", "CLS",
        "ACLS_ADIS_M1", "ACLS_DIS_A10", "ACLS_ADISPRIME",
    ]
    # the default-variant row must equal a standalone run of that variant
    assert main(["run", "--config", cfg, "--out", "solo"]) == 0
    with open("ab/acls_adis/ledger.json", "rb") as fh:
        a = fh.read()
    with open("solo/ledger.json", "rb") as fh:
        b = fh.read()
    assert a == b


def test_report_prints_summary(capsys):
    cfg = small_config_file()
    assert main(["run", "--config", cfg, "--out", "o"]) == 0
    capsys.readouterr()
    assert main(["report", "--out", "o"]) == 0
    out = capsys.readouterr().out
    assert out.startswith("variant ACLS_ADIS, seed 0")
    assert "mean adaptation accuracy:" in out
    assert "mean forgetting:" in out


def test_report_missing_dir_exits_io(capsys):
    assert main(["report", "--out", "nowhere"]) == 1
    assert "i/o error" in capsys.readouterr().err


def test_gradcheck_small_budget_passes(capsys):
    assert main(["gradcheck", "--seed", "1", "--trials", "14"]) == 0
    out = capsys.readouterr().out
    assert out.startswith("gradcheck: 14 configurations, worst rel err ")


def test_gradcheck_detects_injected_fault(capsys):
    args = ["gradcheck", "--seed", "1", "--trials", "7", "--inject-sign-flip"]
    assert main(args) == 5
    assert "FAILED" in capsys.readouterr().err


def test_gradcheck_rejects_empty_budget(capsys):
    assert main(["gradcheck", "--trials", "0"]) == 2
    assert "config error" in capsys.readouterr().err
