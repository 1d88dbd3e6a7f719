import csv
import json
import os

import pytest

from clever.cli import ABLATABLE, COMMANDS, build_parser, main

TINY = """seed = 2
[data]
kind = "synth"
samples_per_class = 6
resolution = 16
[train]
epochs = 2
warmup_epochs = 1
batch_size = 8
D = 10
K = 16
hidden = 8
n_local = 1
probe_batch = 8
[probe]
epochs = 3
batch_size = 16
"""


@pytest.fixture
def work(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    monkeypatch.setenv("CLEVER_LOG", "error")
    (tmp_path / "c.toml").write_text(TINY)
    return tmp_path


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    (root / "c.toml").write_text(TINY)
    os.environ["CLEVER_LOG"] = "error"
    try:
        assert main(["pretrain", "--config", str(root / "c.toml"), "--out", str(root / "a")]) == 0
    finally:
        os.environ.pop("CLEVER_LOG", None)
    return root


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def tree(d):
    return {p: (d / p).read_bytes() for p in sorted(os.listdir(d)) if (d / p).is_file()}


# ---------------------------------------------------------------- usage


def test_help_documents_every_flag(capsys):
    for name in COMMANDS:
        assert main([name, "--help"]) == 0
        text = capsys.readouterr().out
        flags = ("--csv", "--out", "--kind", "--title") if name == "report" else \
            ("--config", "--seed", "--out", "--workers", "--checkpoint")
        for flag in flags:
            assert flag in text, (name, flag)
        assert "default" in text
    assert main(["ablate", "--help"]) == 0
    out = capsys.readouterr().out
    assert "--param" in out and "--grid" in out
    assert main(["robustness", "--help"]) == 0
    assert "--suite" in capsys.readouterr().out
    assert main(["--help"]) == 0
    assert "CLEVER_LOG" in capsys.readouterr().out


def test_unknown_subcommand_is_usage_error(capsys):
    assert main(["frobnicate"]) == 2
    assert "usage" in capsys.readouterr().err
    assert main([]) == 2


def test_bad_log_level(work, monkeypatch, capsys):
    monkeypatch.setenv("CLEVER_LOG", "loud")
    assert main(["pretrain", "--config", "c.toml"]) == 2
    assert "CLEVER_LOG" in capsys.readouterr().err


def test_config_errors_exit_2_with_one_line(work, capsys):
    (work / "bad.toml").write_text(TINY.replace("[train]\n", '[train]\nstrategy = ""\n'))
    assert main(["pretrain", "--config", "bad.toml", "--out", "o"]) == 2
    err = capsys.readouterr().err
    assert "strategy" in err and err.count("\n") == 1


def test_eval_without_checkpoint_is_usage_error(work, capsys):
    assert main(["linear-probe", "--config", "c.toml", "--out", "p"]) == 2
    assert "--checkpoint" in capsys.readouterr().err


def test_manifest_is_written_before_failure(work, capsys):
    (work / "idx.toml").write_text('[data]\nkind = "idx"\nimages = "missing-img"\nlabels = "missing-lab"\n')
    assert main(["pretrain", "--config", "idx.toml", "--out", "o"]) == 1
    assert "missing-img" in capsys.readouterr().err
    m = json.loads((work / "o" / "manifest.json").read_text())
    assert m["command"] == "pretrain" and m["config"]["train"]["K"] == 256


def test_info_logging_goes_to_stderr(work, monkeypatch, capsys):
    monkeypatch.setenv("CLEVER_LOG", "info")
    (work / "x.csv").write_text("a,b\n0,1\n1,2\n")
    assert main(["report", "--csv", "x.csv", "--out", "x.svg"]) == 0
    cap = capsys.readouterr()
    assert "INFO" in cap.err and cap.out == ""


# ---------------------------------------------------------------- runs


def test_pretrain_is_reproducible(work):
    for out in ("r1", "r2"):
        assert main(["pretrain", "--config", "c.toml", "--seed", "7", "--out", out]) == 0
    a, b = tree(work / "r1"), tree(work / "r2")
    assert set(a) == {"manifest.json", "checkpoint.clvr", "train_log.csv", "collapse_log.csv", "collapse_log.svg"}
    assert a == b
    m = json.loads(a["manifest.json"])
    assert m["seed"] == 7 and m["artifacts"]["checkpoint"] == "checkpoint.clvr"


def test_rerun_from_manifest_and_worker_count(work):
    assert main(["pretrain", "--config", "c.toml", "--out", "r1"]) == 0
    assert main(["pretrain", "--config", "r1/manifest.json", "--out", "r2", "--workers", "3"]) == 0
    a, b = tree(work / "r1"), tree(work / "r2")
    for name in ("checkpoint.clvr", "train_log.csv", "collapse_log.csv"):
        assert a[name] == b[name], name
    assert json.loads(a["manifest.json"])["config"] == json.loads(b["manifest.json"])["config"]


def test_pretrain_resume_from_checkpoint(work):
    assert main(["pretrain", "--config", "c.toml", "--out", "full"]) == 0
    # cut the same schedule at step 2, then let the CLI finish it
    from clever.cli import _split
    from clever.config import parse_config
    from clever.trainer import save_checkpoint, train
    cfg, _ = parse_config(work / "c.toml")
    tr, _ = _split(cfg)
    save_checkpoint(train(cfg.train, tr.images, stop_after_step=2), work / "mid.clvr")
    assert main(["pretrain", "--config", "c.toml", "--out", "res", "--checkpoint", "mid.clvr"]) == 0
    assert (work / "res" / "checkpoint.clvr").read_bytes() == (work / "full" / "checkpoint.clvr").read_bytes()


def test_evaluation_subcommands(trained, monkeypatch):
    monkeypatch.chdir(trained)
    monkeypatch.setenv("CLEVER_LOG", "error")
    ck = ["--config", "c.toml", "--checkpoint", "a/checkpoint.clvr"]
    assert main(["linear-probe", *ck, "--out", "lp"]) == 0
    rows = read_rows(trained / "lp" / "probe.csv")
    assert rows[0] == ["source", "accuracy"] and [r[0] for r in rows[1:]] == ["ir", "ef", "joint"]
    assert all(0.0 <= float(r[1]) <= 1.0 for r in rows[1:])

    assert main(["robustness", *ck, "--out", "rb"]) == 0
    rows = read_rows(trained / "rb" / "robustness.csv")
    assert rows[0][1:] == ["Orig", "CJ", "CJ+Flip", "CJ+Ro", "CJ+Ro+ET"]
    assert (trained / "rb" / "robustness.svg").read_text().startswith("<svg")
    assert main(["robustness", *ck, "--out", "rb2", "--suite", "Orig,CJ+Ro"]) == 0
    assert read_rows(trained / "rb2" / "robustness.csv")[0] == ["model", "Orig", "CJ+Ro"]
    assert main(["robustness", *ck, "--out", "rb3", "--suite", "Blur"]) == 2

    assert main(["equiv-diag", *ck, "--out", "eq"]) == 0
    rows = read_rows(trained / "eq" / "equivariance.csv")
    assert [r[0] for r in rows[1:]] == ["rotation", "elastic", "jitter"]
    assert [r[1] for r in rows[1:]] == ["8", "2", "4"]

    assert main(["rotation-task", *ck, "--out", "rt"]) == 0
    rows = read_rows(trained / "rt" / "rotation_task.csv")
    assert rows[0] == ["source", "rot4", "Orig", "Ro(90)", "Ro(180)"]


def test_evaluation_is_reproducible(trained, monkeypatch):
    monkeypatch.chdir(trained)
    monkeypatch.setenv("CLEVER_LOG", "error")
    for out in ("p1", "p2"):
        assert main(["linear-probe", "--config", "c.toml", "--checkpoint", "a/checkpoint.clvr", "--out", out]) == 0
    assert tree(trained / "p1") == tree(trained / "p2")


def test_collapse_study_writes_arm_tables(work):
    assert main(["collapse-study", "--config", "c.toml", "--out", "cs"]) == 0
    for arm in ("lambda_0", "lambda_0.001"):
        rows = read_rows(work / "cs" / arm / "collapse.csv")
        assert rows[0] == ["epoch", "h_ir", "h_ef", "z_ir", "z_ef"]
        assert [r[0] for r in rows[1:]] == ["0", "1", "2"]
        assert json.loads((work / "cs" / arm / "manifest.json").read_text())["config"]["train"]["beta"] == 1.0
    summary = read_rows(work / "cs" / "collapse_study.csv")
    assert summary[0] == ["arm", "lam", "epoch", "h_ir", "h_ef", "gap"]
    assert [float(r[1]) for r in summary[1:]] == [0.0, 0.001]
    assert (work / "cs" / "collapse_study.svg").exists()


def test_ablate_writes_one_manifest_per_value(work):
    assert main(["ablate", "--config", "c.toml", "--out", "ab", "--param", "rho", "--grid", "0.5,1.0"]) == 0
    for name, rho in (("rho_0.5", 0.5), ("rho_1", 1.0)):
        m = json.loads((work / "ab" / name / "manifest.json").read_text())
        assert m["config"]["train"]["rho"] == rho
    rows = read_rows(work / "ab" / "ablation.csv")
    assert rows[0] == ["rho", "Orig", "CJ+Ro"] and [float(r[0]) for r in rows[1:]] == [0.5, 1.0]
    assert (work / "ab" / "ablation.svg").exists()


@pytest.mark.parametrize("argv", [
    ["--param", "colour", "--grid", "1"],
    ["--param", "rho", "--grid", "0.5,abc"],
    ["--param", "rho", "--grid", "0.5,0.0"],
    ["--param", "rho"],
])
def test_ablate_rejects_bad_grids_before_training(work, argv):
    assert main(["ablate", "--config", "c.toml", "--out", "ab", *argv]) == 2
    assert not (work / "ab" / "checkpoint.clvr").exists()


def test_ablatable_fields_exist():
    from clever.trainer import TrainConfig
    assert all(hasattr(TrainConfig(), p) for p in ABLATABLE)


def test_report_subcommand(work, capsys):
    (work / "t.csv").write_text("epoch,a\n0,1\n1,2\n")
    assert main(["report", "--csv", "t.csv", "--out", "t.svg"]) == 0
    first = (work / "t.svg").read_bytes()
    assert main(["report", "--csv", "t.csv", "--out", "t.svg"]) == 0
    assert (work / "t.svg").read_bytes() == first
    assert json.loads((work / "t.svg.manifest.json").read_text())["command"] == "report"
    (work / "bad.csv").write_text("epoch,a\n0,1\n1,oops\n")
    assert main(["report", "--csv", "bad.csv", "--out", "b.svg"]) == 1
    assert "line 3" in capsys.readouterr().err


def test_parser_defaults():
    args = build_parser().parse_args(["pretrain", "--config", "x.toml"])
    assert args.workers == 1 and args.seed is None and args.checkpoint is None
