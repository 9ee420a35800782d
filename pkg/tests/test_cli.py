import argparse
import json
import os

import pytest

from uiim.cli import DEFAULTS, build_parser, resolve_config, run, toy_gradcheck
from uiim.corpus import SplitManifest, builtin_label_set, load_corpus


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    """One synth corpus + one tiny training run shared across CLI tests."""
    d = tmp_path_factory.mktemp("cli")
    out = str(d / "run")
    assert run(["synth", "--n", "12", "--seed", "3", "--out", out]) == 0
    code = run(["train", "--out", out, "--seed", "0", "--d-h", "8",
                "--heads", "2", "--epochs", "2", "--batch-size", "4",
                "--lr", "1e-3"])
    assert code == 0
    return out


# ---------------------------------------------------------------------------
# dispatch and exit codes


def test_unknown_subcommand_exits_1(capsys):
    assert run(["frobnicate"]) == 1
    assert "usage" in capsys.readouterr().err.lower()


def test_no_subcommand_exits_1(capsys):
    assert run([]) == 1
    assert "usage" in capsys.readouterr().err.lower()


def test_help_exits_0(capsys):
    assert run(["--help"]) == 0
    out = capsys.readouterr().out
    for cmd in ("synth", "train", "eval", "ablate", "gradcheck", "featurize"):
        assert cmd in out


def test_train_help_lists_defaults(capsys):
    assert run(["train", "--help"]) == 0
    out = capsys.readouterr().out
    for flag in ("--config", "--seed", "--corpus", "--labels", "--splits",
                 "--embeddings", "--out", "--batch-size", "--lr", "--dropout",
                 "--alpha", "--beta", "--gamma", "--d-h", "--heads",
                 "--epochs", "--patience"):
        assert flag in out
    assert "224" in out and "0.0001" in out and "0.7" in out


def test_missing_required_flag_exits_1(capsys):
    assert run(["synth", "--out", "x"]) == 1
    assert "--n" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# config resolution


def test_resolve_defaults():
    cfg = resolve_config(argparse.Namespace())
    assert cfg.batch_size == DEFAULTS["batch_size"]
    assert cfg.lr == DEFAULTS["lr"]
    assert cfg.d_h == 224 and cfg.heads == 4 and cfg.patience == 10


def test_resolve_config_file_then_flags(tmp_path):
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps({"d_h": 8, "heads": 2, "lr": 0.01}))
    cfg = resolve_config(argparse.Namespace(config=str(p)))
    assert (cfg.d_h, cfg.heads, cfg.lr) == (8, 2, 0.01)
    cfg = resolve_config(argparse.Namespace(config=str(p), d_h=16))
    assert cfg.d_h == 16  # flags win
    assert cfg.heads == 2


def test_resolve_rejects_unknown_config_field(tmp_path):
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps({"learning": 1}))
    with pytest.raises(ValueError, match="learning"):
        resolve_config(argparse.Namespace(config=str(p)))


def test_resolve_rejects_bad_json(tmp_path):
    p = tmp_path / "cfg.json"
    p.write_text("{not json")
    with pytest.raises(ValueError, match="JSON"):
        resolve_config(argparse.Namespace(config=str(p)))


def test_missing_config_file_exits_1(capsys):
    assert run(["gradcheck", "--config", "/nope/cfg.json"]) == 1
    assert "not found" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# synth


def test_synth_writes_corpus_and_manifest(workdir):
    labels = builtin_label_set("synthetic-4")
    convs = load_corpus(os.path.join(workdir, "corpus.jsonl"), labels)
    assert len(convs) == 12
    manifest = SplitManifest.load(os.path.join(workdir, "splits.json"))
    manifest.validate([c.id for c in convs])


def test_synth_rejects_tiny_corpus(tmp_path, capsys):
    assert run(["synth", "--n", "5", "--out", str(tmp_path / "x")]) == 1
    assert "error" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# train / eval


def test_train_outputs(workdir, capsys):
    assert os.path.exists(os.path.join(workdir, "metrics.csv"))
    assert os.path.exists(os.path.join(workdir, "best.npz"))
    assert os.path.exists(os.path.join(workdir, "latest.npz"))
    lines = open(os.path.join(workdir, "metrics.csv")).read().splitlines()
    assert lines[0].startswith("# config_hash=")
    assert lines[1] == "epoch,split,loss_cls,loss_u,loss_i,total,accuracy"


def test_eval_prints_accuracy_and_table(workdir, capsys):
    assert run(["eval", "--out", workdir]) == 0
    out = capsys.readouterr().out
    assert "test accuracy" in out
    for lab in ("question", "exclaim", "ack", "state"):
        assert lab in out
    assert "recall" in out


def test_eval_other_split(workdir, capsys):
    assert run(["eval", "--out", workdir, "--split", "validation"]) == 0
    assert "validation accuracy" in capsys.readouterr().out


def test_eval_missing_checkpoint_exits_1(tmp_path, workdir, capsys):
    code = run(["eval", "--out", workdir,
                "--checkpoint", str(tmp_path / "nope.npz")])
    assert code == 1
    assert "not found" in capsys.readouterr().err


def test_train_missing_out_exits_1(capsys):
    assert run(["train"]) == 1
    assert "--out" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# gradcheck


def test_gradcheck_cli(capsys):
    assert run(["gradcheck", "--seed", "1"]) == 0
    out = capsys.readouterr().out
    assert "max relative error" in out
    assert "pass" in out


def test_toy_gradcheck_below_tolerance():
    report = toy_gradcheck(1)
    assert report.passed
    assert report.max_rel_err < 1e-4


# ---------------------------------------------------------------------------
# featurize


def test_featurize_dumps_jsonl(workdir, tmp_path, capsys):
    out = str(tmp_path / "bundles.jsonl")
    code = run(["featurize", "--corpus", os.path.join(workdir, "corpus.jsonl"),
                "--out", out, "--seed", "0"])
    assert code == 0
    lines = open(out).read().splitlines()
    labels = builtin_label_set("synthetic-4")
    convs = load_corpus(os.path.join(workdir, "corpus.jsonl"), labels)
    assert len(lines) == sum(len(c.utterances) for c in convs)
    rec = json.loads(lines[0])
    assert set(rec) == {"conversation", "utterance", "label", "u_w", "u_p", "u_s"}
    first = convs[0].utterances[0]
    assert len(rec["u_w"]) == len(first.tokens)
    assert len(rec["u_w"][0]) == DEFAULTS["d_w"]
    assert len(rec["u_s"]) == 12


# ---------------------------------------------------------------------------
# ablate


def test_ablate_cli(workdir, tmp_path, capsys):
    out = str(tmp_path / "ablation")
    code = run(["ablate", "--corpus", os.path.join(workdir, "corpus.jsonl"),
                "--splits", os.path.join(workdir, "splits.json"),
                "--out", out, "--seed", "0", "--d-h", "8", "--heads", "2",
                "--epochs", "1", "--batch-size", "4"])
    assert code == 0
    printed = capsys.readouterr().out
    assert "uiim-full,test," in printed
    assert "concat-baseline,test," in printed
    table = open(os.path.join(out, "ablation.csv")).read().splitlines()
    assert table[0] == "variant,split,accuracy"
    assert len(table) == 3


# ---------------------------------------------------------------------------
# determinism


def test_synth_cli_deterministic(tmp_path):
    a, b = str(tmp_path / "a"), str(tmp_path / "b")
    assert run(["synth", "--n", "15", "--seed", "9", "--out", a]) == 0
    assert run(["synth", "--n", "15", "--seed", "9", "--out", b]) == 0
    for f in ("corpus.jsonl", "splits.json"):
        assert open(os.path.join(a, f), "rb").read() == \
            open(os.path.join(b, f), "rb").read()


def test_parser_builds():
    parser = build_parser()
    args = parser.parse_args(["synth", "--n", "10", "--out", "x"])
    assert args.command == "synth" and args.n == 10
