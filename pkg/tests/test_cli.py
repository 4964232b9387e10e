import json
import subprocess
import sys

import pytest

from weakforge.cli import EXIT_ABORTED, EXIT_ERROR, EXIT_OK, build_parser, main, resolve_config
from weakforge.corpus import ingest_jsonl
from weakforge.pipeline import desk_config

TINY_FLAGS = ["--n-seed", "16", "--n-unlabeled", "6", "--n-test", "8", "--iterations", "1",
              "--pretrain-steps", "3", "--pretrain-examples", "40", "--arch-d-model", "8",
              "--sft-epochs", "1", "--pref-epochs", "1", "--eval-max-new-tokens", "12"]


def resolve(argv, env=None):
    return resolve_config(build_parser().parse_args(argv), env or {})


def last_json(capsys):
    return json.loads(capsys.readouterr().out.strip().splitlines()[-1])


def test_defaults_are_desk():
    assert resolve(["eval", "--checkpoint", "x"]) == desk_config()


def test_precedence(tmp_path):
    f = tmp_path / "c.json"
    f.write_text(json.dumps({"seed": 1, "n_test": 77, "pref": {"beta": 0.5, "lr": 0.01}}))
    cfg = resolve(["self-reinforce", "--config", str(f)])
    assert (cfg.seed, cfg.n_test, cfg.pref.beta, cfg.pref.lr) == (1, 77, 0.5, 0.01)
    # untouched nested keys keep the preset's values
    assert cfg.pref.batch_size == desk_config().pref.batch_size
    cfg = resolve(["self-reinforce", "--config", str(f)], {"WEAKFORGE_SEED": "5"})
    assert cfg.seed == 5
    cfg = resolve(["self-reinforce", "--config", str(f), "--seed", "9", "--pref-beta", "0.05"],
                  {"WEAKFORGE_SEED": "5"})
    assert (cfg.seed, cfg.pref.beta, cfg.n_test) == (9, 0.05, 77)


def test_flags_mirror_config():
    cfg = resolve(["train-sft", "--no-filtering", "--arch-n-layer", "2", "--sft-loss-span",
                   "rationale-only", "--decode-top-k", "3", "--judge-mode", "self-prompt",
                   "--preset", "paper"])
    assert not cfg.filtering and cfg.arch.n_layer == 2 and cfg.decode.top_k == 3
    assert cfg.sft.loss_span == "rationale-only" and cfg.judge_mode == "self-prompt"
    assert cfg.n_seed == 6400


def test_bad_config_exits_1(tmp_path, capsys):
    f = tmp_path / "c.json"
    f.write_text(json.dumps({"bogus": 1}))
    assert main(["eval", "--checkpoint", "x", "--config", str(f)]) == EXIT_ERROR
    assert "bogus" in capsys.readouterr().err
    assert main(["eval", "--checkpoint", str(tmp_path / "missing.wkfg")]) == EXIT_ERROR
    assert main(["eval", "--checkpoint", "x", "--pref-loss-mode", "ipo"]) == EXIT_ERROR


def test_gen_data(tmp_path, capsys):
    out = tmp_path / "d.jsonl"
    assert main(["gen-data", *TINY_FLAGS, "--out", str(out)]) == EXIT_OK
    info = last_json(capsys)
    assert (info["seed"], info["unlabeled"], info["test"]) == (16, 6, 8)
    ds = ingest_jsonl(out)
    assert [ex.split for ex in ds].count("test") == 8


def test_train_eval_report(tmp_path, capsys):
    run = tmp_path / "run"
    assert main(["train-sft", *TINY_FLAGS, "--output-dir", str(run)]) == EXIT_OK
    trained = last_json(capsys)
    ck = run / "checkpoints" / "pi1.wkfg"
    assert ck.exists() and (run / "checkpoints" / "pi0.wkfg").exists()
    assert main(["eval", *TINY_FLAGS, "--checkpoint", str(ck)]) == EXIT_OK
    ev = last_json(capsys)
    assert ev["n"] == 8 and ev["accuracy"] == trained["accuracy"]
    assert ev["version_id"] == trained["version_id"]
    csv = tmp_path / "r.csv"
    assert main(["report", *TINY_FLAGS, "--checkpoint", str(ck), "--buckets", "3",
                 "--out", str(csv)]) == EXIT_OK
    assert len(csv.read_text().splitlines()) == 4


def test_self_reinforce_exit_codes(tmp_path, capsys):
    ok = ["self-reinforce", *TINY_FLAGS, "--no-filtering", "--output-dir", str(tmp_path / "a")]
    assert main(ok) == EXIT_OK
    rows = [json.loads(x) for x in capsys.readouterr().out.splitlines()]
    assert [r["t"] for r in rows] == [0, 1, 2]
    assert (tmp_path / "a" / "metrics.jsonl").exists()
    # untrained strong model: every pair is rejected and the round aborts
    aborted = ["self-reinforce", *TINY_FLAGS, "--pretrain-steps", "0", "--sft-epochs", "0",
               "--output-dir", str(tmp_path / "b")]
    assert main(aborted) == EXIT_ABORTED


def test_grad_check(capsys):
    assert main(["grad-check", "--snapshots", "5"]) == EXIT_OK
    s = last_json(capsys)
    assert s["cases"] == s["passed"] == 5
    assert set(s["by_kind"]) == {"sft/rationale-and-answer", "sft/rationale-only", "dpo/logsigmoid",
                                 "dpo/hinge-margin", "dpo/paper-literal"}


def test_console_script_module():
    r = subprocess.run([sys.executable, "-m", "weakforge.cli", "--help"], capture_output=True, text=True)
    assert r.returncode == 0
    for cmd in ("gen-data", "train-sft", "self-reinforce", "eval", "report", "grad-check"):
        assert cmd in r.stdout


def test_missing_subcommand():
    with pytest.raises(SystemExit):
        main([])
