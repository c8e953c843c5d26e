import json
import os

import pytest
import yaml

from hanmt import cli as CLI
from hanmt import config as CFG
from hanmt import corpus as C
from hanmt import metrics as ME
from hanmt.subword import UnigramTokenizer


def run_cli(*argv):
    return CLI.main(list(argv))


@pytest.fixture(scope="module")
def trained_run(tmp_path_factory):
    """synth -> prepare -> short train, shared by the CLI tests."""
    run_dir = str(tmp_path_factory.mktemp("run"))
    assert run_cli("--run-dir", run_dir, "--seed", "5", "synth", "--paired", "120",
                   "--unpaired", "40", "--themed", "60") == 0
    assert run_cli(
        "--run-dir", run_dir, "--seed", "5",
        "--set", "corpus.hanja_min_count=1",
        "--set", "corpus.korean_piece_target=80",
        "--set", "corpus.test_size=10",
        "prepare", "--corpus", os.path.join(run_dir, "corpus.jsonl"),
    ) == 0
    assert run_cli(
        "--run-dir", run_dir, "--seed", "5",
        "--set", "model.d_emb=16", "--set", "model.d_model=32",
        "--set", "model.d_ffn=64", "--set", "model.n_heads=2",
        "--set", "model.layers_shared=1", "--set", "model.layers_restore=1",
        "--set", "model.layers_decoder=1", "--set", "model.dropout=0.0",
        "--set", "model.max_len_hanja=20", "--set", "model.max_len_korean=40",
        "--set", "schedule.total_steps=30", "--set", "schedule.batch_size=8",
        "--set", "schedule.eval_cadence=10", "--set", "schedule.mode=multitask",
        "--set", "optimizer.lr=0.005",
        "train",
    ) == 0
    return run_dir


class TestConfig:
    def test_unknown_key_rejected(self, tmp_path):
        path = tmp_path / "bad.yaml"
        path.write_text("model:\n  d_modell: 64\n")
        with pytest.raises(CFG.ConfigError):
            CFG.load_config(str(path))

    def test_unknown_section_rejected(self, tmp_path):
        path = tmp_path / "bad.yaml"
        path.write_text("modell:\n  d_model: 64\n")
        with pytest.raises(CFG.ConfigError):
            CFG.load_config(str(path))

    def test_file_values_and_overrides(self, tmp_path):
        path = tmp_path / "ok.yaml"
        path.write_text("model:\n  d_model: 128\nschedule:\n  total_steps: 7\n")
        cfg = CFG.load_config(str(path), overrides=["model.d_emb=48"])
        assert cfg["model"]["d_model"] == 128
        assert cfg["model"]["d_emb"] == 48
        assert cfg["schedule"]["total_steps"] == 7

    def test_bad_override_rejected(self):
        with pytest.raises(CFG.ConfigError):
            CFG.load_config(None, overrides=["nonsense"])


class TestPipeline:
    def test_artifacts_laid_out(self, trained_run):
        for rel in (
            "corpus.jsonl", "hanja.vocab", "korean.vocab",
            "paired_train.jsonl", "paired_test.jsonl",
            "effective_config.yaml", "reports/prepare.json",
            "checkpoints/final.ckpt", "logs/train_log.jsonl",
            "reports/loss_curves.png",
        ):
            assert os.path.exists(os.path.join(trained_run, rel)), rel

    def test_metric_log_schema(self, trained_run):
        lines = open(os.path.join(trained_run, "logs", "train_log.jsonl")).read().splitlines()
        entry = json.loads(lines[0])
        assert set(entry) == {"step", "loss_rst", "loss_trs", "lr"}

    def test_effective_config_echoed(self, trained_run):
        cfg = yaml.safe_load(open(os.path.join(trained_run, "effective_config.yaml")))
        assert cfg["schedule"]["total_steps"] == 30
        assert cfg["model"]["d_model"] == 32

    def test_prepare_deterministic_vocab_hash(self, trained_run, tmp_path):
        other = str(tmp_path / "again")
        assert run_cli(
            "--run-dir", other, "--seed", "5",
            "--set", "corpus.hanja_min_count=1",
            "--set", "corpus.korean_piece_target=80",
            "--set", "corpus.test_size=10",
            "prepare", "--corpus", os.path.join(trained_run, "corpus.jsonl"),
        ) == 0
        a = json.load(open(os.path.join(trained_run, "reports", "prepare.json")))
        b = json.load(open(os.path.join(other, "reports", "prepare.json")))
        assert a["hanja_vocab_hash"] == b["hanja_vocab_hash"]
        assert a["korean_vocab_hash"] == b["korean_vocab_hash"]

    def test_translate_single_text(self, trained_run, capsys):
        assert run_cli("--run-dir", trained_run, "translate", "--text", "一丁丂七",
                       "--beam", "1") == 0
        out = json.loads(capsys.readouterr().out)
        assert out["source"] == "一丁丂七"
        assert "hypothesis" in out and "score" in out

    def test_translate_corpus_then_evaluate_matches_library(self, trained_run, capsys):
        hyp_path = os.path.join(trained_run, "reports", "hypotheses.jsonl")
        assert run_cli("--run-dir", trained_run, "translate",
                       "--input", os.path.join(trained_run, "paired_test.jsonl"),
                       "--output", hyp_path, "--beam", "1") == 0
        capsys.readouterr()
        assert run_cli("--run-dir", trained_run, "evaluate",
                       "--hyp", hyp_path,
                       "--ref", os.path.join(trained_run, "paired_test.jsonl")) == 0
        printed = json.loads(capsys.readouterr().out)

        kv = C.Vocab.load(os.path.join(trained_run, "korean.vocab"))
        tok = UnigramTokenizer.from_vocab(kv)
        refs_by_pair = {}
        for rec in C.read_jsonl(os.path.join(trained_run, "paired_test.jsonl")):
            if rec["side"] == "korean":
                refs_by_pair[rec["pair_id"]] = rec["text"]
        hyps, refs = [], []
        for line in open(hyp_path, encoding="utf-8"):
            row = json.loads(line)
            hyps.append(tok.segment(row["hypothesis"]))
            refs.append(tok.segment(refs_by_pair[row["pair_id"]]))
        assert printed["bleu"] == pytest.approx(ME.bleu(hyps, refs).value, abs=1e-12)
        assert printed["rouge_l"] == pytest.approx(ME.rouge_l(hyps, refs).value, abs=1e-12)

    def test_evaluate_identical_files_scores_one(self, trained_run, tmp_path, capsys):
        # references fed back as hypotheses must score exactly 1.0
        ref_path = os.path.join(trained_run, "paired_test.jsonl")
        hyp_path = str(tmp_path / "echo.jsonl")
        with open(hyp_path, "w", encoding="utf-8") as f:
            for rec in C.read_jsonl(ref_path):
                if rec["side"] == "korean":
                    f.write(json.dumps({
                        "id": rec["id"], "pair_id": rec["pair_id"],
                        "hypothesis": rec["text"],
                    }, ensure_ascii=False) + "\n")
        assert run_cli("--run-dir", trained_run, "evaluate",
                       "--hyp", hyp_path, "--ref", ref_path) == 0
        printed = json.loads(capsys.readouterr().out)
        assert printed["bleu"] == pytest.approx(1.0)
        assert printed["rouge_l"] == pytest.approx(1.0)

    def test_restore_outputs_ranked_candidates(self, trained_run, capsys):
        assert run_cli("--run-dir", trained_run, "restore",
                       "--text", "一□丂七", "-k", "5") == 0
        out = json.loads(capsys.readouterr().out)
        ranks = [c["rank"] for c in out["positions"]["1"]]
        assert ranks == [1, 2, 3, 4, 5]

    def test_topics_reports(self, trained_run, capsys):
        assert run_cli(
            "--run-dir", trained_run,
            "--set", "topics.k=2", "--set", "topics.granularity=year",
            "--set", "topics.window=3", "--set", "topics.max_iter=150",
            "topics", "--input", os.path.join(trained_run, "themed_docs.jsonl"),
        ) == 0
        reports = os.path.join(trained_run, "reports")
        assert os.path.exists(os.path.join(reports, "topics.json"))
        assert os.path.exists(os.path.join(reports, "topic_series", "topic_00.csv"))
        assert os.path.exists(os.path.join(reports, "topic_series.png"))
        payload = json.load(open(os.path.join(reports, "topics.json")))
        assert payload["k"] == 2

    def test_bad_checkpoint_is_clean_error(self, trained_run, capsys):
        code = run_cli("--run-dir", trained_run, "translate", "--text", "一丁",
                       "--checkpoint", "/nonexistent.ckpt")
        assert code == 2
        assert "error:" in capsys.readouterr().err

    def test_params_audit(self, capsys):
        assert run_cli("params") == 0
        out = json.loads(capsys.readouterr().out)
        assert out["attention_only"] > out["all"]
        assert abs(out["attention_only"] - out["reported_in_paper"]) / out["reported_in_paper"] < 0.01
