import filecmp

import pytest

from seqchat.cli import PRESETS, _parse_bind, build_parser, main
from tests.conftest import FIXTURE_CONVERSATIONS, FIXTURE_LINES, GOLDEN_DIR


def run_preprocess(out_dir, *extra):
    return main(["preprocess",
                 "--lines", str(FIXTURE_LINES),
                 "--conversations", str(FIXTURE_CONVERSATIONS),
                 "--out", str(out_dir), *extra])


def run_train(tmp_path, out_name="run", *extra):
    data_dir = tmp_path / "data"
    assert run_preprocess(data_dir) == 0
    out_dir = tmp_path / out_name
    code = main(["train",
                 "--dataset", str(data_dir / "dataset.txt"),
                 "--vocab", str(data_dir / "vocab.txt"),
                 "--out", str(out_dir),
                 "--seed", "0",
                 "--epochs", "1",
                 "--batch-size", "8",
                 "--embedding-size", "8",
                 "--rnn-size", "8", *extra])
    return code, data_dir, out_dir


class TestPreprocess:
    def test_matches_golden_outputs(self, tmp_path, capsys):
        assert run_preprocess(tmp_path) == 0
        assert filecmp.cmp(tmp_path / "dataset.txt", GOLDEN_DIR / "dataset.txt",
                           shallow=False)
        assert filecmp.cmp(tmp_path / "vocab.txt", GOLDEN_DIR / "vocab.txt",
                           shallow=False)
        out = capsys.readouterr().out
        assert "filtered pairs: 43" in out
        assert "22992" in out  # calibration target is always reported
        assert "vocab size: 182" in out

    def test_byte_identical_across_runs(self, tmp_path):
        run_preprocess(tmp_path / "a")
        run_preprocess(tmp_path / "b")
        assert (tmp_path / "a/dataset.txt").read_bytes() == \
            (tmp_path / "b/dataset.txt").read_bytes()
        assert (tmp_path / "a/vocab.txt").read_bytes() == \
            (tmp_path / "b/vocab.txt").read_bytes()

    def test_missing_input_is_exit_2(self, tmp_path, capsys):
        code = main(["preprocess", "--lines", str(tmp_path / "nope.txt"),
                     "--conversations", str(FIXTURE_CONVERSATIONS),
                     "--out", str(tmp_path)])
        assert code == 2
        assert "error:" in capsys.readouterr().err

    def test_custom_buckets_and_lengths(self, tmp_path, capsys):
        assert run_preprocess(tmp_path, "--buckets", "6,12", "--min-len", "3",
                              "--max-len", "4") == 0
        header = (tmp_path / "dataset.txt").read_text().splitlines()[0]
        assert header.endswith(" 6,12")


class TestTrain:
    def test_writes_checkpoints_and_report(self, tmp_path, capsys):
        code, _, out_dir = run_train(tmp_path)
        assert code == 0
        assert (out_dir / "last.ckpt").exists()
        assert (out_dir / "best.ckpt").exists()
        report = (out_dir / "report.txt").read_text().splitlines()
        assert report[0].startswith("epoch\t")
        assert len(report) == 2
        assert "epoch 0:" in capsys.readouterr().out

    def test_epochs_zero_checkpoints_initial_params(self, tmp_path):
        code, _, out_dir = run_train(tmp_path, "zero", "--epochs", "0")
        assert code == 0
        assert (out_dir / "last.ckpt").exists()
        assert not (out_dir / "best.ckpt").exists()
        report = (out_dir / "report.txt").read_text().splitlines()
        assert len(report) == 1  # header only

    def test_preset_values_reach_config(self, tmp_path):
        from seqchat.train import load_checkpoint
        code, _, out_dir = run_train(tmp_path, "preset", "--preset", "config1")
        assert code == 0
        config = load_checkpoint(out_dir / "last.ckpt").config
        # flags override the preset; untouched preset fields survive
        assert config.embedding_size == 8
        assert config.keep_probability == 0.75
        assert config.learning_rate_decay == 0.9

    def test_config_file_applies_and_flags_override(self, tmp_path):
        from seqchat.train import load_checkpoint
        cfg = tmp_path / "model.cfg"
        cfg.write_text("# comment\nkeep_probability=0.9\nrnn_size=16\n")
        code, _, out_dir = run_train(tmp_path, "cfg", "--config", str(cfg))
        assert code == 0
        config = load_checkpoint(out_dir / "last.ckpt").config
        assert config.keep_probability == 0.9
        assert config.rnn_size == 8  # --rnn-size flag wins over the file

    def test_unknown_config_key_is_exit_2(self, tmp_path, capsys):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("nonsense=1\n")
        code, *_ = run_train(tmp_path, "bad", "--config", str(cfg))
        assert code == 2
        assert "nonsense" in capsys.readouterr().err


class TestPresetTable:
    def test_preset_hyperparameters(self):
        assert PRESETS["config3"] == dict(
            batch_size=32, embedding_size=1024, rnn_size=1024,
            learning_rate=0.001, epochs=50, keep_probability=0.7,
            min_learning_rate=0.0001, learning_rate_decay=0.9)
        assert PRESETS["config1"]["batch_size"] == 128
        assert PRESETS["config1"]["epochs"] == 500
        assert PRESETS["config2"]["rnn_size"] == 512
        assert PRESETS["config2"]["epochs"] == 100

    def test_default_preset_is_config3(self):
        args = build_parser().parse_args(
            ["train", "--dataset", "d", "--vocab", "v", "--out", "o"])
        assert args.preset == "config3"


class TestEval:
    def test_eval_prints_metrics(self, tmp_path, capsys):
        code, data_dir, out_dir = run_train(tmp_path)
        assert code == 0
        code = main(["eval", "--dataset", str(data_dir / "dataset.txt"),
                     "--checkpoint", str(out_dir / "last.ckpt")])
        assert code == 0
        out = capsys.readouterr().out
        assert "perplexity:" in out and "token accuracy:" in out

    def test_vocab_mismatch_is_exit_2(self, tmp_path, capsys):
        code, data_dir, out_dir = run_train(tmp_path)
        assert code == 0
        other = tmp_path / "other"
        assert run_preprocess(other, "--keep-n", "50") == 0
        code = main(["eval", "--dataset", str(other / "dataset.txt"),
                     "--checkpoint", str(out_dir / "last.ckpt")])
        assert code == 2
        assert "vocab" in capsys.readouterr().err.lower()


class TestChat:
    def test_reads_lines_until_quit(self, tiny_run, capsys, monkeypatch):
        question = tiny_run["pairs"][0].question
        lines = iter([question, "", "/quit"])
        monkeypatch.setattr("builtins.input", lambda prompt="": next(lines))
        code = main(["chat", "--checkpoint", str(tiny_run["checkpoint"])])
        assert code == 0
        out = capsys.readouterr().out
        assert "Bot: " in out

    def test_eof_exits_cleanly(self, tiny_run, capsys, monkeypatch):
        def raise_eof(prompt=""):
            raise EOFError
        monkeypatch.setattr("builtins.input", raise_eof)
        assert main(["chat", "--checkpoint", str(tiny_run["checkpoint"])]) == 0

    def test_bad_checkpoint_is_exit_2(self, tmp_path, capsys):
        bad = tmp_path / "junk.ckpt"
        bad.write_bytes(b"junk\n")
        assert main(["chat", "--checkpoint", str(bad)]) == 2


class TestServeCli:
    def test_bad_checkpoint_path_is_exit_2(self, tmp_path, capsys):
        code = main(["serve", "--checkpoint", str(tmp_path / "missing.ckpt")])
        assert code == 2
        assert "error:" in capsys.readouterr().err

    def test_parse_bind(self):
        assert _parse_bind("127.0.0.1:8080") == ("127.0.0.1", 8080)
        with pytest.raises(ValueError):
            _parse_bind("8080")
        with pytest.raises(ValueError):
            _parse_bind("host:port")

    def test_default_bind_documented(self):
        args = build_parser().parse_args(["serve", "--checkpoint", "x"])
        assert args.bind == "127.0.0.1:8080"
        assert args.max_inflight == 4
