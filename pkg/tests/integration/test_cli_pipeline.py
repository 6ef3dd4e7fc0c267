"""
Integration tests for the attend_affect command-line pipeline.
"""
import pytest
import sys
import json
import shutil
from pathlib import Path

# Add the project root to Python path so we can import attend_affect modules
project_root = Path(__file__).parent.parent.parent
sys.path.insert(0, str(project_root))

from attend_affect.config import EXIT_DATA, EXIT_OK, EXIT_USAGE
from attend_affect.run_pipeline import main

TINY_CONFIG = """\
synth:
  n_targets: 4
  clips_per_target: 1
  duration_mean: 8.0
  duration_std: 0.0
  duration_min: 8.0
  observers: 3
  dims: {V: 3, A: 2, L: 3}
  periods: {V: 0.5, A: 1.0, L: 2.0}
model:
  embed_dims: {V: 4, A: 4, L: 4}
  n_heads: 2
  n_blocks: 1
  ffn_multiplier: 2
  decoder_hidden: 4
  d_mem: 4
  mfn_hidden: 4
train:
  max_epochs: 2
  patience: 2
"""


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """Synthesize, split and train an MFT once for every test in this module."""
    root = tmp_path_factory.mktemp("pipeline")
    config = root / "tiny.yaml"
    config.write_text(TINY_CONFIG)
    paths = {"root": root, "config": config, "corpus": root / "corpus", "split": root / "split.json",
             "checkpoint": root / "mft.npz"}
    assert main(["--config", str(config), "synth", "--out", str(paths["corpus"]), "--seed", "1"]) == EXIT_OK
    assert main(["split", "--corpus", str(paths["corpus"]), "--out", str(paths["split"]), "--seed", "0"]) == EXIT_OK
    assert main(["--config", str(config), "train", "--corpus", str(paths["corpus"]), "--split", str(paths["split"]),
                 "--out", str(paths["checkpoint"]), "--model", "MFT", "--modalities", "VAL", "--seed", "2"]) == EXIT_OK
    return paths


class TestPipeline:
    """Test synth -> split -> train -> eval -> predict."""

    def test_corpus_and_split_written(self, workspace):
        """Test the corpus manifest and a 2/1/1 target split exist."""
        manifest = json.loads((workspace["corpus"] / "manifest.json").read_text())
        assert len(manifest["clips"]) == 4
        assert manifest["synthetic"] is True
        split = json.loads(workspace["split"].read_text())
        assert [len(split["targets"][p]) for p in ("train", "val", "test")] == [2, 1, 1]
        assert split["config"]["synth"]["seed"] == 1

    def test_training_outputs(self, workspace):
        """Test the checkpoint and its history sidecar with the effective config."""
        assert workspace["checkpoint"].is_file()
        history = json.loads(workspace["checkpoint"].with_suffix(".history.json").read_text())
        assert len(history["train_loss"]) == 2
        assert history["config"]["model"]["kind"] == "MFT"
        assert history["config"]["model"]["n_max"]["V"] >= 2
        assert history["config"]["train"]["max_epochs"] == 2

    def test_eval_with_human_column(self, workspace, capsys):
        """Test eval prints per-clip CCC and writes a JSON report."""
        out = workspace["root"] / "report.json"
        code = main(["eval", "--checkpoint", str(workspace["checkpoint"]), "--corpus", str(workspace["corpus"]),
                     "--split", str(workspace["split"]), "--human", "--out", str(out)])
        assert code == EXIT_OK
        printed = capsys.readouterr().out
        assert "MFT(VAL) on test (synthetic corpus)" in printed
        assert "mean CCC" in printed
        report = json.loads(out.read_text())
        assert report["model"] == "MFT"
        assert len(report["clips"]) == 1
        assert "human" in report["clips"][0]
        assert report["config"]["eval"]["partition"] == "test"

    def test_eval_refuses_training_targets(self, workspace, capsys):
        """Test a second manifest whose test targets were trained on exits with the data error code."""
        targets = json.loads(workspace["split"].read_text())["targets"]
        swapped = workspace["root"] / "swapped.json"
        swapped.write_text(json.dumps({"seed": 0, "targets": {
            "train": targets["val"], "val": targets["test"], "test": targets["train"]}}))
        code = main(["eval", "--checkpoint", str(workspace["checkpoint"]), "--corpus", str(workspace["corpus"]),
                     "--split", str(swapped)])
        assert code == EXIT_DATA
        assert "training targets" in capsys.readouterr().err

    def test_predict_with_changes_and_attention(self, workspace):
        """Test the prediction CSV, top-changes table and attention file."""
        out, attention = workspace["root"] / "pred.csv", workspace["root"] / "attention.csv"
        code = main(["predict", "--checkpoint", str(workspace["checkpoint"]), "--corpus", str(workspace["corpus"]),
                     "--clip", "clip0000", "--top-changes", "3", "--attention", str(attention), "--out", str(out)])
        assert code == EXIT_OK
        lines = [line for line in out.read_text().splitlines() if line and not line.startswith("#")]
        header = lines.index("window,start_s,value")
        changes = lines.index("rank,window,start_s,delta")
        assert changes - header - 1 == 8, "expected one prediction per second of an 8 s clip"
        assert len(lines) - changes - 1 == 3
        rows = [line for line in attention.read_text().splitlines() if not line.startswith("#")]
        assert rows[0] == "window,start_s,A,L,V"
        assert len(rows) == 9
        shares = [float(v) for v in rows[1].split(",")[2:]]
        assert sum(shares) == pytest.approx(1.0)

    def test_attention_needs_fusion_model(self, workspace):
        """Test --attention on a single-stream model is a configuration error."""
        checkpoint = workspace["root"] / "b1.npz"
        assert main(["--config", str(workspace["config"]), "train", "--corpus", str(workspace["corpus"]),
                     "--split", str(workspace["split"]), "--out", str(checkpoint), "--model", "B1",
                     "--modalities", "A", "--epochs", "1"]) == EXIT_OK
        code = main(["predict", "--checkpoint", str(checkpoint), "--corpus", str(workspace["corpus"]),
                     "--clip", "clip0000", "--attention", str(workspace["root"] / "never.csv")])
        assert code == EXIT_DATA
        assert not (workspace["root"] / "never.csv").exists()

    def test_window_plan_covers_test_clips(self, workspace, tmp_path):
        """Test a test-only clip twice as dense as the rest sets the visual n_max."""
        corpus = Path(shutil.copytree(workspace["corpus"], tmp_path / "corpus"))
        test_clip = json.loads(workspace["split"].read_text())["clips"]["test"][0]
        path = corpus / test_clip / "visual.csv"
        header, *rows = path.read_text().splitlines()
        dense = []
        for row in rows:
            t, *values = row.split(",")
            dense += [row, ",".join([repr(float(t) + 0.01), *values])]
        path.write_text("\n".join([header, *dense]) + "\n")
        checkpoint = tmp_path / "dense.npz"
        assert main(["--config", str(workspace["config"]), "train", "--corpus", str(corpus),
                     "--split", str(workspace["split"]), "--out", str(checkpoint), "--model", "B1",
                     "--modalities", "V", "--epochs", "1"]) == EXIT_OK
        history = json.loads(checkpoint.with_suffix(".history.json").read_text())
        assert history["config"]["model"]["n_max"]["V"] == 4

    def test_results_table(self, workspace, capsys):
        """Test the table command over two kinds, one subset and two seeds, with human rows."""
        out = workspace["root"] / "table.json"
        code = main(["--config", str(workspace["config"]), "table", "--corpus", str(workspace["corpus"]),
                     "--split", str(workspace["split"]), "--models", "B1", "MFT", "--subsets", "AV",
                     "--n-seeds", "2", "--epochs", "1", "--human", "--out", str(out)])
        assert code == EXIT_OK
        lines = capsys.readouterr().out.splitlines()
        assert len(lines) == 1 + 4 + 2
        assert lines[-1].startswith("HUMAN")
        payload = json.loads(out.read_text())
        assert [(c["kind"], c["modalities"], c["partition"]) for c in payload["cells"]] == [
            ("B1_LSTM", "VA", "val"), ("B1_LSTM", "VA", "test"), ("MFT", "VA", "val"), ("MFT", "VA", "test")]
        assert all(c["seeds"] == [0, 1] for c in payload["cells"])
        assert payload["config"]["seeds"] == [0, 1]

    def test_bench_human(self, workspace, capsys):
        """Test the human benchmark table over the whole corpus."""
        assert main(["bench-human", "--corpus", str(workspace["corpus"])]) == EXIT_OK
        lines = capsys.readouterr().out.splitlines()
        assert lines[0] == "clip_id,human_ccc"
        assert lines[-2].startswith("mean,")
        assert len(lines) == 1 + 4 + 2


class TestCommandLine:
    """Test exit codes and the standalone commands."""

    def test_gradcheck_command(self, capsys):
        """Test the gradient check over every kind and subset succeeds."""
        assert main(["gradcheck", "--components", "1"]) == EXIT_OK
        assert "over 29 checks" in capsys.readouterr().out

    def test_unknown_flag(self, capsys):
        """Test an unknown option is a usage error."""
        assert main(["split", "--corpus", "x", "--out", "y", "--bogus"]) == EXIT_USAGE
        assert "usage error" in capsys.readouterr().err

    def test_missing_command(self):
        """Test no subcommand is a usage error."""
        assert main([]) == EXIT_USAGE

    def test_missing_corpus(self, tmp_path):
        """Test a corpus directory without a manifest exits with the data error code."""
        assert main(["split", "--corpus", str(tmp_path / "nope"), "--out", str(tmp_path / "s.json")]) == EXIT_DATA

    def test_clip_entry_without_id(self, workspace, tmp_path):
        """Test a manifest clip lacking clip_id exits with the data error code."""
        corpus = Path(shutil.copytree(workspace["corpus"], tmp_path / "corpus"))
        manifest = json.loads((corpus / "manifest.json").read_text())
        del manifest["clips"][0]["clip_id"]
        (corpus / "manifest.json").write_text(json.dumps(manifest))
        assert main(["bench-human", "--corpus", str(corpus)]) == EXIT_DATA

    def test_unknown_config_section(self, tmp_path):
        """Test a config file with an unknown section is rejected."""
        config = tmp_path / "bad.yaml"
        config.write_text("optimizer:\n  lr: 0.1\n")
        assert main(["--config", str(config), "gradcheck"]) == EXIT_DATA

    def test_help_exits_cleanly(self, capsys):
        """Test --help returns success."""
        assert main(["--help"]) == EXIT_OK
        assert "synth" in capsys.readouterr().out


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
