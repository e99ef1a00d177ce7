"""
Tests for CLI interface.
"""

import json

import pytest
from click.testing import CliRunner

from corefsum import __version__
from corefsum.annotation import CorefAnnotation
from corefsum.checkpoint import ModelCheckpoint
from corefsum.dialogue import Span
from corefsum.exceptions import NumericError
from corefsum.storage import (
    read_annotations,
    read_dialogues,
    read_lines,
    write_annotations,
    write_dialogues,
)
from corefsum.cli import cli, run

from .conftest import single


SUBCOMMANDS = ["postprocess", "graph", "train", "summarize", "probe", "evaluate", "gen-data", "version"]


@pytest.fixture
def corpus_dir(temp_dir):
    """Small synthetic corpus written by gen-data."""
    out = temp_dir / "corpus"
    result = run(["gen-data", "--n", "6", "--split", "4,1,1", "--seed", "3", "--out", str(out)])
    assert result.ok, result.message
    return out


@pytest.fixture
def trained(temp_dir, corpus_dir, tiny_config_file):
    """Checkpoint of a one-epoch attn model."""
    checkpoint = temp_dir / "attn.json"
    result = run([
        "train", "--variant", "attn", "--data", str(corpus_dir),
        "--config", str(tiny_config_file), "--out", str(checkpoint),
    ])
    assert result.ok, result.message
    return checkpoint


class TestCLI:
    """Test CLI functionality."""

    def test_version_command(self):
        """Test version command."""
        runner = CliRunner()
        result = runner.invoke(cli, ["version"])

        assert result.exit_code == 0
        assert f"corefsum {__version__}" in result.output

    def test_help_command(self):
        """Test help command."""
        runner = CliRunner()
        result = runner.invoke(cli, ["--help"])

        assert result.exit_code == 0
        assert "coreference-aware dialogue summarization" in result.output

    @pytest.mark.parametrize("command", SUBCOMMANDS)
    def test_subcommand_help(self, command):
        """Every subcommand documents itself."""
        runner = CliRunner()
        result = runner.invoke(cli, [command, "--help"])

        assert result.exit_code == 0
        assert "Usage" in result.output

    def test_unknown_command(self):
        """Unknown subcommands are usage errors."""
        runner = CliRunner()
        result = runner.invoke(cli, ["frobnicate"])

        assert result.exit_code == 1

    def test_missing_required_option(self):
        """Missing options are usage errors."""
        result = run(["evaluate", "--hyp", "h.txt"])

        assert result.exit_code == 1
        assert "--ref" in result.message

    def test_run_returns_result(self):
        """run() hands back the result instead of exiting."""
        result = run(["version"])

        assert result.ok
        assert result.message == f"corefsum {__version__}"


class TestEvaluateCommand:
    """Test the evaluate subcommand."""

    def test_identical_files(self, temp_dir):
        """Summaries scored against themselves get F = 1."""
        hyp = temp_dir / "hyp.txt"
        hyp.write_text("tom will fix the car .\namanda is with paul .\n", encoding="utf-8")
        report_path = temp_dir / "report.json"

        runner = CliRunner()
        result = runner.invoke(
            cli, ["evaluate", "--hyp", str(hyp), "--ref", str(hyp), "--out", str(report_path)]
        )

        assert result.exit_code == 0
        report = json.loads(report_path.read_text(encoding="utf-8"))
        assert {report[m]["f"] for m in ("rouge1", "rouge2", "rougeL")} == {1.0}
        assert report["count"] == 2

    def test_misaligned_files(self, temp_dir):
        """Different line counts are a validation error."""
        hyp = temp_dir / "hyp.txt"
        ref = temp_dir / "ref.txt"
        hyp.write_text("a\n", encoding="utf-8")
        ref.write_text("a\nb\n", encoding="utf-8")

        assert run(["evaluate", "--hyp", str(hyp), "--ref", str(ref)]).exit_code == 3

    def test_missing_file(self, temp_dir):
        """Unreadable inputs are I/O errors."""
        missing = str(temp_dir / "missing.txt")

        assert run(["evaluate", "--hyp", missing, "--ref", missing]).exit_code == 2


class TestPostprocessCommand:
    """Test the postprocess subcommand."""

    def test_three_inputs(self, temp_dir, chat):
        """Three resolver runs are merged and speakers are attached."""
        dialogues = write_dialogues(temp_dir / "d.jsonl", [chat])
        inputs = []
        for i in range(3):
            path = temp_dir / f"run{i}.jsonl"
            write_annotations(path, [CorefAnnotation("chat-1", (single(4, 8),))])
            inputs.append(str(path))
        out = temp_dir / "merged.jsonl"

        result = run(["postprocess", "--inputs", *inputs, "--dialogues", str(dialogues), "--out", str(out)])

        assert result.ok, result.message
        (merged,) = read_annotations(out)
        assert merged.dialogue_id == "chat-1"
        amanda = next(c for c in merged.clusters if Span(4, 4) in c)
        assert Span(6, 6) in amanda
        assert Span(8, 8) in amanda

    def test_invalid_jsonl_line(self, temp_dir, chat):
        """A broken input line exits 3 and names the line."""
        dialogues = write_dialogues(temp_dir / "d.jsonl", [chat])
        bad = temp_dir / "bad.jsonl"
        bad.write_text('{"dialogue_id": "chat-1", "clusters": []}\n{not json\n', encoding="utf-8")

        result = run([
            "postprocess", "--inputs", str(bad), "--dialogues", str(dialogues),
            "--out", str(temp_dir / "out.jsonl"),
        ])

        assert result.exit_code == 3
        assert "bad.jsonl:2:" in result.message

    def test_missing_input(self, temp_dir, chat):
        """A missing resolver file exits 2."""
        dialogues = write_dialogues(temp_dir / "d.jsonl", [chat])

        result = run([
            "postprocess", "--inputs", str(temp_dir / "missing.jsonl"),
            "--dialogues", str(dialogues), "--out", str(temp_dir / "out.jsonl"),
        ])

        assert result.exit_code == 2


class TestGraphCommand:
    """Test the graph subcommand."""

    def test_dump(self, temp_dir, chat):
        """One record per dialogue with edges and both matrices."""
        dialogues = write_dialogues(temp_dir / "d.jsonl", [chat])
        coref = write_annotations(temp_dir / "c.jsonl", [CorefAnnotation("chat-1", (single(4, 8),))])
        out = temp_dir / "graphs.jsonl"

        result = run(["graph", "--dialogues", str(dialogues), "--coref", str(coref), "--out", str(out)])

        assert result.ok, result.message
        (record,) = [json.loads(line) for line in read_lines(out)]
        assert record["dialogue_id"] == "chat-1"
        assert record["n"] == 17
        assert record["edges"] == [[4, 8]]


class TestGenDataCommand:
    """Test the gen-data subcommand."""

    def test_writes_corpus_and_config(self, corpus_dir):
        """Every split, its coref file and a training config are written."""
        for name in ("train", "validation", "test"):
            assert (corpus_dir / f"{name}.jsonl").exists()
            assert (corpus_dir / f"{name}.coref.jsonl").exists()
        assert (corpus_dir / "train.cfg").exists()
        assert len(read_dialogues(corpus_dir / "train.jsonl")) == 4

    def test_bad_split(self, temp_dir):
        """Split sizes must add up to --n."""
        result = run(["gen-data", "--n", "6", "--split", "4,1,2", "--out", str(temp_dir / "c")])

        assert result.exit_code == 3


class TestTrainPipeline:
    """Test train, summarize and probe together."""

    def test_train_writes_checkpoint(self, trained):
        """The checkpoint records its variant and training history."""
        checkpoint = ModelCheckpoint.load(trained)

        assert checkpoint.variant == "attn"
        assert len(checkpoint.training["history"]) == 1

    def test_summarize(self, temp_dir, corpus_dir, trained):
        """One summary line per test dialogue."""
        out = temp_dir / "summaries.txt"

        result = run([
            "summarize", "--checkpoint", str(trained),
            "--dialogues", str(corpus_dir / "test.jsonl"),
            "--coref", str(corpus_dir / "test.coref.jsonl"), "--out", str(out),
        ])

        assert result.ok, result.message
        assert len(read_lines(out)) == 1

    def test_probe_then_headrep(self, temp_dir, corpus_dir, trained, tiny_config_file):
        """A probe report can drive head selection for headrep."""
        report_path = temp_dir / "probe.json"
        probed = run([
            "probe", "--checkpoint", str(trained), "--data", str(corpus_dir), "--out", str(report_path),
        ])
        assert probed.ok, probed.message
        report = json.loads(report_path.read_text(encoding="utf-8"))
        assert [entry["layer"] for entry in report["layers"]] == [0]

        out = temp_dir / "headrep.json"
        result = run([
            "train", "--variant", "headrep", "--data", str(corpus_dir),
            "--config", str(tiny_config_file), "--probe-report", str(report_path), "--out", str(out),
        ])

        assert result.ok, result.message
        assert ModelCheckpoint.load(out).config.heads == ((0, report["layers"][0]["selected"]),)

    def test_headrep_with_heads_in_config(self, temp_dir, corpus_dir, tiny_config_file):
        """Heads set in the config file are used by --variant headrep."""
        config_path = temp_dir / "headrep.cfg"
        config_path.write_text(tiny_config_file.read_text(encoding="utf-8") + "heads=0:1\n", encoding="utf-8")
        out = temp_dir / "headrep.json"

        result = run([
            "train", "--variant", "headrep", "--data", str(corpus_dir),
            "--config", str(config_path), "--out", str(out),
        ])

        assert result.ok, result.message
        assert ModelCheckpoint.load(out).config.heads == ((0, 1),)

    def test_config_heads_dropped_for_other_variants(self, temp_dir, corpus_dir, tiny_config_file):
        """A config written for headrep still trains the other variants."""
        config_path = temp_dir / "headrep.cfg"
        config_path.write_text(tiny_config_file.read_text(encoding="utf-8") + "heads=0:1\n", encoding="utf-8")
        out = temp_dir / "base.json"

        result = run([
            "train", "--variant", "base", "--data", str(corpus_dir),
            "--config", str(config_path), "--out", str(out),
        ])

        assert result.ok, result.message
        assert ModelCheckpoint.load(out).config.heads == ()

    def test_heads_need_headrep(self, temp_dir, corpus_dir, tiny_config_file):
        """Head flags with another variant are rejected."""
        result = run([
            "train", "--variant", "base", "--data", str(corpus_dir), "--config", str(tiny_config_file),
            "--heads", "0:1", "--out", str(temp_dir / "x.json"),
        ])

        assert result.exit_code == 3

    def test_numeric_failure_exit_code(self, temp_dir, corpus_dir, tiny_config_file, mocker):
        """A numeric failure during training exits 4."""
        mocker.patch("corefsum.cli.train_model", side_effect=NumericError("non-finite loss"))

        result = run([
            "train", "--variant", "gnn", "--data", str(corpus_dir), "--config", str(tiny_config_file),
            "--out", str(temp_dir / "x.json"),
        ])

        assert result.exit_code == 4
        assert not (temp_dir / "x.json").exists()
