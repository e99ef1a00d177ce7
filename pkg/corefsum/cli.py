#!/usr/bin/env python3
"""
Main CLI interface for corefsum.

One subcommand per pipeline stage. Every subcommand returns a
CommandResult; the group turns library errors into exit codes
(1 usage, 2 I/O, 3 validation, 4 numeric) so ``run`` can be called from
Python and the console script behaves the same way.
"""

import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import click

from . import __version__
from .annotation import CorefAnnotation, align_resolver_output, index_by_dialogue
from .checkpoint import ModelCheckpoint
from .config import ConfigFile, worker_count
from .corpus import load_corpus, load_split, save_corpus
from .dialogue import Dialogue, flatten_dialogue
from .evaluation import score_report
from .exceptions import ConfigurationError, CorefSumError
from .fusion import HeadSelection, ProbeReportEntry
from .model import ModelConfig
from .numerics import RngState
from .postprocess import DEFAULT_MIN_VOTES, EnsembleInput, postprocess
from .storage import (
    read_annotations,
    read_dialogues,
    read_json,
    read_lines,
    read_resolver_predictions,
    write_annotations,
    write_json,
    write_jsonl,
    write_lines,
)
from .structures import structures_record
from .summarizer import Summarizer
from .synthetic import generate_synthetic
from .training import TrainingConfig, train as train_model


logger = logging.getLogger(__name__)

RANDOM_HEADS_STREAM = 4


@dataclass
class CommandResult:
    """Outcome of one CLI invocation."""

    exit_code: int = 0
    artifacts: List[Path] = field(default_factory=list)
    message: str = ""

    @property
    def ok(self) -> bool:
        return self.exit_code == 0


def setup_logging(verbose: bool = False) -> None:
    """Setup logging configuration."""
    level = logging.DEBUG if verbose else logging.INFO
    logging.basicConfig(
        level=level,
        format="%(asctime)s - %(levelname)s - %(message)s",
        datefmt="%Y-%m-%d %H:%M:%S",
    )


class PipelineGroup(click.Group):
    """Click group that reports failures as exit codes instead of tracebacks."""

    def main(self, args=None, prog_name=None, complete_var=None, standalone_mode=True, **extra):
        result = self._run(args, prog_name, complete_var, **extra)
        if standalone_mode:
            sys.exit(result.exit_code)
        return result

    def _run(self, args, prog_name, complete_var, **extra) -> CommandResult:
        try:
            value = super().main(
                args=args,
                prog_name=prog_name or "corefsum",
                complete_var=complete_var,
                standalone_mode=False,
                **extra,
            )
        except click.UsageError as e:
            e.show()
            return CommandResult(exit_code=1, message=e.format_message())
        except click.ClickException as e:
            e.show()
            return CommandResult(exit_code=1, message=e.format_message())
        except click.Abort:
            click.echo("Aborted!", err=True)
            return CommandResult(exit_code=1, message="aborted")
        except CorefSumError as e:
            click.echo(f"Error: {e}", err=True)
            return CommandResult(exit_code=e.exit_code, message=str(e))
        except OSError as e:
            click.echo(f"Error: {e}", err=True)
            return CommandResult(exit_code=2, message=str(e))

        if isinstance(value, CommandResult):
            if value.message:
                click.echo(value.message)
            return value
        # --help and similar exits come back as plain codes
        return CommandResult(exit_code=value if isinstance(value, int) else 0)


@click.group(cls=PipelineGroup)
@click.option("--verbose", "-v", is_flag=True, help="Enable verbose logging")
@click.pass_context
def cli(ctx, verbose):
    """corefsum - coreference-aware dialogue summarization"""
    setup_logging(verbose)
    ctx.ensure_object(dict)
    ctx.obj["verbose"] = verbose


def _pool_map(fn, items: Sequence[Any]) -> List[Any]:
    workers = min(worker_count(), max(len(items), 1))
    if workers <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _annotations_for(
    dialogues: Sequence[Dialogue], coref: Optional[str]
) -> List[CorefAnnotation]:
    indexed: Dict[str, CorefAnnotation] = {}
    if coref:
        indexed = index_by_dialogue(read_annotations(coref), coref)
    annotations = []
    for dialogue in dialogues:
        if coref and dialogue.id not in indexed:
            logger.warning(f"{coref}: no annotation for dialogue {dialogue.id}")
        annotations.append(indexed.get(dialogue.id) or CorefAnnotation.empty(dialogue.id))
    return annotations


def _read_ensemble_member(
    path: str, dialogues: Dict[str, Dialogue], resolver_format: bool
) -> Dict[str, CorefAnnotation]:
    if not resolver_format:
        return index_by_dialogue(read_annotations(path), path)
    aligned = []
    for dialogue_id, document, clusters in read_resolver_predictions(path):
        if dialogue_id not in dialogues:
            logger.warning(f"{path}: prediction for unknown dialogue {dialogue_id}")
            continue
        sequence = flatten_dialogue(dialogues[dialogue_id])
        aligned.append(align_resolver_output(document, clusters, sequence, dialogue_id))
    return index_by_dialogue(aligned, path)


@cli.command("postprocess")
@click.option("--inputs", "inputs", multiple=True, required=True,
              help="Coref JSONL file from one resolver run (repeatable; more files may follow)")
@click.argument("more_inputs", nargs=-1, type=click.Path())
@click.option("--dialogues", required=True, type=click.Path(), help="Dialogue JSONL file")
@click.option("--min-votes", type=int, default=None,
              help=f"Votes needed to keep a mention or link (default {DEFAULT_MIN_VOTES}, capped at the input count)")
@click.option("--resolver-format", is_flag=True,
              help="Inputs are resolver predictions with document and clusters")
@click.option("--out", required=True, type=click.Path(), help="Merged coref JSONL to write")
def postprocess_command(inputs, more_inputs, dialogues, min_votes, resolver_format, out):
    """Ensemble and clean up automatic coreference for dialogues

    Examples:
      corefsum postprocess --inputs a.jsonl b.jsonl c.jsonl --dialogues d.jsonl --out merged.jsonl
    """
    paths = list(inputs) + list(more_inputs)
    dialogue_list = read_dialogues(dialogues)
    by_id = {d.id: d for d in dialogue_list}
    members = [_read_ensemble_member(p, by_id, resolver_format) for p in paths]
    votes = min_votes if min_votes is not None else min(DEFAULT_MIN_VOTES, len(paths))

    def process(dialogue: Dialogue) -> CorefAnnotation:
        annotations = []
        for path, member in zip(paths, members):
            if dialogue.id not in member:
                logger.warning(f"{path}: no annotation for dialogue {dialogue.id}")
            annotations.append(member.get(dialogue.id) or CorefAnnotation.empty(dialogue.id))
        return postprocess(EnsembleInput(tuple(annotations), votes), dialogue)

    merged = _pool_map(process, dialogue_list)
    written = write_annotations(out, merged)
    return CommandResult(
        artifacts=[written],
        message=f"Post-processed {len(merged)} dialogues from {len(paths)} inputs into {out}",
    )


@cli.command("graph")
@click.option("--dialogues", required=True, type=click.Path(), help="Dialogue JSONL file")
@click.option("--coref", required=True, type=click.Path(), help="Coref JSONL file")
@click.option("--out", required=True, type=click.Path(), help="JSONL of graphs and A^c matrices")
def graph_command(dialogues, coref, out):
    """Dump the coreference graph and attention matrix of every dialogue"""
    dialogue_list = read_dialogues(dialogues)
    annotations = _annotations_for(dialogue_list, coref)
    records = [
        structures_record(annotation, len(flatten_dialogue(dialogue)))
        for dialogue, annotation in zip(dialogue_list, annotations)
    ]
    written = write_jsonl(out, records)
    return CommandResult(artifacts=[written], message=f"Wrote structures for {len(records)} dialogues to {out}")


def _head_selection(
    mc: ModelConfig,
    heads: Optional[str],
    probe_report: Optional[str],
    random_heads: Optional[int],
    seed: int,
) -> HeadSelection:
    given = [flag for flag, value in (("--heads", heads), ("--probe-report", probe_report),
                                      ("--random-heads", random_heads)) if value is not None]
    if len(given) > 1:
        raise ConfigurationError(f"Use only one of {', '.join(given)}")
    if given and mc.variant != "headrep":
        raise ConfigurationError(f"{given[0]} only applies to --variant headrep")
    if heads is not None:
        return HeadSelection.parse(heads)
    if probe_report is not None:
        record = read_json(probe_report)
        entries = record.get("layers") if isinstance(record, dict) else None
        if not isinstance(entries, list):
            raise ConfigurationError(f"{probe_report}: probe report has no layers list")
        return HeadSelection.from_probe_report([ProbeReportEntry.from_dict(e) for e in entries])
    if random_heads is not None:
        rng = RngState(seed).fork(RANDOM_HEADS_STREAM)
        return HeadSelection.random(mc.encoder_layers, mc.num_heads, random_heads, rng)
    return mc.head_selection


@cli.command("train")
@click.option("--variant", type=click.Choice(["base", "gnn", "attn", "headrep"]), required=True,
              help="Where coreference enters the encoder")
@click.option("--data", required=True, type=click.Path(), help="Corpus directory (train/validation splits)")
@click.option("--config", "config_path", type=click.Path(), default=None,
              help="key=value training config file")
@click.option("--out", required=True, type=click.Path(), help="Checkpoint JSON to write")
@click.option("--heads", default=None, help="Heads to replace, as layer:head,... (headrep)")
@click.option("--probe-report", default=None, type=click.Path(), help="Pick heads from a probe report (headrep)")
@click.option("--random-heads", type=int, default=None, help="Replace N randomly chosen heads (headrep)")
@click.option("--seed", type=int, default=None, help="Seed for all randomness (overrides the config)")
@click.option("--fixed-lambda", is_flag=True, help="Keep the fusion weight at its initial value")
def train_command(variant, data, config_path, out, heads, probe_report, random_heads, seed, fixed_lambda):
    """Train a summarizer variant and save the best checkpoint"""
    mc, tc = ConfigFile(config_path).to_configs()
    mc = replace(mc, variant=variant, seed=seed if seed is not None else mc.seed)
    if variant != "headrep":
        mc = replace(mc, heads=())
    selection = _head_selection(mc, heads, probe_report, random_heads, mc.seed)
    mc = replace(mc, heads=selection.pairs, trainable_lambda=mc.trainable_lambda and not fixed_lambda)
    mc.check()

    result = train_model(load_corpus(data), mc, tc)
    result.checkpoint.save(out)
    return CommandResult(
        artifacts=[Path(out)],
        message=(
            f"Trained {variant} for {len(result.history)} epochs ({result.steps} steps), "
            f"best epoch {result.best_epoch}, saved {out}"
        ),
    )


@cli.command("summarize")
@click.option("--checkpoint", required=True, type=click.Path(), help="Checkpoint JSON")
@click.option("--dialogues", required=True, type=click.Path(), help="Dialogue JSONL file")
@click.option("--coref", default=None, type=click.Path(), help="Coref JSONL file (empty clusters when omitted)")
@click.option("--out", required=True, type=click.Path(), help="Summaries, one per line")
def summarize_command(checkpoint, dialogues, coref, out):
    """Summarize dialogues with a trained checkpoint"""
    summarizer = Summarizer.from_checkpoint(ModelCheckpoint.load(checkpoint))
    dialogue_list = read_dialogues(dialogues)
    annotations = _annotations_for(dialogue_list, coref)
    summaries = summarizer.summarize_many(list(zip(dialogue_list, annotations)))
    written = write_lines(out, summaries)
    return CommandResult(artifacts=[written], message=f"Wrote {len(summaries)} summaries to {out}")


@cli.command("probe")
@click.option("--checkpoint", required=True, type=click.Path(), help="Checkpoint JSON")
@click.option("--data", required=True, type=click.Path(), help="Corpus directory")
@click.option("--split", default="validation", type=click.Choice(["train", "validation", "test"]),
              help="Split to probe on")
@click.option("--out", required=True, type=click.Path(), help="Probe report JSON to write")
def probe_command(checkpoint, data, split, out):
    """Rank encoder heads by similarity to the coreference attention matrix"""
    summarizer = Summarizer.from_checkpoint(ModelCheckpoint.load(checkpoint))
    examples = load_split(data, split)
    entries = summarizer.probe([(e.dialogue, e.annotation) for e in examples], workers=worker_count())
    selection = HeadSelection.from_probe_report(entries)
    written = write_json(out, {"layers": [e.to_dict() for e in entries], "selected": str(selection)})
    return CommandResult(artifacts=[written], message=f"Selected heads {selection}; report in {out}")


@cli.command("evaluate")
@click.option("--hyp", required=True, type=click.Path(), help="Hypothesis summaries, one per line")
@click.option("--ref", required=True, type=click.Path(), help="Reference summaries, one per line")
@click.option("--out", default=None, type=click.Path(), help="Also write the JSON report here")
def evaluate_command(hyp, ref, out):
    """Score summaries with ROUGE-1/2/L and length statistics"""
    report = score_report(read_lines(hyp), read_lines(ref), worker_count())
    artifacts = [write_json(out, report)] if out else []
    return CommandResult(artifacts=artifacts, message=json.dumps(report, indent=2))


def _parse_split(text: str, n: int) -> Tuple[int, int, int]:
    parts = [p.strip() for p in text.split(",")]
    if len(parts) != 3 or not all(p.isdigit() for p in parts):
        raise ConfigurationError(f"Invalid split '{text}'. Use: train,validation,test")
    sizes = (int(parts[0]), int(parts[1]), int(parts[2]))
    if sum(sizes) != n:
        raise ConfigurationError(f"Split {text} does not add up to --n {n}")
    return sizes


@cli.command("gen-data")
@click.option("--n", "count", type=int, default=260, show_default=True, help="Number of dialogues")
@click.option("--split", default="200,30,30", show_default=True, help="train,validation,test sizes")
@click.option("--seed", type=int, default=0, show_default=True, help="Generator seed")
@click.option("--out", required=True, type=click.Path(), help="Corpus directory to write")
def gen_data_command(count, split, seed, out):
    """Generate a synthetic coreference-dependent corpus"""
    corpus = generate_synthetic(count, seed, _parse_split(split, count))
    written = save_corpus(corpus, out)
    config = ConfigFile.from_configs(ModelConfig(seed=seed), TrainingConfig.from_scratch())
    written.append(config.save(Path(out) / "train.cfg"))
    return CommandResult(artifacts=written, message=f"Wrote {len(corpus)} dialogues {corpus.sizes} to {out}")


@cli.command()
def version():
    """Show version information"""
    return CommandResult(message=f"corefsum {__version__}")


def run(argv: Optional[Sequence[str]] = None) -> CommandResult:
    """Run one CLI invocation and return its result instead of exiting."""
    return cli.main(args=list(argv) if argv is not None else None, standalone_mode=False)


def main():
    """Main entry point"""
    cli()


if __name__ == "__main__":
    main()
