"""
Scripted experiments on synthetic corpora.

``run_trend`` is the desk-scale comparison of variants: for each seed it
generates a corpus, trains every variant from scratch, decodes the test
split and scores it. ``probe_then_select`` is the head-selection workflow:
train ``base``, probe its heads against A^c, then hand the winners to a
``headrep`` model.
"""

import logging
import statistics
from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, Optional, Sequence, Tuple

from .corpus import Corpus
from .evaluation import LengthStats, RougeScore, actor_accuracy, corpus_scores, length_stats
from .exceptions import ConfigurationError
from .fusion import HeadSelection, ProbeReportEntry
from .model import ModelConfig
from .summarizer import Summarizer
from .synthetic import generate_synthetic
from .training import TrainingConfig, TrainingResult, train


logger = logging.getLogger(__name__)

DEFAULT_SEEDS = (0, 1, 2)
DEFAULT_SIZES = (200, 30, 30)
DEFAULT_VARIANTS = ("base", "attn")


@dataclass
class TrendRun:
    seed: int
    variant: str
    scores: Dict[str, RougeScore]
    actor_accuracy: float
    length: LengthStats

    def to_dict(self) -> Dict[str, Any]:
        return {
            "seed": self.seed,
            "variant": self.variant,
            "scores": {k: v.to_dict() for k, v in self.scores.items()},
            "actor_accuracy": self.actor_accuracy,
            "length": self.length.format(),
        }


@dataclass
class TrendReport:
    runs: List[TrendRun] = field(default_factory=list)

    def median(self, variant: str, metric: str = "rouge1") -> float:
        """Median over seeds of a ROUGE F score, or of ``actor_accuracy``."""
        values = [
            run.actor_accuracy if metric == "actor_accuracy" else run.scores[metric].f
            for run in self.runs
            if run.variant == variant
        ]
        if not values:
            raise ConfigurationError(f"No runs for variant {variant}")
        return statistics.median(values)

    @property
    def holds(self) -> Optional[bool]:
        """Whether attn matches or beats base on ROUGE-1 and names actors more often.

        None when either variant was not run.
        """
        variants = {run.variant for run in self.runs}
        if not {"base", "attn"} <= variants:
            return None
        return (
            self.median("attn") >= self.median("base")
            and self.median("base", "actor_accuracy") < self.median("attn", "actor_accuracy")
        )

    def to_dict(self) -> Dict[str, Any]:
        variants = sorted({run.variant for run in self.runs})
        return {
            "runs": [run.to_dict() for run in self.runs],
            "medians": {
                v: {
                    "rouge1": self.median(v),
                    "actor_accuracy": self.median(v, "actor_accuracy"),
                }
                for v in variants
            },
            "holds": self.holds,
        }


def evaluate_split(
    result: TrainingResult, corpus: Corpus, split: str = "test"
) -> Tuple[Dict[str, RougeScore], float, LengthStats]:
    """Decode a split with the selected checkpoint and score it."""
    examples = corpus.split(split)
    if not examples:
        raise ConfigurationError(f"Split {split} is empty")
    summarizer = Summarizer.from_checkpoint(result.checkpoint)
    hypotheses = summarizer.summarize_many([(e.dialogue, e.annotation) for e in examples])
    scores = corpus_scores([(h, e.summary) for h, e in zip(hypotheses, examples)])
    accuracy = actor_accuracy(
        hypotheses, [(e.actor or "", e.distractor or "") for e in examples]
    )
    return scores, accuracy, length_stats(hypotheses)


def run_trend(
    seeds: Sequence[int] = DEFAULT_SEEDS,
    sizes: Sequence[int] = DEFAULT_SIZES,
    variants: Sequence[str] = DEFAULT_VARIANTS,
    model_config: Optional[ModelConfig] = None,
    training_config: Optional[TrainingConfig] = None,
) -> TrendReport:
    """Train and score each variant on one synthetic corpus per seed.

    A trend that does not hold is reported through ``TrendReport.holds``,
    never raised.
    """
    base_config = model_config or ModelConfig()
    tc = training_config or TrainingConfig.from_scratch()
    report = TrendReport()
    for seed in seeds:
        corpus = generate_synthetic(sum(sizes), seed, sizes)
        for variant in variants:
            mc = replace(base_config, variant=variant, seed=seed)
            result = train(corpus, mc, tc)
            scores, accuracy, lengths = evaluate_split(result, corpus)
            report.runs.append(TrendRun(seed, variant, scores, accuracy, lengths))
            logger.info(
                f"seed {seed} {variant}: R1 {scores['rouge1'].f:.4f}, "
                f"actor accuracy {accuracy:.3f}, length {lengths.format()}"
            )
    logger.info(f"Trend holds: {report.holds}")
    return report


def probe_then_select(
    corpus: Corpus,
    model_config: ModelConfig,
    training_config: Optional[TrainingConfig] = None,
    layers: Optional[Sequence[int]] = None,
) -> Tuple[HeadSelection, List[ProbeReportEntry], TrainingResult]:
    """Train base, probe it on validation data and pick one head per layer.

    Returns:
        The selection, the probe report, and the base training result
    """
    base = replace(model_config, variant="base", heads=())
    result = train(corpus, base, training_config)
    items = corpus.validation or corpus.train
    report = Summarizer.from_checkpoint(result.checkpoint).probe(
        [(e.dialogue, e.annotation) for e in items]
    )
    selection = HeadSelection.from_probe_report(report, layers)
    logger.info(f"Probe selected heads {selection}")
    return selection, report, result
