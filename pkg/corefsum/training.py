"""
Training loop for the coreference-aware summarizer.

Teacher-forced cross-entropy, Adam with separate learning rates for the
fusion parameters and the backbone, and checkpoint selection on validation
ROUGE-2 after every epoch.
"""

import logging
import math
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Any, Dict, List, Mapping, Optional, Sequence

import torch
import torch.nn.functional as F

from .checkpoint import ModelCheckpoint
from .corpus import Corpus, Example
from .dialogue import PAD_ID, Vocabulary, build_vocabulary, flatten_dialogue
from .evaluation import corpus_scores
from .exceptions import ConfigurationError, NumericError
from .model import Batch, CorefSummarizer, ModelConfig, prepare_batch
from .numerics import RngState, adam_step, build_adam
from .summarizer import DEFAULT_SUMMARY_LENGTH, Summarizer


logger = logging.getLogger(__name__)

SELECTION_METRICS = ("rouge1", "rouge2", "rougeL")


@dataclass
class TrainingConfig:
    """Optimization settings; defaults follow the fine-tuning recipe."""

    epochs: int = 20
    fusion_lr: float = 1e-3
    backbone_lr: float = 2e-5
    batch_size: int = 8
    selection_metric: str = "rouge2"
    max_steps: Optional[int] = None
    max_summary_length: int = DEFAULT_SUMMARY_LENGTH
    min_count: int = 1

    @classmethod
    def from_scratch(cls, **overrides: Any) -> "TrainingConfig":
        """Preset for a randomly initialized backbone, which needs a larger rate."""
        return replace(cls(backbone_lr=1e-3), **overrides)

    def validate(self) -> Dict[str, str]:
        errors: Dict[str, str] = {}
        if self.epochs < 1:
            errors["epochs"] = "epochs must be >= 1"
        for name in ("fusion_lr", "backbone_lr"):
            value = getattr(self, name)
            if not (isinstance(value, (int, float)) and value > 0 and math.isfinite(value)):
                errors[name] = f"{name} must be a positive number"
        if self.batch_size < 1:
            errors["batch_size"] = "batch_size must be >= 1"
        if self.selection_metric not in SELECTION_METRICS:
            errors["selection_metric"] = f"selection_metric must be one of {', '.join(SELECTION_METRICS)}"
        if self.max_steps is not None and self.max_steps < 1:
            errors["max_steps"] = "max_steps must be >= 1"
        if self.max_summary_length < 1:
            errors["max_summary_length"] = "max_summary_length must be >= 1"
        if self.min_count < 1:
            errors["min_count"] = "min_count must be >= 1"
        return errors

    def check(self) -> None:
        errors = self.validate()
        if errors:
            details = "; ".join(f"{k}: {v}" for k, v in sorted(errors.items()))
            raise ConfigurationError(f"Invalid training config: {details}")

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, record: Mapping[str, Any]) -> "TrainingConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(record) - known
        if unknown:
            raise ConfigurationError(f"Unknown training config keys: {sorted(unknown)}")
        return cls(**record)


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    validation: Optional[float]
    fusion_lambda: Optional[float]
    improved: bool

    def to_dict(self) -> Dict[str, Any]:
        return {
            "epoch": self.epoch,
            "loss": self.loss,
            "validation": self.validation,
            "lambda": self.fusion_lambda,
            "improved": self.improved,
        }


@dataclass
class TrainingResult:
    checkpoint: ModelCheckpoint
    history: List[EpochRecord] = field(default_factory=list)
    steps: int = 0
    final_loss: float = float("nan")

    @property
    def best_epoch(self) -> Optional[int]:
        best = [r.epoch for r in self.history if r.improved]
        return best[-1] if best else None


def corpus_vocabulary(examples: Sequence[Example], min_count: int = 1) -> Vocabulary:
    """Vocabulary over flattened dialogues and summaries of the training split."""
    sequences: List[Sequence[str]] = []
    for example in examples:
        sequences.append(flatten_dialogue(example.dialogue).tokens)
        sequences.append(example.summary_tokens)
    return build_vocabulary(sequences, min_count)


def make_batch(
    examples: Sequence[Example], vocabulary: Vocabulary, max_length: int, variant: Optional[str] = None
) -> Batch:
    return prepare_batch(
        [flatten_dialogue(e.dialogue).tokens for e in examples],
        [e.annotation for e in examples],
        vocabulary,
        max_length,
        summaries=[e.summary_tokens for e in examples],
        variant=variant,
    )


def batch_loss(model: CorefSummarizer, batch: Batch) -> torch.Tensor:
    """Mean token cross-entropy over non-padding target positions."""
    logits = model(batch)
    return F.cross_entropy(
        logits.reshape(-1, logits.shape[-1]),
        batch.target_out.reshape(-1),  # type: ignore[union-attr]
        ignore_index=PAD_ID,
    )


def validation_score(
    model: CorefSummarizer,
    vocabulary: Vocabulary,
    examples: Sequence[Example],
    metric: str,
    max_summary_length: int,
    batch_size: int,
) -> float:
    summarizer = Summarizer(model, vocabulary, max_summary_length)
    hypotheses = summarizer.summarize_many(
        [(e.dialogue, e.annotation) for e in examples], batch_size
    )
    scores = corpus_scores([(h, e.summary) for h, e in zip(hypotheses, examples)])
    return scores[metric].f


def train(
    corpus: Corpus,
    model_config: ModelConfig,
    training_config: Optional[TrainingConfig] = None,
) -> TrainingResult:
    """Train a summarizer and keep the best checkpoint by validation score.

    Without a validation split the last epoch is kept.

    Args:
        corpus: Examples; only ``train`` and ``validation`` are used
        model_config: Architecture and variant
        training_config: Optimization settings (defaults when omitted)

    Returns:
        TrainingResult with the selected checkpoint and per-epoch history

    Raises:
        ConfigurationError: On an empty training split or invalid settings
        NumericError: If the loss becomes non-finite
    """
    tc = training_config or TrainingConfig()
    tc.check()
    model_config.check()
    if not corpus.train:
        raise ConfigurationError("Training split is empty")

    vocabulary = corpus_vocabulary(corpus.train, tc.min_count)
    model = CorefSummarizer(model_config, len(vocabulary))
    optimizer = build_adam(
        {
            "fusion": (model.fusion_parameters(), tc.fusion_lr),
            "backbone": (model.backbone_parameters(), tc.backbone_lr),
        }
    )
    order_rng = RngState(model_config.seed).fork(3)
    train_examples = list(corpus.train)

    logger.info(
        f"Training {model_config.variant} on {len(train_examples)} dialogues "
        f"(vocabulary {len(vocabulary)}, {tc.epochs} epochs, batch {tc.batch_size})"
    )

    result = TrainingResult(checkpoint=ModelCheckpoint.from_model(model, vocabulary))
    best: Optional[float] = None
    step = 0
    for epoch in range(1, tc.epochs + 1):
        model.train()
        order = order_rng.randperm(len(train_examples))
        losses: List[float] = []
        for start in range(0, len(order), tc.batch_size):
            chunk = [train_examples[i] for i in order[start : start + tc.batch_size]]
            batch = make_batch(chunk, vocabulary, model_config.max_length, model_config.variant)
            loss = batch_loss(model, batch)
            if not torch.isfinite(loss):
                raise NumericError(
                    f"Non-finite loss {loss.item()} at epoch {epoch}, step {step + 1} "
                    f"(dialogues {', '.join(e.id for e in chunk)})"
                )
            optimizer.zero_grad()
            loss.backward()
            adam_step(optimizer)
            model.clamp_fusion_()
            step += 1
            losses.append(loss.item())
            if tc.max_steps is not None and step >= tc.max_steps:
                break

        score: Optional[float] = None
        if corpus.validation:
            score = validation_score(
                model, vocabulary, corpus.validation, tc.selection_metric,
                tc.max_summary_length, tc.batch_size,
            )
        improved = score is None or best is None or score > best
        weight = model.fusion_weight
        record = EpochRecord(
            epoch=epoch,
            loss=math.fsum(losses) / len(losses),
            validation=score,
            fusion_lambda=float(weight) if weight is not None else None,
            improved=improved,
        )
        result.history.append(record)
        result.final_loss = losses[-1]
        if improved:
            if score is not None:
                best = score
            result.checkpoint = ModelCheckpoint.from_model(model, vocabulary)

        shown = f"{score:.4f}" if score is not None else "n/a"
        logger.info(
            f"Epoch {epoch}: loss {record.loss:.4f}, validation {tc.selection_metric} {shown}, "
            f"lambda {record.fusion_lambda}, {'saved' if improved else 'kept previous'}"
        )
        if tc.max_steps is not None and step >= tc.max_steps:
            logger.info(f"Stopping after {step} steps")
            break

    result.steps = step
    result.checkpoint.training = {
        "training_config": tc.to_dict(),
        "best_epoch": result.best_epoch,
        "history": [r.to_dict() for r in result.history],
    }
    return result
