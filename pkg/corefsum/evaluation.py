"""
ROUGE scoring and summary length statistics.

ROUGE-n uses clipped n-gram counts; ROUGE-L uses the sentence-level longest
common subsequence. Tokens are lowercased and nothing else (no stemming, no
stopword removal), so scores differ from library implementations that do.
"""

import logging
import math
import statistics
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

from .exceptions import ValidationError


logger = logging.getLogger(__name__)

Tokens = Union[str, Sequence[str]]
METRICS = ("rouge1", "rouge2", "rougeL")


@dataclass(frozen=True)
class RougeScore:
    f: float
    p: float
    r: float

    @classmethod
    def from_pr(cls, p: float, r: float) -> "RougeScore":
        f = 0.0 if p + r == 0 else 2.0 * p * r / (p + r)
        return cls(f=f, p=p, r=r)

    def to_dict(self) -> Dict[str, float]:
        return {"f": self.f, "p": self.p, "r": self.r}


@dataclass(frozen=True)
class LengthStats:
    """Mean and population standard deviation of summary word counts."""

    mean: float
    std: float

    def format(self) -> str:
        return f"{self.mean:.2f} ± {self.std:.2f}"

    def to_dict(self) -> Dict[str, float]:
        return {"mean": self.mean, "std": self.std}


def _tokens(text: Tokens) -> List[str]:
    words = text.split() if isinstance(text, str) else list(text)
    return [w.lower() for w in words]


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def rouge_n(hyp: Tokens, ref: Tokens, n: int) -> RougeScore:
    """ROUGE-n with clipped counts; an empty n-gram side scores 0 on that side.

    Args:
        hyp: Hypothesis text or tokens
        ref: Reference text or tokens
        n: n-gram order, at least 1
    """
    if n < 1:
        raise ValidationError(f"ROUGE n must be >= 1, got {n}")
    hyp_grams = _ngrams(_tokens(hyp), n)
    ref_grams = _ngrams(_tokens(ref), n)
    overlap = sum((hyp_grams & ref_grams).values())
    hyp_total = sum(hyp_grams.values())
    ref_total = sum(ref_grams.values())
    p = overlap / hyp_total if hyp_total else 0.0
    r = overlap / ref_total if ref_total else 0.0
    return RougeScore.from_pr(p, r)


def lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    previous = [0] * (len(b) + 1)
    for x in a:
        current = [0]
        for j, y in enumerate(b, start=1):
            current.append(previous[j - 1] + 1 if x == y else max(previous[j], current[j - 1]))
        previous = current
    return previous[-1]


def rouge_l(hyp: Tokens, ref: Tokens) -> RougeScore:
    hyp_tokens, ref_tokens = _tokens(hyp), _tokens(ref)
    if not hyp_tokens or not ref_tokens:
        return RougeScore(0.0, 0.0, 0.0)
    common = lcs_length(hyp_tokens, ref_tokens)
    return RougeScore.from_pr(common / len(hyp_tokens), common / len(ref_tokens))


def score_pair(hyp: Tokens, ref: Tokens) -> Dict[str, RougeScore]:
    return {"rouge1": rouge_n(hyp, ref, 1), "rouge2": rouge_n(hyp, ref, 2), "rougeL": rouge_l(hyp, ref)}


def _mean(values: Sequence[float]) -> float:
    # fsum is exact, so the mean does not depend on pair order
    return math.fsum(values) / len(values)


def corpus_scores(
    pairs: Sequence[Tuple[Tokens, Tokens]], workers: Optional[int] = None
) -> Dict[str, RougeScore]:
    """Average per-pair F/P/R for ROUGE-1, ROUGE-2 and ROUGE-L.

    Args:
        pairs: (hypothesis, reference) pairs
        workers: Thread count for per-pair scoring (serial when None or 1)

    Raises:
        ValidationError: If ``pairs`` is empty
    """
    if not pairs:
        raise ValidationError("Cannot score an empty set of summaries")

    if workers and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            scored = list(pool.map(lambda pair: score_pair(*pair), pairs))
    else:
        scored = [score_pair(hyp, ref) for hyp, ref in pairs]

    return {
        metric: RougeScore(
            f=_mean([s[metric].f for s in scored]),
            p=_mean([s[metric].p for s in scored]),
            r=_mean([s[metric].r for s in scored]),
        )
        for metric in METRICS
    }


def length_stats(summaries: Sequence[Tokens]) -> LengthStats:
    if not summaries:
        raise ValidationError("Cannot compute length statistics of no summaries")
    counts = [len(_tokens(s)) for s in summaries]
    return LengthStats(mean=statistics.fmean(counts), std=statistics.pstdev(counts))


def actor_accuracy(
    hypotheses: Sequence[str], actors: Sequence[Tuple[str, str]]
) -> float:
    """Fraction of summaries naming the actor and not the distractor.

    Args:
        hypotheses: Generated summaries
        actors: (actor, distractor) name pairs aligned with ``hypotheses``
    """
    if len(hypotheses) != len(actors):
        raise ValidationError(f"{len(hypotheses)} summaries for {len(actors)} actor pairs")
    if not hypotheses:
        raise ValidationError("Cannot compute actor accuracy of no summaries")
    correct = 0
    for hyp, (actor, distractor) in zip(hypotheses, actors):
        words = set(_tokens(hyp))
        if actor.lower() in words and distractor.lower() not in words:
            correct += 1
    return correct / len(hypotheses)


def relative_improvement(base: float, other: float) -> float:
    """(other - base) / base.

    Raises:
        ValidationError: If ``base`` is zero
    """
    if base == 0:
        raise ValidationError("Relative improvement over a zero baseline is undefined")
    return (other - base) / base


def score_report(
    hypotheses: Sequence[str], references: Sequence[str], workers: Optional[int] = None
) -> Dict[str, Any]:
    """JSON-ready report for aligned hypothesis and reference summaries."""
    if len(hypotheses) != len(references):
        raise ValidationError(
            f"{len(hypotheses)} hypotheses but {len(references)} references"
        )
    scores = corpus_scores(list(zip(hypotheses, references)), workers)
    report: Dict[str, Any] = {metric: score.to_dict() for metric, score in scores.items()}
    report["length"] = {
        "hyp": length_stats(hypotheses).to_dict(),
        "ref": length_stats(references).to_dict(),
    }
    report["count"] = len(hypotheses)
    logger.info(
        f"Scored {len(hypotheses)} summaries: R1 {scores['rouge1'].f:.4f}, "
        f"R2 {scores['rouge2'].f:.4f}, RL {scores['rougeL'].f:.4f}"
    )
    return report
