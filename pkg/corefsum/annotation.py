"""
Coreference annotations over flattened dialogues.

Clusters are kept as tuples of ``Span`` sorted by start; the JSON form is
``{"dialogue_id": ..., "clusters": [[[s, e], ...], ...]}`` with inclusive
token indices.
"""

import logging
from dataclasses import dataclass
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Set, Tuple

from .dialogue import Span, TokenSequence, first_token_index
from .exceptions import CorefAnnotationError, DataFormatError, ValidationError


logger = logging.getLogger(__name__)

Cluster = Tuple[Span, ...]


def normalize_cluster(spans: Iterable[Span]) -> Cluster:
    """Deduplicate and sort spans by start index."""
    return tuple(sorted(set(spans)))


@dataclass(frozen=True)
class CorefAnnotation:
    """Coreference clusters of one dialogue."""

    dialogue_id: str
    clusters: Tuple[Cluster, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(
            self, "clusters", tuple(normalize_cluster(c) for c in self.clusters)
        )

    @classmethod
    def empty(cls, dialogue_id: str) -> "CorefAnnotation":
        return cls(dialogue_id, ())

    @classmethod
    def from_dict(cls, record: Mapping[str, Any]) -> "CorefAnnotation":
        try:
            dialogue_id = record["dialogue_id"]
            raw_clusters = record["clusters"]
        except (KeyError, TypeError) as e:
            raise DataFormatError(f"Coref record missing field: {e}")
        if not isinstance(dialogue_id, str) or not isinstance(raw_clusters, list):
            raise DataFormatError("Coref record needs a string dialogue_id and a clusters list")

        clusters = []
        for raw_cluster in raw_clusters:
            try:
                clusters.append([Span(int(s), int(e)) for s, e in raw_cluster])
            except (TypeError, ValueError, ValidationError) as e:
                raise DataFormatError(f"Malformed cluster in {dialogue_id}: {e}")
        return cls(dialogue_id, tuple(tuple(c) for c in clusters))

    def to_dict(self) -> Dict[str, Any]:
        return {
            "dialogue_id": self.dialogue_id,
            "clusters": [[span.as_list() for span in c] for c in self.clusters],
        }

    def normalized(self) -> "CorefAnnotation":
        """Clusters ordered by their earliest span."""
        ordered = sorted((c for c in self.clusters if c), key=lambda c: c[0])
        return CorefAnnotation(self.dialogue_id, tuple(ordered))

    def without_singletons(self) -> "CorefAnnotation":
        return CorefAnnotation(
            self.dialogue_id, tuple(c for c in self.clusters if len(c) >= 2)
        )

    def spans(self) -> Set[Span]:
        return {span for cluster in self.clusters for span in cluster}

    def covered_positions(self) -> Set[int]:
        """Token positions covered by any span."""
        return {
            position
            for span in self.spans()
            for position in range(span.start, span.end + 1)
        }

    @property
    def span_count(self) -> int:
        return sum(len(c) for c in self.clusters)

    def validate(self, n: int) -> None:
        """Check every span lies within ``n`` tokens.

        Raises:
            CorefAnnotationError: If a span is out of range
        """
        for cluster in self.clusters:
            for span in cluster:
                if not span.within(n):
                    raise CorefAnnotationError(
                        f"span out of range in {self.dialogue_id}: "
                        f"({span.start}, {span.end}) for {n} tokens"
                    )

    def first_token_clusters(self) -> List[List[int]]:
        """First-token indices of every cluster, in cluster order."""
        return [[first_token_index(span) for span in c] for c in self.clusters]


def _char_owners(pieces: Sequence[str]) -> Tuple[List[int], List[int]]:
    """Map every non-whitespace character to the index of the piece it came from.

    Returns the owner list and the cumulative character offset of each piece.
    """
    owners: List[int] = []
    offsets: List[int] = []
    for index, piece in enumerate(pieces):
        offsets.append(len(owners))
        owners.extend(index for ch in piece if not ch.isspace())
    offsets.append(len(owners))
    return owners, offsets


def align_resolver_output(
    document: Sequence[str],
    clusters: Sequence[Sequence[Sequence[int]]],
    sequence: TokenSequence,
    dialogue_id: str,
) -> CorefAnnotation:
    """Project a resolver prediction onto the flattened token space.

    The resolver tokenizes the rendered ``Speaker: text`` lines its own way;
    both tokenizations spell the same non-whitespace characters, which is
    what the alignment keys on.

    Args:
        document: Resolver tokens
        clusters: Resolver clusters of inclusive ``[start, end]`` token spans
        sequence: Flattened dialogue the annotation should index into
        dialogue_id: Identifier for the resulting annotation

    Raises:
        CorefAnnotationError: If the two token streams spell different text
    """
    # speaker tokens are underscore-joined on our side only
    ours = list(sequence.tokens)
    for k, position in enumerate(sequence.speaker_positions):
        if k < len(sequence.speaker_names):
            ours[position] = "".join(sequence.speaker_names[k].split())

    our_owners, _ = _char_owners(ours)
    _, their_offsets = _char_owners(document)
    our_text = "".join(ch for piece in ours for ch in piece if not ch.isspace())
    their_text = "".join(ch for piece in document for ch in piece if not ch.isspace())
    if our_text != their_text:
        raise CorefAnnotationError(
            f"Resolver document for {dialogue_id} does not match the dialogue text"
        )

    aligned = []
    for raw_cluster in clusters:
        spans = []
        for start, end in raw_cluster:
            if not 0 <= start <= end < len(document):
                logger.warning(f"{dialogue_id}: resolver span ({start}, {end}) out of range")
                continue
            first_char = their_offsets[start]
            last_char = their_offsets[end + 1] - 1
            if last_char < first_char:
                logger.warning(f"{dialogue_id}: resolver span ({start}, {end}) is blank")
                continue
            spans.append(Span(our_owners[first_char], our_owners[last_char]))
        if spans:
            aligned.append(tuple(spans))

    logger.debug(f"{dialogue_id}: aligned {len(aligned)} resolver clusters")
    return CorefAnnotation(dialogue_id, tuple(aligned)).normalized()


def index_by_dialogue(
    annotations: Iterable[CorefAnnotation], source: Optional[str] = None
) -> Dict[str, CorefAnnotation]:
    """Key annotations by dialogue id, rejecting duplicates."""
    indexed: Dict[str, CorefAnnotation] = {}
    for annotation in annotations:
        if annotation.dialogue_id in indexed:
            where = f" in {source}" if source else ""
            raise CorefAnnotationError(
                f"Duplicate annotation for dialogue {annotation.dialogue_id}{where}"
            )
        indexed[annotation.dialogue_id] = annotation
    return indexed
