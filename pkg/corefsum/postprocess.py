"""
Post-processing of automatic dialogue coreference output.

Document-trained resolvers make three characteristic mistakes on chat
transcripts: speakers are left out of chains, one chain is split into
several clusters, and speakers get clustered with the wrong chain. The
steps here run in a fixed order: ensemble voting, speaker reassignment,
cluster merging, then singleton removal.
"""

import logging
from collections import Counter
from dataclasses import dataclass
from itertools import combinations
from typing import Dict, Hashable, List, Optional, Sequence, Set, Tuple

from .annotation import Cluster, CorefAnnotation
from .dialogue import Dialogue, Span, TokenSequence, flatten_dialogue, speaker_token
from .exceptions import ConfigurationError, CorefAnnotationError


logger = logging.getLogger(__name__)

DEFAULT_MIN_VOTES = 2


class UnionFind:
    """Disjoint sets over hashable items, with path compression and union by rank."""

    def __init__(self) -> None:
        self.parent: Dict[Hashable, Hashable] = {}
        self.rank: Dict[Hashable, int] = {}

    def add(self, item: Hashable) -> None:
        if item not in self.parent:
            self.parent[item] = item
            self.rank[item] = 0

    def find(self, item: Hashable) -> Hashable:
        self.add(item)
        root = item
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[item] != root:
            self.parent[item], item = root, self.parent[item]
        return root

    def union(self, a: Hashable, b: Hashable) -> None:
        root_a, root_b = self.find(a), self.find(b)
        if root_a == root_b:
            return
        if self.rank[root_a] < self.rank[root_b]:
            root_a, root_b = root_b, root_a
        self.parent[root_b] = root_a
        if self.rank[root_a] == self.rank[root_b]:
            self.rank[root_a] += 1

    def groups(self) -> List[List[Hashable]]:
        """Members grouped by root, in insertion order of the first member."""
        grouped: Dict[Hashable, List[Hashable]] = {}
        for item in self.parent:
            grouped.setdefault(self.find(item), []).append(item)
        return list(grouped.values())


@dataclass(frozen=True)
class EnsembleInput:
    """Several resolver outputs for the same dialogue plus a vote threshold."""

    annotations: Tuple[CorefAnnotation, ...]
    min_votes: int = DEFAULT_MIN_VOTES

    def __post_init__(self) -> None:
        object.__setattr__(self, "annotations", tuple(self.annotations))
        if not self.annotations:
            raise CorefAnnotationError("Ensemble needs at least one annotation")
        ids = {a.dialogue_id for a in self.annotations}
        if len(ids) != 1:
            raise CorefAnnotationError(
                f"Ensemble annotations disagree on dialogue_id: {sorted(ids)}"
            )
        if not 1 <= self.min_votes <= len(self.annotations):
            raise ConfigurationError(
                f"min_votes must be in [1, {len(self.annotations)}], got {self.min_votes}"
            )

    @property
    def dialogue_id(self) -> str:
        return self.annotations[0].dialogue_id


def _clusters_from_groups(groups: Sequence[Sequence[Span]]) -> Tuple[Cluster, ...]:
    clusters = [tuple(sorted(set(g))) for g in groups if g]
    return tuple(sorted(clusters, key=lambda c: c[0]))


def ensemble_merge(inputs: EnsembleInput) -> CorefAnnotation:
    """Combine resolver outputs by mention-pair voting.

    A span pair is linked when at least ``min_votes`` annotations put both
    spans in one cluster; output clusters are the connected components of
    the linked pairs. Spans proposed as mentions by enough annotations but
    never linked survive as singletons.
    """
    mention_votes: Counter = Counter()
    pair_votes: Counter = Counter()
    for annotation in inputs.annotations:
        mentions: Set[Span] = set()
        pairs: Set[Tuple[Span, Span]] = set()
        for cluster in annotation.clusters:
            mentions.update(cluster)
            pairs.update(combinations(sorted(set(cluster)), 2))
        mention_votes.update(mentions)
        pair_votes.update(pairs)

    sets = UnionFind()
    for span in sorted(mention_votes):
        if mention_votes[span] >= inputs.min_votes:
            sets.add(span)
    for (a, b), votes in sorted(pair_votes.items()):
        if votes >= inputs.min_votes:
            sets.union(a, b)

    merged = CorefAnnotation(inputs.dialogue_id, _clusters_from_groups(sets.groups()))
    logger.debug(
        f"{inputs.dialogue_id}: ensemble of {len(inputs.annotations)} "
        f"-> {len(merged.clusters)} clusters (min_votes={inputs.min_votes})"
    )
    return merged


def _mention_key(sequence: TokenSequence, span: Span) -> str:
    """Case-folded mention text in speaker-token form."""
    return speaker_token(sequence.text_of(span)).lower()


def assign_speakers(annotation: CorefAnnotation, dialogue: Dialogue) -> CorefAnnotation:
    """Attach uncovered speaker tokens to the cluster that mentions them.

    For every speaker position not covered by a span, the clusters holding a
    mention whose text equals the speaker token (case-insensitive) are
    candidates; the one whose matching mention is nearest wins, ties going to
    the earlier cluster. Positions without a candidate stay unassigned.
    """
    sequence = flatten_dialogue(dialogue)
    annotation.validate(len(sequence))
    clusters: List[List[Span]] = [list(c) for c in annotation.clusters]
    covered = annotation.covered_positions()

    added = 0
    for position in sequence.speaker_positions:
        if position in covered:
            continue
        name = sequence.tokens[position].lower()

        best: Optional[Tuple[int, int]] = None
        for index, cluster in enumerate(clusters):
            distances = [
                abs(span.start - position)
                for span in cluster
                if _mention_key(sequence, span) == name
            ]
            if distances and (best is None or min(distances) < best[0]):
                best = (min(distances), index)

        if best is None:
            continue
        clusters[best[1]].append(Span(position, position))
        covered.add(position)
        added += 1

    if added:
        logger.debug(f"{annotation.dialogue_id}: assigned {added} speaker tokens")
    return CorefAnnotation(annotation.dialogue_id, tuple(tuple(c) for c in clusters))


def merge_clusters(
    annotation: CorefAnnotation, dialogue: Optional[Dialogue] = None
) -> CorefAnnotation:
    """Merge clusters that describe the same chain.

    Clusters are joined transitively when they share an identical span, or
    (given the dialogue) when both contain a single-token mention whose text
    equals one of the dialogue's speakers.
    """
    sets = UnionFind()
    for index in range(len(annotation.clusters)):
        sets.add(index)

    owner: Dict[Span, int] = {}
    for index, cluster in enumerate(annotation.clusters):
        for span in cluster:
            if span in owner:
                sets.union(owner[span], index)
            else:
                owner[span] = index

    if dialogue is not None:
        sequence = flatten_dialogue(dialogue)
        annotation.validate(len(sequence))
        speakers = {tok.lower() for tok in sequence.speaker_token_texts()}
        named: Dict[str, int] = {}
        for index, cluster in enumerate(annotation.clusters):
            for span in cluster:
                if span.start != span.end:
                    continue
                text = sequence.tokens[span.start].lower()
                if text not in speakers:
                    continue
                if text in named:
                    sets.union(named[text], index)
                else:
                    named[text] = index

    groups = [
        [span for index in group for span in annotation.clusters[index]]  # type: ignore[index]
        for group in sets.groups()
    ]
    merged = CorefAnnotation(annotation.dialogue_id, _clusters_from_groups(groups))
    if len(merged.clusters) < len(annotation.clusters):
        logger.debug(
            f"{annotation.dialogue_id}: merged {len(annotation.clusters)} "
            f"-> {len(merged.clusters)} clusters"
        )
    return merged


def postprocess(inputs: EnsembleInput, dialogue: Dialogue) -> CorefAnnotation:
    """Run ensemble voting, speaker reassignment and merging, then drop singletons."""
    if inputs.dialogue_id != dialogue.id:
        raise CorefAnnotationError(
            f"Annotations for {inputs.dialogue_id} paired with dialogue {dialogue.id}"
        )
    n = len(flatten_dialogue(dialogue))
    for annotation in inputs.annotations:
        annotation.validate(n)

    merged = ensemble_merge(inputs)
    with_speakers = assign_speakers(merged, dialogue)
    result = merge_clusters(with_speakers, dialogue).without_singletons().normalized()
    logger.debug(f"{dialogue.id}: post-processed into {len(result.clusters)} clusters")
    return result
