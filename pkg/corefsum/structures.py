"""
Coreference graph and coreference attention matrix construction.

Both structures index mentions by their first token. The graph links each
mention to the previous mention of the same cluster (adjacent pairs, not a
star around the first occurrence); the attention matrix spreads each covered
token's weight uniformly over its cluster and leaves every other token on
an identity row.
"""

import logging
from dataclasses import dataclass
from typing import Any, Dict, List, Sequence, Set, Tuple

import torch

from .annotation import CorefAnnotation
from .exceptions import CorefAnnotationError, ShapeError
from .numerics import DTYPE


logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class CorefGraph:
    """Symmetric 0/1 adjacency over token positions."""

    n: int
    adjacency: torch.Tensor

    def edges(self) -> List[Tuple[int, int]]:
        """Undirected edges as sorted (i, j) pairs with i < j."""
        rows, cols = torch.nonzero(torch.triu(self.adjacency, diagonal=1), as_tuple=True)
        return sorted(zip(rows.tolist(), cols.tolist()))

    def to_json(self) -> List[List[int]]:
        return [[int(v) for v in row] for row in self.adjacency.tolist()]


@dataclass(frozen=True)
class CorefAttentionMatrix:
    """Row-stochastic A^c with a boolean mask of cluster-covered rows."""

    n: int
    weights: torch.Tensor
    covered: torch.Tensor

    def to_json(self) -> List[List[float]]:
        return self.weights.tolist()


def _first_token_sets(annotation: CorefAnnotation, n: int) -> List[List[int]]:
    annotation.validate(n)
    return annotation.first_token_clusters()


def build_coref_graph(annotation: CorefAnnotation, n: int) -> CorefGraph:
    """Link the first tokens of adjacent mentions in every cluster.

    Raises:
        CorefAnnotationError: On out-of-range spans, or when two mentions of
            one cluster share a first token ("degenerate cluster")
    """
    adjacency = torch.zeros(n, n, dtype=DTYPE)
    for firsts in _first_token_sets(annotation, n):
        if len(set(firsts)) != len(firsts):
            raise CorefAnnotationError(
                f"degenerate cluster in {annotation.dialogue_id}: "
                f"mentions share a first token {sorted(firsts)}"
            )
        ordered = sorted(firsts)
        for previous, current in zip(ordered, ordered[1:]):
            adjacency[previous, current] = 1.0
            adjacency[current, previous] = 1.0
    return CorefGraph(n=n, adjacency=adjacency)


def build_coref_attention(annotation: CorefAnnotation, n: int) -> CorefAttentionMatrix:
    """Build A^c: uniform 1/|C| weight within each cluster, identity elsewhere.

    Raises:
        CorefAnnotationError: On out-of-range spans or clusters whose first
            tokens overlap ("overlapping clusters")
    """
    weights = torch.eye(n, dtype=DTYPE)
    covered = torch.zeros(n, dtype=torch.bool)
    seen: Set[int] = set()
    for firsts in _first_token_sets(annotation, n):
        members = sorted(set(firsts))
        if seen.intersection(members):
            raise CorefAnnotationError(
                f"overlapping clusters in {annotation.dialogue_id}: "
                f"positions {sorted(seen.intersection(members))} appear twice"
            )
        seen.update(members)
        index = torch.tensor(members, dtype=torch.long)
        weights[index] = 0.0
        weights[index.unsqueeze(1), index.unsqueeze(0)] = 1.0 / len(members)
        covered[index] = True
    return CorefAttentionMatrix(n=n, weights=weights, covered=covered)


@dataclass(frozen=True)
class CorefBatch:
    """Per-sample structures padded to a common length L."""

    adjacency: torch.Tensor  # (B, L, L)
    attention: torch.Tensor  # (B, L, L)
    covered: torch.Tensor  # (B, L) bool

    @property
    def length(self) -> int:
        return int(self.adjacency.shape[-1])


def batch_structures(
    annotations: Sequence[CorefAnnotation],
    lengths: Sequence[int],
    pad_to: int,
    graph: bool = True,
    attention: bool = True,
) -> CorefBatch:
    """Stack graphs and attention matrices for a padded batch.

    Padding positions are isolated graph nodes with identity attention rows
    and are never covered. A structure that is not requested keeps those
    padding values at every position and never rejects an annotation.

    Args:
        annotations: One annotation per sequence
        lengths: Real token count per sequence
        pad_to: Padded length L
        graph: Build the coreference graph
        attention: Build A^c and its covered mask
    """
    if len(annotations) != len(lengths):
        raise ShapeError(f"{len(annotations)} annotations for {len(lengths)} sequences")
    batch = len(annotations)
    adjacency = torch.zeros(batch, pad_to, pad_to, dtype=DTYPE)
    weights = torch.eye(pad_to, dtype=DTYPE).repeat(batch, 1, 1)
    covered = torch.zeros(batch, pad_to, dtype=torch.bool)
    for b, (annotation, n) in enumerate(zip(annotations, lengths)):
        if n > pad_to:
            raise ShapeError(f"Sequence of {n} tokens exceeds padded length {pad_to}")
        annotation.validate(n)
        if graph:
            adjacency[b, :n, :n] = build_coref_graph(annotation, n).adjacency
        if attention:
            matrix = build_coref_attention(annotation, n)
            weights[b, :n, :n] = matrix.weights
            covered[b, :n] = matrix.covered
    return CorefBatch(adjacency=adjacency, attention=weights, covered=covered)


def structures_record(annotation: CorefAnnotation, n: int) -> Dict[str, Any]:
    """Debug dump of both structures for one dialogue."""
    graph = build_coref_graph(annotation, n)
    matrix = build_coref_attention(annotation, n)
    return {
        "dialogue_id": annotation.dialogue_id,
        "n": n,
        "edges": [list(e) for e in graph.edges()],
        "adjacency": graph.to_json(),
        "attention": matrix.to_json(),
    }
