"""
Tests for the coreference graph and coreference attention matrix.
"""

import pytest
import torch

from corefsum.annotation import CorefAnnotation
from corefsum.exceptions import CorefAnnotationError, ShapeError
from corefsum.structures import (
    batch_structures,
    build_coref_attention,
    build_coref_graph,
    structures_record,
)

from .conftest import single, spans


class TestCorefGraph:
    """Test cases for build_coref_graph."""

    def test_adjacent_mentions_linked(self, fig4_annotation):
        """Mentions link to their predecessor in the cluster, not to a hub."""
        graph = build_coref_graph(fig4_annotation, 8)

        assert graph.edges() == [(1, 3), (2, 5), (3, 7)]
        assert graph.adjacency[1, 7] == 0.0
        assert torch.equal(graph.adjacency, graph.adjacency.T)
        assert torch.all(torch.diagonal(graph.adjacency) == 0)

    def test_first_token_of_multi_token_mention(self):
        """Multi-token mentions are represented by their first token."""
        annotation = CorefAnnotation("d", (spans((1, 2), (5, 7)),))

        assert build_coref_graph(annotation, 8).edges() == [(1, 5)]

    def test_degenerate_cluster(self):
        """Two mentions sharing a first token are rejected."""
        annotation = CorefAnnotation("d", (spans((1, 1), (1, 3)),))

        with pytest.raises(CorefAnnotationError, match="degenerate cluster"):
            build_coref_graph(annotation, 5)

    def test_out_of_range(self, fig4_annotation):
        """Spans must lie within n tokens."""
        with pytest.raises(CorefAnnotationError, match="span out of range"):
            build_coref_graph(fig4_annotation, 7)

    def test_no_clusters(self):
        """An empty annotation yields an edgeless graph."""
        graph = build_coref_graph(CorefAnnotation.empty("d"), 4)

        assert graph.edges() == []
        assert graph.to_json() == [[0] * 4 for _ in range(4)]

    def test_order_of_clusters_and_mentions_ignored(self):
        """Reordering clusters or the mentions inside them gives the same graph."""
        clusters = [spans((1, 2), (4, 4), (9, 10)), single(3, 6), single(0, 7, 11, 8)]
        reference = build_coref_graph(CorefAnnotation("d", tuple(clusters)), 12)

        reordered = CorefAnnotation(
            "d", tuple(tuple(reversed(c)) for c in (clusters[2], clusters[0], clusters[1]))
        )

        assert torch.equal(build_coref_graph(reordered, 12).adjacency, reference.adjacency)

    def test_edge_count(self):
        """A cluster of k mentions contributes k - 1 edges."""
        clusters = (single(0, 2, 4, 6), single(1, 9), single(5), spans((3, 3), (7, 8), (10, 11)))

        graph = build_coref_graph(CorefAnnotation("d", clusters), 12)

        assert len(graph.edges()) == 3 + 1 + 0 + 2
        assert graph.adjacency.sum() == 2 * len(graph.edges())


class TestCorefAttention:
    """Test cases for build_coref_attention."""

    def test_fig4_rows(self, fig4_annotation):
        """Covered rows spread 1/|C| over the cluster; others are identity rows."""
        matrix = build_coref_attention(fig4_annotation, 8)

        third, half = 1.0 / 3.0, 0.5
        expected = torch.eye(8, dtype=torch.float64)
        for i in (1, 3, 7):
            expected[i] = 0.0
            expected[i, [1, 3, 7]] = third
        for i in (2, 5):
            expected[i] = 0.0
            expected[i, [2, 5]] = half

        assert torch.equal(matrix.weights, expected)
        assert matrix.covered.tolist() == [False, True, True, True, False, True, False, True]

    def test_row_stochastic(self, fig4_annotation):
        """Every row sums to one."""
        matrix = build_coref_attention(fig4_annotation, 8)

        assert torch.allclose(matrix.weights.sum(dim=1), torch.ones(8, dtype=torch.float64))

    def test_identity_without_clusters(self):
        """No clusters means the identity and nothing covered."""
        matrix = build_coref_attention(CorefAnnotation.empty("d"), 5)

        assert torch.equal(matrix.weights, torch.eye(5, dtype=torch.float64))
        assert not matrix.covered.any()

    def test_symmetric_and_idempotent(self):
        """A^c is symmetric and averaging twice over a cluster changes nothing."""
        annotation = CorefAnnotation(
            "d", (single(0, 4, 9), single(2, 3), spans((5, 6), (7, 8), (10, 10), (11, 11)))
        )
        weights = build_coref_attention(annotation, 12).weights

        assert torch.equal(weights, weights.T)
        assert torch.allclose(weights @ weights, weights, atol=1e-12)

    def test_overlapping_clusters(self):
        """A first token may belong to one cluster only."""
        annotation = CorefAnnotation("d", (single(1, 3), spans((1, 2), (5, 5))))

        with pytest.raises(CorefAnnotationError, match="overlapping clusters"):
            build_coref_attention(annotation, 8)


class TestBatchStructures:
    """Test cases for batch_structures."""

    def test_padding_rows(self, fig4_annotation):
        """Padded positions are isolated, identity and uncovered."""
        batch = batch_structures([fig4_annotation, CorefAnnotation.empty("e")], [8, 3], 10)

        assert batch.adjacency.shape == (2, 10, 10)
        assert batch.length == 10
        assert torch.equal(batch.attention[1], torch.eye(10, dtype=torch.float64))
        assert torch.equal(batch.attention[0, 8:], torch.eye(10, dtype=torch.float64)[8:])
        assert not batch.covered[0, 8:].any()
        assert batch.adjacency[0, 8:].sum() == 0

    def test_sequence_longer_than_padding(self, fig4_annotation):
        """A sequence may not exceed the padded length."""
        with pytest.raises(ShapeError):
            batch_structures([fig4_annotation], [8], 6)

    def test_count_mismatch(self, fig4_annotation):
        """One length per annotation."""
        with pytest.raises(ShapeError):
            batch_structures([fig4_annotation], [8, 8], 8)

    def test_only_requested_structures(self, fig4_annotation):
        """Skipped structures keep their padding values."""
        graph_only = batch_structures([fig4_annotation], [8], 8, attention=False)
        attention_only = batch_structures([fig4_annotation], [8], 8, graph=False)

        assert graph_only.adjacency[0, 1, 3] == 1.0
        assert torch.equal(graph_only.attention[0], torch.eye(8, dtype=torch.float64))
        assert not graph_only.covered.any()
        assert not attention_only.adjacency.any()
        assert attention_only.covered[0].tolist() == [False, True, True, True, False, True, False, True]

    def test_nested_mentions_across_clusters(self):
        """Clusters sharing a first token fail only when A^c is built."""
        annotation = CorefAnnotation("d", (single(0, 2, 5), spans((2, 3), (9, 9))))

        batch = batch_structures([annotation], [10], 10, attention=False)

        assert [tuple(e) for e in torch.nonzero(torch.triu(batch.adjacency[0])).tolist()] == [
            (0, 2), (2, 5), (2, 9),
        ]
        with pytest.raises(CorefAnnotationError, match="overlapping clusters"):
            batch_structures([annotation], [10], 10, graph=False)

    def test_bounds_checked_without_structures(self, fig4_annotation):
        """Out-of-range spans are rejected even when nothing is built."""
        with pytest.raises(CorefAnnotationError, match="span out of range"):
            batch_structures([fig4_annotation], [7], 8, graph=False, attention=False)

    def test_record(self, fig4_annotation):
        """structures_record dumps both structures."""
        record = structures_record(fig4_annotation, 8)

        assert record["dialogue_id"] == "fig4"
        assert record["edges"] == [[1, 3], [2, 5], [3, 7]]
        assert record["attention"][4] == [0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0]
        assert record["adjacency"][1][3] == 1
