"""
Tests for inference: summaries and head probing from checkpoints.
"""

from dataclasses import replace

import pytest

from corefsum.annotation import CorefAnnotation
from corefsum.dialogue import UNK_ID, Dialogue, Turn, build_vocabulary, flatten_dialogue
from corefsum.exceptions import CheckpointError, CorefAnnotationError, ValidationError
from corefsum.model import CorefSummarizer, ModelConfig
from corefsum.summarizer import Summarizer, summarize
from corefsum.training import train

from .conftest import single, spans


@pytest.fixture
def checkpoint(small_corpus, quick_training):
    """Two-epoch attn model over the small corpus."""
    model_config = ModelConfig(
        d_model=16, encoder_layers=2, decoder_layers=1, num_heads=2, ffn_size=32,
        dropout=0.0, variant="attn",
    )
    return train(small_corpus, model_config, quick_training).checkpoint


@pytest.fixture
def items(small_corpus):
    return [(e.dialogue, e.annotation) for e in small_corpus.train]


class TestSummarize:
    """Test cases for Summarizer decoding."""

    def test_words_come_from_vocabulary(self, checkpoint, items):
        """Every output word is a vocabulary entry."""
        summarizer = Summarizer.from_checkpoint(checkpoint)

        for summary in summarizer.summarize_many(items):
            assert all(word in checkpoint.vocabulary for word in summary.split())

    def test_batching_matches_single(self, checkpoint, items):
        """One-at-a-time batches give the same text as summarize."""
        summarizer = Summarizer.from_checkpoint(checkpoint)

        assert summarizer.summarize_many(items, batch_size=1) == [
            summarizer.summarize(d, a) for d, a in items
        ]

    def test_missing_annotation_means_empty(self, checkpoint, items):
        """No annotation is the same as empty clusters."""
        summarizer = Summarizer.from_checkpoint(checkpoint)
        dialogue, _ = items[0]

        assert summarizer.summarize(dialogue) == summarizer.summarize(
            dialogue, CorefAnnotation.empty(dialogue.id)
        )

    def test_length_cap(self, checkpoint, items):
        """Summaries stop at the configured length."""
        summarizer = Summarizer.from_checkpoint(checkpoint, max_summary_length=3)

        assert all(len(s.split()) <= 3 for s in summarizer.summarize_many(items))

    def test_mismatched_annotation(self, checkpoint, items):
        """Annotations must belong to the dialogue they come with."""
        summarizer = Summarizer.from_checkpoint(checkpoint)
        dialogue, _ = items[0]

        with pytest.raises(CorefAnnotationError):
            summarizer.summarize(dialogue, CorefAnnotation.empty("someone-else"))

    def test_vocabulary_mismatch(self, checkpoint):
        """A different tokenizer vocabulary is rejected."""
        with pytest.raises(CheckpointError, match="hash mismatch"):
            Summarizer.from_checkpoint(checkpoint, build_vocabulary([["only", "words"]]))

    def test_module_level_summarize(self, checkpoint, items):
        """The function form matches the class form."""
        dialogue, annotation = items[0]

        assert summarize(checkpoint, dialogue, annotation) == Summarizer.from_checkpoint(
            checkpoint
        ).summarize(dialogue, annotation)

    def test_model_mode_restored(self, checkpoint, items):
        """Decoding leaves a training-mode model in training mode."""
        summarizer = Summarizer.from_checkpoint(checkpoint)
        summarizer.model.train()

        summarizer.summarize_many(items[:1])

        assert summarizer.model.training

    def test_unknown_words(self, checkpoint):
        """Out-of-vocabulary words and speakers encode as UNK and decoding still ends."""
        summarizer = Summarizer.from_checkpoint(checkpoint, max_summary_length=5)
        dialogue = Dialogue(
            "oov-1", (Turn("Zebulon", "qwxz plorf gnarble"), Turn("Quillon", "vrrmp"))
        )

        batch = summarizer.batch([(dialogue, None)])
        summary = summarizer.summarize(dialogue)

        assert batch.source[0].tolist().count(UNK_ID) == 6
        assert len(summary.split()) <= 5
        assert all(word in checkpoint.vocabulary for word in summary.split())

    @pytest.mark.parametrize("variant", ["base", "gnn"])
    def test_nested_mentions(self, tiny_config, variant):
        """Clusters sharing a first token summarize for variants without A^c."""
        dialogue = Dialogue(
            "nested", (Turn("Paul", "my sister called me"), Turn("Amanda", "did she call you"))
        )
        annotation = CorefAnnotation("nested", (single(0, 2, 5, 11), spans((2, 3), (9, 9))))
        vocab = build_vocabulary([flatten_dialogue(dialogue).tokens])
        model = CorefSummarizer(replace(tiny_config, variant=variant), len(vocab))
        summarizer = Summarizer(model, vocab, max_summary_length=4)

        assert len(summarizer.summarize(dialogue, annotation).split()) <= 4


class TestProbe:
    """Test cases for Summarizer.probe."""

    def test_one_entry_per_layer(self, checkpoint, items):
        """Ratios cover every head and sum to one."""
        report = Summarizer.from_checkpoint(checkpoint).probe(items)

        assert [entry.layer for entry in report] == [0, 1]
        for entry in report:
            assert len(entry.ratios) == 2
            assert sum(entry.ratios) == pytest.approx(1.0)

    def test_workers_do_not_change_report(self, checkpoint, items):
        """Threaded probing gives the same report."""
        summarizer = Summarizer.from_checkpoint(checkpoint)

        assert summarizer.probe(items, workers=3) == summarizer.probe(items)

    def test_dialogues_without_clusters(self, checkpoint, items):
        """Nothing to probe is an error."""
        empty = [(d, CorefAnnotation.empty(d.id)) for d, _ in items]

        with pytest.raises(ValidationError, match="No samples"):
            Summarizer.from_checkpoint(checkpoint).probe(empty)

    def test_base_model_builds_coref_attention(self, tiny_config, items):
        """A model without fusion is still compared against A^c."""
        vocab = build_vocabulary([flatten_dialogue(d).tokens for d, _ in items])
        summarizer = Summarizer(CorefSummarizer(tiny_config, len(vocab)), vocab)

        report = summarizer.probe(items)

        assert [entry.layer for entry in report] == [0, 1]
