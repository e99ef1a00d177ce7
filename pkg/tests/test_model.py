"""
Tests for the encoder-decoder summarizer and its variants.
"""

from dataclasses import replace

import pytest
import torch

from corefsum.annotation import CorefAnnotation
from corefsum.dialogue import BOS_ID, EOS_ID, PAD_ID, Vocabulary, build_vocabulary
from corefsum.exceptions import ConfigurationError, CorefAnnotationError, DialogueError
from corefsum.model import VARIANTS, CorefSummarizer, ModelConfig, prepare_batch
from corefsum.numerics import check_gradients
from corefsum.structures import batch_structures
from corefsum.training import batch_loss

from .conftest import single, spans


SOURCES = [["A", ":", "a", "b", "a"], ["B", ":", "c"]]
SUMMARIES = [["a", "b"], ["c"]]


def annotations():
    return [CorefAnnotation("x", (single(2, 4),)), CorefAnnotation.empty("y")]


def vocabulary():
    return build_vocabulary(SOURCES + SUMMARIES)


# "my" opens Paul's chain and "my sister" opens another: both start at 2
NESTED_SOURCE = ["Paul", ":", "my", "sister", "called", "me", "Amanda", ":", "did", "she", "call", "you"]


def nested_annotation():
    return CorefAnnotation("nested", (single(0, 2, 5, 11), spans((2, 3), (9, 9))))


def variant_config(config, variant):
    heads = ((0, 1), (1, 0)) if variant == "headrep" else ()
    return replace(config, variant=variant, heads=heads)


def encode(model, batch):
    return model.encode(batch.source, batch.source_mask, batch.structures)


class TestModelConfig:
    """Test cases for ModelConfig."""

    def test_defaults_are_valid(self):
        """The default config validates."""
        assert ModelConfig().validate() == {}

    @pytest.mark.parametrize(
        "overrides,key",
        [
            ({"d_model": 10, "num_heads": 4}, "num_heads"),
            ({"variant": "lstm"}, "variant"),
            ({"variant": "headrep"}, "heads"),
            ({"heads": ((0, 0),)}, "heads"),
            ({"variant": "headrep", "heads": ((5, 0),)}, "heads"),
            ({"lambda_init": 1.2}, "lambda_init"),
            ({"dropout": 1.0}, "dropout"),
            ({"encoder_layers": 0}, "encoder_layers"),
        ],
    )
    def test_invalid(self, overrides, key):
        """Invalid settings are reported per field."""
        errors = ModelConfig(**overrides).validate()

        assert key in errors
        with pytest.raises(ConfigurationError):
            ModelConfig(**overrides).check()

    def test_dict_round_trip(self):
        """to_dict and from_dict are inverses, heads included."""
        config = ModelConfig(variant="headrep", heads=((0, 1), (1, 2)), seed=7)

        assert ModelConfig.from_dict(config.to_dict()) == config

    def test_unknown_key(self):
        """Unknown keys are rejected."""
        with pytest.raises(ConfigurationError):
            ModelConfig.from_dict({"depth": 3})


class TestPrepareBatch:
    """Test cases for prepare_batch."""

    def test_padding_and_targets(self):
        """Sources are padded; targets are shifted around BOS and EOS."""
        vocab = vocabulary()

        batch = prepare_batch(SOURCES, annotations(), vocab, 16, summaries=SUMMARIES)

        assert batch.size == 2
        assert batch.source.shape == (2, 5)
        assert batch.source_mask.tolist() == [[True] * 5, [True] * 3 + [False] * 2]
        a, b, c = vocab.encode(["a", "b", "c"])
        assert batch.target_in.tolist() == [[BOS_ID, a, b], [BOS_ID, c, PAD_ID]]
        assert batch.target_out.tolist() == [[a, b, EOS_ID], [c, EOS_ID, PAD_ID]]
        assert batch.structures.covered[0].tolist() == [False, False, True, False, True]

    def test_overlong_dialogue(self):
        """Dialogues longer than the maximum are rejected."""
        with pytest.raises(DialogueError, match="max length"):
            prepare_batch(SOURCES, annotations(), vocabulary(), 4)

    def test_overlong_summary(self):
        """Summaries longer than the maximum are rejected."""
        with pytest.raises(DialogueError):
            prepare_batch(SOURCES, annotations(), vocabulary(), 5, summaries=[["a"] * 6, ["c"]])

    def test_variant_selects_structures(self):
        """Each variant gets only the structures it reads."""
        vocab = vocabulary()

        base = prepare_batch(SOURCES, annotations(), vocab, 16, variant="base")
        gnn = prepare_batch(SOURCES, annotations(), vocab, 16, variant="gnn")
        attn = prepare_batch(SOURCES, annotations(), vocab, 16, variant="attn")

        identity = torch.eye(5, dtype=torch.float64).repeat(2, 1, 1)
        assert not base.structures.adjacency.any()
        assert torch.equal(base.structures.attention, identity)
        assert not base.structures.covered.any()
        assert gnn.structures.adjacency[0, 2, 4] == 1.0
        assert torch.equal(gnn.structures.attention, identity)
        assert not attn.structures.adjacency.any()
        assert attn.structures.covered[0].tolist() == [False, False, True, False, True]

    @pytest.mark.parametrize("variant", ["base", "gnn"])
    def test_nested_mentions_encode_without_attention(self, tiny_config, variant):
        """Clusters sharing a first token are fine for variants that never build A^c."""
        vocab = build_vocabulary([NESTED_SOURCE])
        model = CorefSummarizer(variant_config(tiny_config, variant), len(vocab)).eval()

        batch = prepare_batch([NESTED_SOURCE], [nested_annotation()], vocab, 16, variant=variant)
        encoded = encode(model, batch)

        assert encoded.hidden.shape == (1, len(NESTED_SOURCE), tiny_config.d_model)
        if variant == "gnn":
            assert batch.structures.adjacency[0, 2, 5] == 1.0
            assert batch.structures.adjacency[0, 2, 9] == 1.0

    @pytest.mark.parametrize("variant", ["attn", "headrep", None])
    def test_nested_mentions_rejected_with_attention(self, variant):
        """Variants reading A^c reject clusters that share a first token."""
        vocab = build_vocabulary([NESTED_SOURCE])

        with pytest.raises(CorefAnnotationError, match="overlapping clusters"):
            prepare_batch([NESTED_SOURCE], [nested_annotation()], vocab, 16, variant=variant)

    def test_out_of_range_span_rejected_for_base(self):
        """Span bounds are checked even when no structure is built."""
        annotation = CorefAnnotation("x", (single(2, 9),))

        with pytest.raises(CorefAnnotationError, match="out of range"):
            prepare_batch(SOURCES[:1], [annotation], vocabulary(), 16, variant="base")


class TestVariants:
    """Test cases for variant construction and collapse identities."""

    def test_shared_backbone(self, tiny_config):
        """All variants start from the base backbone for one seed."""
        base = CorefSummarizer(tiny_config, 10).state_dict()

        for variant in VARIANTS[1:]:
            model = CorefSummarizer(variant_config(tiny_config, variant), 10)
            for name, tensor in model.state_dict().items():
                if not name.startswith("fusion."):
                    assert torch.equal(tensor, base[name]), name

    def test_parameter_groups(self, tiny_config):
        """Fusion parameters are separate from the backbone."""
        gnn = CorefSummarizer(variant_config(tiny_config, "gnn"), 10)
        attn = CorefSummarizer(variant_config(tiny_config, "attn"), 10)
        base = CorefSummarizer(tiny_config, 10)

        assert len(attn.fusion_parameters()) == 1
        assert len(gnn.fusion_parameters()) > 1
        assert base.fusion_parameters() == []
        assert len(gnn.backbone_parameters()) == len(list(base.parameters()))
        assert float(attn.fusion_weight) == pytest.approx(0.7)

    def test_attn_without_clusters_equals_base(self, tiny_config):
        """Coreference-guided attention over no clusters is the identity."""
        vocab = vocabulary()
        batch = prepare_batch(
            SOURCES, [CorefAnnotation.empty("x"), CorefAnnotation.empty("y")], vocab, 16
        )
        base = CorefSummarizer(tiny_config, len(vocab)).eval()
        attn = CorefSummarizer(variant_config(tiny_config, "attn"), len(vocab)).eval()

        assert torch.equal(encode(attn, batch).hidden, encode(base, batch).hidden)

    def test_gnn_lambda_one_equals_base(self, tiny_config):
        """Graph encoding with lambda=1 keeps the encoder output."""
        vocab = vocabulary()
        batch = prepare_batch(SOURCES, annotations(), vocab, 16)
        base = CorefSummarizer(tiny_config, len(vocab)).eval()
        gnn_config = replace(variant_config(tiny_config, "gnn"), lambda_init=1.0)
        gnn = CorefSummarizer(gnn_config, len(vocab)).eval()

        assert torch.equal(encode(gnn, batch).hidden, encode(base, batch).hidden)

    def test_headrep_single_token_equals_base(self, tiny_config):
        """On a one-token input every head already attends with weight one."""
        source = torch.tensor([[4]])
        mask = torch.tensor([[True]])
        structures = batch_structures([CorefAnnotation.empty("x")], [1], 1)
        base = CorefSummarizer(tiny_config, 6).eval()
        headrep = CorefSummarizer(variant_config(tiny_config, "headrep"), 6).eval()

        assert torch.equal(
            headrep.encode(source, mask, structures).hidden,
            base.encode(source, mask, structures).hidden,
        )

    def test_headrep_maps_are_coref_attention(self, tiny_config):
        """Replaced heads expose A^c as their attention map."""
        vocab = vocabulary()
        batch = prepare_batch(SOURCES, annotations(), vocab, 16)
        model = CorefSummarizer(variant_config(tiny_config, "headrep"), len(vocab)).eval()

        maps = encode(model, batch).attention_maps

        assert torch.equal(maps[0][:, 1], batch.structures.attention)
        assert torch.equal(maps[1][:, 0], batch.structures.attention)

    def test_overlong_input(self, tiny_config):
        """encode rejects inputs past the position table."""
        model = CorefSummarizer(replace(tiny_config, max_length=4), 6)
        source = torch.full((1, 5), 4)
        structures = batch_structures([CorefAnnotation.empty("x")], [5], 5)

        with pytest.raises(DialogueError):
            model.encode(source, torch.ones(1, 5, dtype=torch.bool), structures)


class TestGradients:
    """End-to-end gradient checks on the training loss."""

    @pytest.mark.parametrize("variant", VARIANTS)
    def test_loss_gradients(self, tiny_config, variant):
        """Autograd matches finite differences through encoder, fusion and decoder."""
        vocab = vocabulary()
        batch = prepare_batch(SOURCES, annotations(), vocab, 16, summaries=SUMMARIES)
        model = CorefSummarizer(variant_config(tiny_config, variant), len(vocab))
        named = dict(model.named_parameters())
        params = [
            named["embedding"],
            named["encoder.0.self_attn.value.weight"],
            named["encoder.1.ffn.inner.bias"],
            named["decoder.1.cross_attn.query.weight"],
            named["generator.bias"],
        ] + model.fusion_parameters()[:3]

        report = check_gradients(lambda: batch_loss(model, batch), params)

        assert report.passed, (variant, report.max_relative_error, report.worst)


class TestGreedyDecoding:
    """Test cases for decode_greedy with scripted next-token logits."""

    @pytest.fixture
    def model(self, tiny_config):
        return CorefSummarizer(replace(tiny_config, max_length=10), 8).eval()

    @pytest.fixture
    def encoded(self, model):
        batch = prepare_batch(
            [["a", "b"], ["c", "d"]],
            [CorefAnnotation.empty("x"), CorefAnnotation.empty("y")],
            Vocabulary(["a", "b", "c", "d"]),
            10,
        )
        return encode(model, batch)

    @staticmethod
    def scripted(*scripts):
        def next_logits(encoded, prefix):
            step = prefix.shape[1] - 1
            logits = torch.zeros(len(scripts), 8, dtype=torch.float64)
            for row, script in enumerate(scripts):
                logits[row, script[min(step, len(script) - 1)]] = 1.0
            return logits

        return next_logits

    def test_stops_at_eos(self, model, encoded, mocker):
        """Decoding follows the argmax and ends at EOS per row."""
        mocker.patch.object(
            model, "next_token_logits", side_effect=self.scripted([EOS_ID], [5, 6, EOS_ID])
        )

        sequences = model.decode_greedy(encoded, 20)

        assert sequences == [[BOS_ID, EOS_ID], [BOS_ID, 5, 6, EOS_ID]]
        assert model.next_token_logits.call_count == 3

    def test_max_len(self, model, encoded, mocker):
        """Without EOS, decoding stops after max_len tokens."""
        mocker.patch.object(model, "next_token_logits", side_effect=self.scripted([5], [6]))

        sequences = model.decode_greedy(encoded, 3)

        assert sequences == [[BOS_ID, 5, 5, 5], [BOS_ID, 6, 6, 6]]

    def test_capped_by_position_table(self, model, encoded, mocker):
        """max_len never exceeds the model's maximum length."""
        mocker.patch.object(model, "next_token_logits", side_effect=self.scripted([5], [6]))

        sequences = model.decode_greedy(encoded, 1000)

        assert len(sequences[0]) == 11
        assert model.next_token_logits.call_count == 10

    def test_pad_and_bos_never_chosen(self, model, encoded, mocker):
        """PAD and BOS lose the argmax even when their logits are largest."""

        def next_logits(encoded, prefix):
            logits = torch.zeros(2, 8, dtype=torch.float64)
            logits[:, PAD_ID] = 9.0
            logits[:, BOS_ID] = 8.0
            logits[0, EOS_ID] = 1.0
            logits[1, 5 if prefix.shape[1] < 3 else EOS_ID] = 1.0
            return logits

        mocker.patch.object(model, "next_token_logits", side_effect=next_logits)

        sequences = model.decode_greedy(encoded, 20)

        assert sequences == [[BOS_ID, EOS_ID], [BOS_ID, 5, 5, EOS_ID]]

    def test_real_decoding_is_deterministic(self, model, encoded):
        """Two greedy decodes of the same input agree."""
        first = model.decode_greedy(encoded, 6)

        assert model.decode_greedy(encoded, 6) == first
        assert all(seq[0] == BOS_ID and len(seq) <= 7 for seq in first)
