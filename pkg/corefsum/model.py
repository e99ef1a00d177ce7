"""
Toy encoder-decoder summarizer with optional coreference fusion.

The backbone is a post-norm Transformer (learned positions, ReLU FFN). The
variant decides where coreference enters the encoder:

    base     plain encoder
    gnn      CGE stack on the encoder output
    attn     coreference-guided attention on the encoder output
    headrep  selected self-attention heads replaced by A^c

Backbone weights are drawn before any fusion weights from the same seed, so
every variant starts from the same backbone as ``base``.
"""

import logging
from dataclasses import asdict, dataclass, field, fields
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import torch
from torch import nn

from .annotation import CorefAnnotation
from .dialogue import BOS_ID, EOS_ID, PAD_ID, Vocabulary
from .exceptions import ConfigurationError, DialogueError
from .fusion import (
    DEFAULT_CGE_DEPTH,
    DEFAULT_LAMBDA,
    CgeStack,
    CorefAttentionLayer,
    FusionWeight,
    HeadSelection,
    MultiHeadAttention,
)
from .numerics import DEFAULT_DROPOUT, DTYPE, Dropout, LayerNorm, Linear, RngState, init_uniform_
from .structures import CorefBatch, batch_structures


logger = logging.getLogger(__name__)

VARIANTS = ("base", "gnn", "attn", "headrep")
FUSION_VARIANTS = ("gnn", "attn")


@dataclass
class ModelConfig:
    """Architecture and variant settings of the summarizer."""

    d_model: int = 64
    encoder_layers: int = 2
    decoder_layers: int = 2
    num_heads: int = 4
    ffn_size: int = 128
    max_length: int = 128
    variant: str = "base"
    lambda_init: float = DEFAULT_LAMBDA
    trainable_lambda: bool = True
    cge_depth: int = DEFAULT_CGE_DEPTH
    dropout: float = DEFAULT_DROPOUT
    seed: int = 0
    heads: Tuple[Tuple[int, int], ...] = field(default_factory=tuple)

    def validate(self, match_variant: bool = True) -> Dict[str, str]:
        """Return a mapping of field -> problem (empty when valid).

        Args:
            match_variant: Also require that ``heads`` is set exactly when the
                variant is ``headrep``. Config files skip this because the
                variant may still come from the command line.
        """
        errors: Dict[str, str] = {}
        for name in ("d_model", "encoder_layers", "decoder_layers", "num_heads",
                     "ffn_size", "max_length", "cge_depth"):
            if int(getattr(self, name)) < 1:
                errors[name] = f"{name} must be >= 1"
        if self.num_heads >= 1 and self.d_model % self.num_heads:
            errors["num_heads"] = f"d_model {self.d_model} is not divisible by {self.num_heads}"
        if self.variant not in VARIANTS:
            errors["variant"] = f"variant must be one of {', '.join(VARIANTS)}"
        if not 0.0 <= self.lambda_init <= 1.0:
            errors["lambda_init"] = "lambda_init must be in [0, 1]"
        if not 0.0 <= self.dropout < 1.0:
            errors["dropout"] = "dropout must be in [0, 1)"
        if match_variant and self.variant == "headrep" and not self.heads:
            errors["heads"] = "variant headrep needs a head selection"
        if match_variant and self.variant != "headrep" and self.heads:
            errors["heads"] = f"variant {self.variant} does not replace heads"
        if self.heads and "num_heads" not in errors:
            try:
                self.head_selection.validate(self.encoder_layers, self.num_heads)
            except ConfigurationError as e:
                errors["heads"] = str(e)
        return errors

    def check(self) -> None:
        errors = self.validate()
        if errors:
            details = "; ".join(f"{k}: {v}" for k, v in sorted(errors.items()))
            raise ConfigurationError(f"Invalid model config: {details}")

    @property
    def head_selection(self) -> HeadSelection:
        return HeadSelection(tuple(self.heads))

    def to_dict(self) -> Dict[str, Any]:
        record = asdict(self)
        record["heads"] = [list(pair) for pair in self.heads]
        return record

    @classmethod
    def from_dict(cls, record: Mapping[str, Any]) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(record) - known
        if unknown:
            raise ConfigurationError(f"Unknown model config keys: {sorted(unknown)}")
        values = dict(record)
        if "heads" in values:
            values["heads"] = tuple(tuple(int(x) for x in pair) for pair in values["heads"])
        return cls(**values)


class FeedForward(nn.Module):
    """Position-wise ReLU(x W1 + b1) W2 + b2."""

    def __init__(self, d_model: int, ffn_size: int, rng: RngState):
        super().__init__()
        self.inner = Linear(d_model, ffn_size, rng)
        self.outer = Linear(ffn_size, d_model, rng)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.outer(torch.relu(self.inner(x)))


class EncoderLayer(nn.Module):
    def __init__(self, config: ModelConfig, rng: RngState, dropout_rng: RngState):
        super().__init__()
        self.self_attn = MultiHeadAttention(config.d_model, config.num_heads, rng)
        self.ffn = FeedForward(config.d_model, config.ffn_size, rng)
        self.norm_attn = LayerNorm(config.d_model)
        self.norm_ffn = LayerNorm(config.d_model)
        self.dropout = Dropout(config.dropout, dropout_rng)

    def forward(
        self,
        x: torch.Tensor,
        mask: torch.Tensor,
        replace: Optional[Mapping[int, torch.Tensor]] = None,
    ) -> Tuple[torch.Tensor, torch.Tensor]:
        attended, weights = self.self_attn(x, mask=mask, replace=replace)
        x = self.norm_attn(x + self.dropout(attended))
        x = self.norm_ffn(x + self.dropout(self.ffn(x)))
        return x, weights


class DecoderLayer(nn.Module):
    def __init__(self, config: ModelConfig, rng: RngState, dropout_rng: RngState):
        super().__init__()
        self.self_attn = MultiHeadAttention(config.d_model, config.num_heads, rng)
        self.cross_attn = MultiHeadAttention(config.d_model, config.num_heads, rng)
        self.ffn = FeedForward(config.d_model, config.ffn_size, rng)
        self.norm_self = LayerNorm(config.d_model)
        self.norm_cross = LayerNorm(config.d_model)
        self.norm_ffn = LayerNorm(config.d_model)
        self.dropout = Dropout(config.dropout, dropout_rng)

    def forward(
        self,
        x: torch.Tensor,
        memory: torch.Tensor,
        self_mask: torch.Tensor,
        memory_mask: torch.Tensor,
    ) -> torch.Tensor:
        attended, _ = self.self_attn(x, mask=self_mask)
        x = self.norm_self(x + self.dropout(attended))
        attended, _ = self.cross_attn(x, memory, mask=memory_mask)
        x = self.norm_cross(x + self.dropout(attended))
        return self.norm_ffn(x + self.dropout(self.ffn(x)))


@dataclass
class EncoderOutput:
    hidden: torch.Tensor  # (B, L, d)
    mask: torch.Tensor  # (B, L) True on real tokens
    attention_maps: List[torch.Tensor]  # per layer (B, heads, L, L)


@dataclass
class Batch:
    """Padded model inputs for a group of dialogues."""

    source: torch.Tensor  # (B, L) token ids
    source_mask: torch.Tensor  # (B, L) bool
    structures: CorefBatch
    target_in: Optional[torch.Tensor] = None  # (B, T) starts with BOS
    target_out: Optional[torch.Tensor] = None  # (B, T) ends with EOS

    @property
    def size(self) -> int:
        return int(self.source.shape[0])


def prepare_batch(
    sources: Sequence[Sequence[str]],
    annotations: Sequence[CorefAnnotation],
    vocabulary: Vocabulary,
    max_length: int,
    summaries: Optional[Sequence[Sequence[str]]] = None,
    variant: Optional[str] = None,
    with_attention: bool = False,
) -> Batch:
    """Encode, validate and pad a group of flattened dialogues (and summaries).

    Only the structures ``variant`` reads are built: the graph for ``gnn``,
    A^c for ``attn`` and ``headrep``, neither for ``base``. Without a
    variant both are built.

    Args:
        with_attention: Build A^c whatever the variant

    Raises:
        DialogueError: If a dialogue or summary is longer than ``max_length``
        CorefAnnotationError: If an annotation does not fit a built structure
    """
    lengths = [len(tokens) for tokens in sources]
    for tokens, annotation in zip(sources, annotations):
        if len(tokens) > max_length:
            raise DialogueError(
                f"Dialogue {annotation.dialogue_id} has {len(tokens)} tokens, "
                f"max length is {max_length}"
            )
    width = max(lengths)
    source = torch.full((len(sources), width), PAD_ID, dtype=torch.long)
    for b, tokens in enumerate(sources):
        source[b, : len(tokens)] = torch.tensor(vocabulary.encode(tokens), dtype=torch.long)
    batch = Batch(
        source=source,
        source_mask=torch.arange(width).unsqueeze(0) < torch.tensor(lengths).unsqueeze(1),
        structures=batch_structures(
            annotations,
            lengths,
            width,
            graph=variant in (None, "gnn"),
            attention=with_attention or variant in (None, "attn", "headrep"),
        ),
    )

    if summaries is not None:
        for summary in summaries:
            if len(summary) > max_length:
                raise DialogueError(
                    f"Summary of {len(summary)} tokens exceeds max length {max_length}"
                )
        targets = [[BOS_ID] + vocabulary.encode(s) + [EOS_ID] for s in summaries]
        longest = max(len(t) for t in targets) - 1
        target_in = torch.full((len(targets), longest), PAD_ID, dtype=torch.long)
        target_out = torch.full((len(targets), longest), PAD_ID, dtype=torch.long)
        for b, ids in enumerate(targets):
            target_in[b, : len(ids) - 1] = torch.tensor(ids[:-1], dtype=torch.long)
            target_out[b, : len(ids) - 1] = torch.tensor(ids[1:], dtype=torch.long)
        batch.target_in = target_in
        batch.target_out = target_out
    return batch


class CorefSummarizer(nn.Module):
    """Encoder-decoder summarizer; see the module docstring for variants."""

    def __init__(self, config: ModelConfig, vocab_size: int):
        super().__init__()
        config.check()
        self.config = config
        self.vocab_size = vocab_size

        init_rng = RngState(config.seed)
        fusion_rng = init_rng.fork(1)
        self.dropout_rng = init_rng.fork(2)

        d = config.d_model
        self.embedding = nn.Parameter(torch.empty(vocab_size, d, dtype=DTYPE))
        self.source_positions = nn.Parameter(torch.empty(config.max_length, d, dtype=DTYPE))
        self.target_positions = nn.Parameter(torch.empty(config.max_length + 1, d, dtype=DTYPE))
        for table in (self.embedding, self.source_positions, self.target_positions):
            init_uniform_(table, init_rng)
        self.encoder = nn.ModuleList(
            EncoderLayer(config, init_rng, self.dropout_rng) for _ in range(config.encoder_layers)
        )
        self.decoder = nn.ModuleList(
            DecoderLayer(config, init_rng, self.dropout_rng) for _ in range(config.decoder_layers)
        )
        self.generator = Linear(d, vocab_size, init_rng)
        self.dropout = Dropout(config.dropout, self.dropout_rng)

        self.fusion: Optional[nn.Module] = None
        weight = FusionWeight(config.lambda_init, config.trainable_lambda)
        if config.variant == "gnn":
            self.fusion = CgeStack(d, fusion_rng, config.cge_depth, config.dropout, weight)
        elif config.variant == "attn":
            self.fusion = CorefAttentionLayer(weight)
        self.head_selection = config.head_selection

    @property
    def fusion_weight(self) -> Optional[FusionWeight]:
        if self.fusion is None:
            return None
        return self.fusion.fusion  # type: ignore[return-value]

    def fusion_parameters(self) -> List[nn.Parameter]:
        return list(self.fusion.parameters()) if self.fusion is not None else []

    def backbone_parameters(self) -> List[nn.Parameter]:
        fusion_ids = {id(p) for p in self.fusion_parameters()}
        return [p for p in self.parameters() if id(p) not in fusion_ids]

    def clamp_fusion_(self) -> None:
        if self.fusion_weight is not None:
            self.fusion_weight.clamp_()

    def encode(
        self, source: torch.Tensor, source_mask: torch.Tensor, structures: CorefBatch
    ) -> EncoderOutput:
        """Contextual states for the source, with coreference fused per variant."""
        length = source.shape[1]
        if length > self.config.max_length:
            raise DialogueError(
                f"Input of {length} tokens exceeds max length {self.config.max_length}"
            )
        x = self.dropout(self.embedding[source] + self.source_positions[:length])
        key_mask = source_mask.unsqueeze(1)

        maps = []
        for index, layer in enumerate(self.encoder):
            replace = None
            heads = self.head_selection.heads_for(index) if self.head_selection else []
            if heads:
                replace = {head: structures.attention for head in heads}
            x, weights = layer(x, key_mask, replace)
            maps.append(weights)

        if self.config.variant == "gnn":
            x = self.fusion(x, structures.adjacency)  # type: ignore[misc]
        elif self.config.variant == "attn":
            x = self.fusion(x, structures.attention, structures.covered)  # type: ignore[misc]
        return EncoderOutput(hidden=x, mask=source_mask, attention_maps=maps)

    def decode_logits(self, encoded: EncoderOutput, target_in: torch.Tensor) -> torch.Tensor:
        """Next-token logits (B, T, V) given decoder inputs starting with BOS."""
        length = target_in.shape[1]
        y = self.dropout(self.embedding[target_in] + self.target_positions[:length])
        causal = torch.tril(torch.ones(length, length, dtype=torch.bool))
        self_mask = causal.unsqueeze(0) & (target_in != PAD_ID).unsqueeze(1)
        # BOS is never padding, so every query row keeps at least one key
        self_mask[:, :, 0] = True
        memory_mask = encoded.mask.unsqueeze(1)
        for layer in self.decoder:
            y = layer(y, encoded.hidden, self_mask, memory_mask)
        return self.generator(y)

    def forward(self, batch: Batch) -> torch.Tensor:
        if batch.target_in is None:
            raise ConfigurationError("Training batch has no target summaries")
        encoded = self.encode(batch.source, batch.source_mask, batch.structures)
        return self.decode_logits(encoded, batch.target_in)

    def next_token_logits(self, encoded: EncoderOutput, prefix: torch.Tensor) -> torch.Tensor:
        """Logits (B, V) for the token following ``prefix``."""
        return self.decode_logits(encoded, prefix)[:, -1]

    @torch.no_grad()
    def decode_greedy(self, encoded: EncoderOutput, max_len: int) -> List[List[int]]:
        """Argmax decoding from BOS until EOS or ``max_len`` generated tokens.

        Returns id sequences that start with BOS and end with EOS when one
        was produced.
        """
        batch = encoded.hidden.shape[0]
        max_len = min(max_len, self.config.max_length)
        prefix = torch.full((batch, 1), BOS_ID, dtype=torch.long)
        finished = torch.zeros(batch, dtype=torch.bool)
        for _ in range(max_len):
            logits = self.next_token_logits(encoded, prefix).clone()
            # PAD and BOS are never generated
            logits[:, [PAD_ID, BOS_ID]] = float("-inf")
            chosen = logits.argmax(dim=-1)
            chosen = torch.where(finished, torch.full_like(chosen, PAD_ID), chosen)
            prefix = torch.cat([prefix, chosen.unsqueeze(1)], dim=1)
            finished |= chosen == EOS_ID
            if bool(finished.all()):
                break

        sequences = []
        for row in prefix.tolist():
            ids = [BOS_ID]
            for index in row[1:]:
                if index == PAD_ID:
                    break
                ids.append(index)
                if index == EOS_ID:
                    break
            sequences.append(ids)
        return sequences
