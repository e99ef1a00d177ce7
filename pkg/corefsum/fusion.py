"""
Coreference fusion mechanisms for the encoder.

Three ways of injecting coreference into contextual states H:

- graph encoding: stacked CGE layers over the coreference graph, mixed back
  into H with a weight lambda;
- coreference-guided attention: covered tokens are mixed with the mean of
  their cluster (parameter-free apart from lambda);
- head replacement: selected self-attention heads use A^c instead of their
  softmax weights, keeping their value projections.

Head probing ranks heads by the cosine similarity of their attention maps
to A^c.
"""

import logging
import math
from dataclasses import dataclass
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import torch
from torch import nn

from .annotation import CorefAnnotation
from .exceptions import ConfigurationError, ShapeError, ValidationError
from .numerics import DTYPE, Dropout, LayerNorm, Linear, RngState, softmax_rows
from .structures import CorefGraph, build_coref_attention


logger = logging.getLogger(__name__)

DEFAULT_LAMBDA = 0.7
DEFAULT_CGE_DEPTH = 2


class FusionWeight(nn.Module):
    """Scalar lambda in [0, 1] mixing contextual and coreference-aware states."""

    def __init__(self, value: float = DEFAULT_LAMBDA, trainable: bool = True):
        super().__init__()
        if not 0.0 <= value <= 1.0:
            raise ConfigurationError(f"lambda must be in [0, 1], got {value}")
        self.value = nn.Parameter(torch.tensor(value, dtype=DTYPE), requires_grad=trainable)

    @property
    def trainable(self) -> bool:
        return self.value.requires_grad

    def clamp_(self) -> None:
        with torch.no_grad():
            self.value.clamp_(0.0, 1.0)

    def forward(self) -> torch.Tensor:
        return self.value

    def __float__(self) -> float:
        return float(self.value.item())


class CgeLayer(nn.Module):
    """One coreference graph encoding layer.

    u = W1 ReLU(W0 h + b0) + b1
    v = LayerNorm(h + Dropout(u))
    w_i = ReLU(mean_{j in N_i} (W2 v_j) + b2)
    h' = LayerNorm(Dropout(w) + v)

    A node without graph neighbours aggregates over itself.
    """

    def __init__(self, d_model: int, rng: RngState, dropout: float = 0.1):
        super().__init__()
        self.w0 = Linear(d_model, d_model, rng)
        self.w1 = Linear(d_model, d_model, rng)
        self.w2 = Linear(d_model, d_model, rng)
        self.norm_v = LayerNorm(d_model)
        self.norm_out = LayerNorm(d_model)
        self.dropout = Dropout(dropout, rng)

    def forward(self, hidden: torch.Tensor, adjacency: torch.Tensor) -> torch.Tensor:
        if hidden.shape[-2] != adjacency.shape[-1] or adjacency.shape[-1] != adjacency.shape[-2]:
            raise ShapeError(
                f"CGE layer: hidden {tuple(hidden.shape)} vs graph {tuple(adjacency.shape)}"
            )
        u = self.w1(torch.relu(self.w0(hidden)))
        v = self.norm_v(hidden + self.dropout(u))

        degree = adjacency.sum(dim=-1)
        isolated = (degree == 0).to(adjacency.dtype)
        neighborhood = adjacency + torch.diag_embed(isolated)
        neighborhood = neighborhood / (degree + isolated).unsqueeze(-1)
        # rows of `neighborhood` sum to one, so the bias passes through the mean
        w = torch.relu(neighborhood @ self.w2(v))

        return self.norm_out(self.dropout(w) + v)


def cge_forward(
    hidden: torch.Tensor, graph: Union[CorefGraph, torch.Tensor], layer: CgeLayer
) -> torch.Tensor:
    """Apply one CGE layer; dropout follows ``layer.training``."""
    adjacency = graph.adjacency if isinstance(graph, CorefGraph) else graph
    if isinstance(graph, CorefGraph) and hidden.shape[-2] != graph.n:
        raise ShapeError(f"Hidden states have {hidden.shape[-2]} rows, graph has {graph.n}")
    return layer(hidden, adjacency)


class CgeStack(nn.Module):
    """Stacked CGE layers mixed back into the encoder output with lambda."""

    def __init__(
        self,
        d_model: int,
        rng: RngState,
        depth: int = DEFAULT_CGE_DEPTH,
        dropout: float = 0.1,
        fusion: Optional[FusionWeight] = None,
    ):
        super().__init__()
        if depth < 1:
            raise ConfigurationError(f"CGE depth must be >= 1, got {depth}")
        self.layers = nn.ModuleList(CgeLayer(d_model, rng, dropout) for _ in range(depth))
        self.fusion = fusion if fusion is not None else FusionWeight()

    def forward(self, hidden: torch.Tensor, adjacency: torch.Tensor) -> torch.Tensor:
        graph_states = hidden
        for layer in self.layers:
            graph_states = layer(graph_states, adjacency)
        lam = self.fusion()
        return lam * hidden + (1.0 - lam) * graph_states


def cge_stack(
    hidden: torch.Tensor, graph: Union[CorefGraph, torch.Tensor], stack: CgeStack
) -> torch.Tensor:
    """lambda * H + (1 - lambda) * H^G with H^G from the stacked CGE layers."""
    adjacency = graph.adjacency if isinstance(graph, CorefGraph) else graph
    return stack(hidden, adjacency)


def coref_guided_attention(
    hidden: torch.Tensor,
    weights: torch.Tensor,
    covered: torch.Tensor,
    lam: torch.Tensor,
) -> torch.Tensor:
    """Mix covered tokens with their cluster mean; other rows pass through untouched."""
    if weights.shape[-1] != hidden.shape[-2] or covered.shape[-1] != hidden.shape[-2]:
        raise ShapeError(
            f"Attention matrix {tuple(weights.shape)} does not fit hidden {tuple(hidden.shape)}"
        )
    attended = weights @ hidden
    mixed = lam * hidden + (1.0 - lam) * attended
    return torch.where(covered.unsqueeze(-1), mixed, hidden)


def coref_attention_update(
    hidden: torch.Tensor, annotation: CorefAnnotation, fusion: FusionWeight
) -> torch.Tensor:
    """Coreference-guided attention for one dialogue's (n x d) states."""
    matrix = build_coref_attention(annotation, hidden.shape[-2])
    return coref_guided_attention(hidden, matrix.weights, matrix.covered, fusion())


class CorefAttentionLayer(nn.Module):
    def __init__(self, fusion: Optional[FusionWeight] = None):
        super().__init__()
        self.fusion = fusion if fusion is not None else FusionWeight()

    def forward(
        self, hidden: torch.Tensor, weights: torch.Tensor, covered: torch.Tensor
    ) -> torch.Tensor:
        return coref_guided_attention(hidden, weights, covered, self.fusion())


class MultiHeadAttention(nn.Module):
    """Multi-head attention that exposes per-head weights and can swap heads for A^c.

    Head i projects with the i-th d_k-wide column block of the Q/K/V
    matrices, which is the per-head W_i^Q, W_i^K, W_i^V formulation.
    """

    def __init__(self, d_model: int, num_heads: int, rng: RngState):
        super().__init__()
        if d_model % num_heads:
            raise ConfigurationError(
                f"Hidden size {d_model} is not divisible by {num_heads} heads"
            )
        self.d_model = d_model
        self.num_heads = num_heads
        self.d_k = d_model // num_heads
        self.query = Linear(d_model, d_model, rng)
        self.key = Linear(d_model, d_model, rng)
        self.value = Linear(d_model, d_model, rng)
        self.output = Linear(d_model, d_model, rng)

    def _split(self, x: torch.Tensor) -> torch.Tensor:
        batch, length, _ = x.shape
        return x.view(batch, length, self.num_heads, self.d_k).transpose(1, 2)

    def forward(
        self,
        query: torch.Tensor,
        memory: Optional[torch.Tensor] = None,
        mask: Optional[torch.Tensor] = None,
        replace: Optional[Mapping[int, torch.Tensor]] = None,
    ) -> Tuple[torch.Tensor, torch.Tensor]:
        """Attend from ``query`` to ``memory`` (self-attention when omitted).

        Args:
            query: (B, Lq, d) or (Lq, d)
            memory: (B, Lk, d) or (Lk, d); defaults to ``query``
            mask: Boolean, broadcastable to (B, Lq, Lk); False blocks a key
            replace: Head index -> attention weights (Lq, Lk) or (B, Lq, Lk)
                used instead of that head's softmax

        Returns:
            Output (same rank as ``query``) and weights (B, heads, Lq, Lk)
        """
        unbatched = query.dim() == 2
        if unbatched:
            query = query.unsqueeze(0)
            memory = memory.unsqueeze(0) if memory is not None else None
            mask = mask.unsqueeze(0) if mask is not None else None
        memory = query if memory is None else memory

        q = self._split(self.query(query))
        k = self._split(self.key(memory))
        v = self._split(self.value(memory))

        scores = q @ k.transpose(-2, -1) / math.sqrt(self.d_k)
        if mask is not None:
            scores = scores.masked_fill(~mask.unsqueeze(1), float("-inf"))
        weights = softmax_rows(scores)

        if replace:
            weights = self._replace_heads(weights, replace)

        context = (weights @ v).transpose(1, 2).reshape(query.shape[0], -1, self.d_model)
        out = self.output(context)
        return (out.squeeze(0) if unbatched else out), weights

    def _replace_heads(
        self, weights: torch.Tensor, replace: Mapping[int, torch.Tensor]
    ) -> torch.Tensor:
        batch, _, lq, lk = weights.shape
        for head, matrix in replace.items():
            if not 0 <= head < self.num_heads:
                raise ConfigurationError(f"Head {head} out of range for {self.num_heads} heads")
            if tuple(matrix.shape[-2:]) != (lq, lk):
                raise ShapeError(
                    f"Replacement for head {head} is {tuple(matrix.shape)}, expected {lq}x{lk}"
                )
        heads = [
            replace[h].to(weights.dtype).expand(batch, lq, lk) if h in replace else weights[:, h]
            for h in range(self.num_heads)
        ]
        return torch.stack(heads, dim=1)


def mha_forward(
    x: torch.Tensor,
    attention: MultiHeadAttention,
    replace: Optional[Mapping[int, torch.Tensor]] = None,
) -> torch.Tensor:
    """Self-attention output for ``x`` with optional head replacement."""
    out, _ = attention(x, replace=replace)
    return out


def cosine(a: torch.Tensor, b: torch.Tensor) -> float:
    """Cosine similarity of two matrices flattened to vectors."""
    a = a.reshape(-1).to(DTYPE)
    b = b.reshape(-1).to(DTYPE)
    norm_a, norm_b = torch.linalg.vector_norm(a), torch.linalg.vector_norm(b)
    if norm_a == 0 or norm_b == 0:
        raise ValidationError("Cannot take cosine similarity of a zero-norm matrix")
    return float((a @ b) / (norm_a * norm_b))


@dataclass(frozen=True)
class LayerProbe:
    """Cosine of every head in one layer against A^c, and the winning head."""

    layer: int
    cosines: Tuple[float, ...]

    @property
    def selected(self) -> int:
        best = max(self.cosines)
        return self.cosines.index(best)


def probe_heads(
    attention_maps: Union[torch.Tensor, Sequence[Sequence[torch.Tensor]]],
    coref_attention: torch.Tensor,
) -> List[LayerProbe]:
    """Rank heads per layer by cosine similarity to A^c; ties go to the lowest head."""
    probes = []
    target = coref_attention
    n = target.shape[-1]
    for layer, heads in enumerate(attention_maps):
        cosines = []
        for head_map in heads:
            if tuple(head_map.shape) != (n, n):
                raise ShapeError(
                    f"Layer {layer} attention map is {tuple(head_map.shape)}, A^c is {n}x{n}"
                )
            cosines.append(cosine(head_map, target))
        probes.append(LayerProbe(layer=layer, cosines=tuple(cosines)))
    return probes


@dataclass(frozen=True)
class ProbeReportEntry:
    layer: int
    ratios: Tuple[float, ...]

    @property
    def selected(self) -> int:
        best = max(self.ratios)
        return self.ratios.index(best)

    def to_dict(self) -> Dict[str, Any]:
        return {"layer": self.layer, "ratios": list(self.ratios), "selected": self.selected}

    @classmethod
    def from_dict(cls, record: Mapping[str, Any]) -> "ProbeReportEntry":
        try:
            return cls(layer=int(record["layer"]), ratios=tuple(float(r) for r in record["ratios"]))
        except (KeyError, TypeError, ValueError) as e:
            raise ValidationError(f"Malformed probe report entry: {e}")


class ProbeAccumulator:
    """Counts, per layer, how often each head wins the probe."""

    def __init__(self, num_layers: int, num_heads: int):
        self.num_layers = num_layers
        self.num_heads = num_heads
        self.wins = [[0] * num_heads for _ in range(num_layers)]
        self.samples = 0

    def add(self, probes: Iterable[LayerProbe]) -> None:
        for probe in probes:
            self.wins[probe.layer][probe.selected] += 1
        self.samples += 1

    def report(self) -> List[ProbeReportEntry]:
        if not self.samples:
            raise ValidationError("No samples were probed")
        return [
            ProbeReportEntry(layer=layer, ratios=tuple(w / self.samples for w in wins))
            for layer, wins in enumerate(self.wins)
        ]


@dataclass(frozen=True)
class HeadSelection:
    """(layer, head) pairs whose attention weights are replaced by A^c."""

    pairs: Tuple[Tuple[int, int], ...] = ()

    def __post_init__(self) -> None:
        pairs = tuple((int(layer), int(head)) for layer, head in self.pairs)
        if len(set(pairs)) != len(pairs):
            raise ConfigurationError(f"Duplicate heads in selection: {list(pairs)}")
        object.__setattr__(self, "pairs", tuple(sorted(pairs)))

    def __bool__(self) -> bool:
        return bool(self.pairs)

    def validate(self, num_layers: int, num_heads: int) -> None:
        for layer, head in self.pairs:
            if not (0 <= layer < num_layers and 0 <= head < num_heads):
                raise ConfigurationError(
                    f"Head {layer}:{head} outside {num_layers} layers x {num_heads} heads"
                )

    def heads_for(self, layer: int) -> List[int]:
        return [head for at, head in self.pairs if at == layer]

    def to_list(self) -> List[List[int]]:
        return [list(pair) for pair in self.pairs]

    def __str__(self) -> str:
        return ",".join(f"{layer}:{head}" for layer, head in self.pairs)

    @classmethod
    def parse(cls, text: str) -> "HeadSelection":
        """Parse ``"layer:head,layer:head"``."""
        pairs = []
        for item in filter(None, (part.strip() for part in text.split(","))):
            layer, sep, head = item.partition(":")
            if not sep or not layer.strip().isdigit() or not head.strip().isdigit():
                raise ConfigurationError(f"Invalid head '{item}'. Use: layer:head")
            pairs.append((int(layer), int(head)))
        return cls(tuple(pairs))

    @classmethod
    def from_probe_report(
        cls, entries: Sequence[ProbeReportEntry], layers: Optional[Sequence[int]] = None
    ) -> "HeadSelection":
        """Pick each probed layer's most frequent winner (optionally a subset of layers)."""
        wanted = set(layers) if layers is not None else None
        return cls(
            tuple(
                (e.layer, e.selected) for e in entries if wanted is None or e.layer in wanted
            )
        )

    @classmethod
    def random(cls, num_layers: int, num_heads: int, count: int, rng: RngState) -> "HeadSelection":
        """Uniformly random distinct heads, the baseline for probe-based selection."""
        total = num_layers * num_heads
        if not 1 <= count <= total:
            raise ConfigurationError(f"Cannot pick {count} of {total} heads")
        order = rng.randperm(total)[:count]
        return cls(tuple(divmod(index, num_heads) for index in order))
