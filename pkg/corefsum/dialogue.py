"""
Dialogue data model, tokenization and vocabulary.

Everything downstream indexes tokens the way ``flatten_dialogue`` lays them
out: each turn becomes ``[speaker_token, ":"]`` followed by the whitespace
split of its text. Multi-word speaker names collapse into one
underscore-joined token so that every turn has exactly one speaker position.
"""

import hashlib
import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import Any, Dict, Iterable, Iterator, List, Mapping, Sequence, Tuple

from .exceptions import ConfigurationError, DataFormatError, DialogueError, ValidationError


logger = logging.getLogger(__name__)

PAD = "<pad>"
BOS = "<s>"
EOS = "</s>"
UNK = "<unk>"
RESERVED_TOKENS = (PAD, BOS, EOS, UNK)
PAD_ID, BOS_ID, EOS_ID, UNK_ID = range(4)

SPEAKER_SEPARATOR = ":"


def speaker_token(name: str) -> str:
    """Render a speaker name as a single token ("Derek McCarthy" -> "Derek_McCarthy")."""
    return "_".join(name.split())


@dataclass(frozen=True)
class Turn:
    """One utterance: who spoke and what they said."""

    speaker: str
    text: str = ""

    def __post_init__(self) -> None:
        if not self.speaker.strip():
            raise DialogueError("Turn speaker must be a non-empty string")
        if "\n" in self.speaker:
            raise DialogueError(f"Turn speaker contains a newline: {self.speaker!r}")

    @property
    def words(self) -> List[str]:
        return self.text.split()

    def line(self) -> str:
        """Render as a ``Speaker: text`` line with normalized whitespace."""
        return " ".join([f"{self.speaker}{SPEAKER_SEPARATOR}"] + self.words)


@dataclass(frozen=True)
class Dialogue:
    """An identified, ordered sequence of turns."""

    id: str
    turns: Tuple[Turn, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "turns", tuple(self.turns))

    @property
    def speakers(self) -> List[str]:
        """Distinct speaker names in order of first appearance."""
        seen: Dict[str, None] = {}
        for turn in self.turns:
            seen.setdefault(turn.speaker, None)
        return list(seen)

    def lines(self) -> List[str]:
        return [turn.line() for turn in self.turns]

    @classmethod
    def from_dict(cls, record: Mapping[str, Any]) -> "Dialogue":
        """Build a dialogue from a ``{"id", "turns": [{"speaker", "text"}]}`` record."""
        try:
            dialogue_id = record["id"]
            raw_turns = record["turns"]
        except (KeyError, TypeError) as e:
            raise DataFormatError(f"Dialogue record missing field: {e}")
        if not isinstance(dialogue_id, str) or not isinstance(raw_turns, list):
            raise DataFormatError("Dialogue record needs a string id and a turns list")

        turns = []
        for raw in raw_turns:
            if not isinstance(raw, Mapping) or "speaker" not in raw:
                raise DataFormatError(f"Malformed turn in dialogue {dialogue_id}: {raw!r}")
            turns.append(Turn(str(raw["speaker"]), str(raw.get("text", ""))))
        return cls(dialogue_id, tuple(turns))

    def to_dict(self) -> Dict[str, Any]:
        return {
            "id": self.id,
            "turns": [{"speaker": t.speaker, "text": t.text} for t in self.turns],
        }


@dataclass(frozen=True)
class Span:
    """Inclusive token span over a flattened dialogue."""

    start: int
    end: int

    def __post_init__(self) -> None:
        if self.start < 0 or self.end < self.start:
            raise ValidationError(f"Invalid span ({self.start}, {self.end})")

    def __lt__(self, other: "Span") -> bool:
        return (self.start, self.end) < (other.start, other.end)

    def within(self, n: int) -> bool:
        return self.end < n

    def as_list(self) -> List[int]:
        return [self.start, self.end]


def first_token_index(span: Span) -> int:
    """Representative position of a mention: its first (word) token."""
    return span.start


@dataclass(frozen=True)
class TokenSequence:
    """Flattened token view of a dialogue.

    ``speaker_names`` keeps the original display names so the flattening
    can be inverted even when names were underscore-joined.
    """

    tokens: Tuple[str, ...]
    turn_offsets: Tuple[int, ...]
    speaker_positions: Tuple[int, ...]
    speaker_names: Tuple[str, ...] = field(default=())

    def __len__(self) -> int:
        return len(self.tokens)

    def __iter__(self) -> Iterator[str]:
        return iter(self.tokens)

    def __getitem__(self, index: int) -> str:
        return self.tokens[index]

    def text_of(self, span: Span) -> str:
        return " ".join(self.tokens[span.start : span.end + 1])

    def speaker_token_texts(self) -> List[str]:
        """Distinct speaker tokens in order of first appearance."""
        seen: Dict[str, None] = {}
        for position in self.speaker_positions:
            seen.setdefault(self.tokens[position], None)
        return list(seen)


def flatten_dialogue(dialogue: Dialogue) -> TokenSequence:
    """Flatten a dialogue into its canonical token sequence.

    Raises:
        DialogueError: If the dialogue has no turns
    """
    if not dialogue.turns:
        raise DialogueError("empty dialogue")

    tokens: List[str] = []
    offsets: List[int] = []
    for turn in dialogue.turns:
        offsets.append(len(tokens))
        tokens.append(speaker_token(turn.speaker))
        tokens.append(SPEAKER_SEPARATOR)
        tokens.extend(turn.words)

    return TokenSequence(
        tokens=tuple(tokens),
        turn_offsets=tuple(offsets),
        speaker_positions=tuple(offsets),
        speaker_names=tuple(turn.speaker for turn in dialogue.turns),
    )


def detokenize(sequence: TokenSequence) -> List[str]:
    """Invert ``flatten_dialogue`` back into ``Speaker: text`` lines."""
    lines = []
    bounds = list(sequence.turn_offsets) + [len(sequence.tokens)]
    for k, (start, stop) in enumerate(zip(bounds, bounds[1:])):
        if k < len(sequence.speaker_names):
            speaker = sequence.speaker_names[k]
        else:
            speaker = sequence.tokens[start]
        words = list(sequence.tokens[start + 2 : stop])
        lines.append(" ".join([f"{speaker}{SPEAKER_SEPARATOR}"] + words))
    return lines


class Vocabulary:
    """Token <-> id mapping with reserved ids PAD=0, BOS=1, EOS=2, UNK=3."""

    def __init__(self, tokens: Sequence[str] = ()):
        """Initialize a vocabulary.

        Args:
            tokens: Non-reserved tokens in id order (first gets id 4)
        """
        self._tokens: List[str] = list(RESERVED_TOKENS)
        self.id_of: Dict[str, int] = {tok: i for i, tok in enumerate(RESERVED_TOKENS)}
        for token in tokens:
            if token in self.id_of:
                raise ValidationError(f"Duplicate vocabulary token: {token!r}")
            self.id_of[token] = len(self._tokens)
            self._tokens.append(token)

    def __len__(self) -> int:
        return len(self._tokens)

    def __contains__(self, token: object) -> bool:
        return token in self.id_of

    @property
    def tokens(self) -> List[str]:
        """Non-reserved tokens in id order."""
        return self._tokens[len(RESERVED_TOKENS) :]

    def token_of(self, index: int) -> str:
        return self._tokens[index]

    def encode(self, tokens: Iterable[str]) -> List[int]:
        return [self.id_of.get(token, UNK_ID) for token in tokens]

    def decode(self, ids: Iterable[int]) -> List[str]:
        """Map ids back to tokens, skipping PAD/BOS and stopping at EOS."""
        words = []
        for index in ids:
            if index == EOS_ID:
                break
            if index in (PAD_ID, BOS_ID):
                continue
            words.append(self._tokens[index])
        return words

    def fingerprint(self) -> str:
        """SHA-256 over the ordered token list; stored with checkpoints."""
        digest = hashlib.sha256()
        for token in self._tokens:
            digest.update(token.encode("utf-8"))
            digest.update(b"\n")
        return digest.hexdigest()


def build_vocabulary(corpus: Iterable[Iterable[str]], min_count: int = 1) -> Vocabulary:
    """Build a vocabulary ordered by descending frequency, ties lexicographic.

    Args:
        corpus: Token sequences (``TokenSequence`` or plain lists)
        min_count: Minimum corpus frequency for a token to get an id

    Returns:
        Vocabulary over all tokens meeting the threshold
    """
    if min_count < 1:
        raise ConfigurationError(f"min_count must be >= 1, got {min_count}")

    counts: Counter = Counter()
    for sequence in corpus:
        counts.update(sequence)
    for reserved in RESERVED_TOKENS:
        counts.pop(reserved, None)

    kept = sorted(
        (tok for tok, count in counts.items() if count >= min_count),
        key=lambda tok: (-counts[tok], tok),
    )
    logger.debug(f"Vocabulary: {len(kept)} of {len(counts)} token types kept")
    return Vocabulary(kept)

