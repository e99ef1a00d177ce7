"""
Summarization examples and corpus directories.

A corpus directory holds, per split, ``<split>.jsonl`` (dialogues with a
``summary`` and optionally ``actor``/``distractor``) and
``<split>.coref.jsonl`` (one annotation per dialogue).
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

from .annotation import CorefAnnotation, index_by_dialogue
from .dialogue import Dialogue, TokenSequence, flatten_dialogue
from .exceptions import ArtifactIOError, DataFormatError
from .storage import PathLike, read_annotations, read_dialogue_records, write_annotations, write_jsonl


logger = logging.getLogger(__name__)

SPLITS = ("train", "validation", "test")


@dataclass(frozen=True)
class Example:
    """A dialogue with its gold coreference clusters and reference summary."""

    dialogue: Dialogue
    annotation: CorefAnnotation
    summary: str
    actor: Optional[str] = None
    distractor: Optional[str] = None

    @property
    def id(self) -> str:
        return self.dialogue.id

    @property
    def sequence(self) -> TokenSequence:
        return flatten_dialogue(self.dialogue)

    @property
    def summary_tokens(self) -> List[str]:
        return self.summary.split()

    def to_record(self) -> Dict[str, Any]:
        record = self.dialogue.to_dict()
        record["summary"] = self.summary
        if self.actor is not None:
            record["actor"] = self.actor
        if self.distractor is not None:
            record["distractor"] = self.distractor
        return record


@dataclass
class Corpus:
    """Train/validation/test splits of examples."""

    train: List[Example] = field(default_factory=list)
    validation: List[Example] = field(default_factory=list)
    test: List[Example] = field(default_factory=list)

    def split(self, name: str) -> List[Example]:
        if name not in SPLITS:
            raise DataFormatError(f"Unknown split '{name}'. Use one of: {', '.join(SPLITS)}")
        return getattr(self, name)

    @property
    def sizes(self) -> Tuple[int, int, int]:
        return len(self.train), len(self.validation), len(self.test)

    def __len__(self) -> int:
        return sum(self.sizes)


def save_corpus(corpus: Corpus, directory: PathLike) -> List[Path]:
    """Write every split as dialogue and coref JSONL files."""
    directory = Path(directory)
    written = []
    for name in SPLITS:
        examples = corpus.split(name)
        written.append(write_jsonl(directory / f"{name}.jsonl", (e.to_record() for e in examples)))
        written.append(
            write_annotations(directory / f"{name}.coref.jsonl", (e.annotation for e in examples))
        )
    logger.info(f"Saved corpus {corpus.sizes} to {directory}")
    return written


def load_split(directory: PathLike, name: str) -> List[Example]:
    """Load one split; a missing coref file means no clusters for any dialogue.

    Raises:
        ArtifactIOError: If the dialogue file is missing
        DataFormatError: If a record has no summary
    """
    directory = Path(directory)
    dialogue_file = directory / f"{name}.jsonl"
    coref_file = directory / f"{name}.coref.jsonl"
    if not dialogue_file.exists():
        raise ArtifactIOError(f"Missing split file: {dialogue_file}")

    annotations: Dict[str, CorefAnnotation] = {}
    if coref_file.exists():
        annotations = index_by_dialogue(read_annotations(coref_file), str(coref_file))
    else:
        logger.warning(f"No coreference file for split {name}; using empty clusters")

    examples = []
    for number, dialogue, record in read_dialogue_records(dialogue_file):
        summary = record.get("summary")
        if not isinstance(summary, str):
            raise DataFormatError(
                f"dialogue {dialogue.id} has no summary", str(dialogue_file), number
            )
        annotation = annotations.pop(dialogue.id, None) or CorefAnnotation.empty(dialogue.id)
        annotation.validate(len(flatten_dialogue(dialogue)))
        examples.append(
            Example(
                dialogue=dialogue,
                annotation=annotation,
                summary=summary,
                actor=record.get("actor"),
                distractor=record.get("distractor"),
            )
        )
    for orphan in annotations:
        logger.warning(f"{coref_file}: annotation for unknown dialogue {orphan}")
    return examples


def load_corpus(directory: PathLike) -> Corpus:
    """Load all splits; validation and test may be absent, train may not."""
    directory = Path(directory)
    corpus = Corpus(train=load_split(directory, "train"))
    for name in ("validation", "test"):
        if (directory / f"{name}.jsonl").exists():
            setattr(corpus, name, load_split(directory, name))
    logger.info(f"Loaded corpus {corpus.sizes} from {directory}")
    return corpus
