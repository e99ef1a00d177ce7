"""
File I/O for corefsum artifacts.

All inputs are UTF-8. Every output goes to a temporary file in the target
directory first and is then renamed over the destination, so a crash never
leaves a half-written artifact behind.
"""

import json
import logging
import os
from pathlib import Path
from typing import Any, Dict, Iterable, Iterator, List, Mapping, Tuple, Union

from .annotation import CorefAnnotation
from .dialogue import Dialogue
from .exceptions import ArtifactIOError, DataFormatError, ValidationError


logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


def write_text_atomic(path: PathLike, text: str) -> Path:
    """Write ``text`` to ``path`` via a temporary file and rename.

    Raises:
        ArtifactIOError: If the file cannot be written
    """
    target = Path(path)
    temp_file = target.with_name(f".{target.name}.tmp")
    try:
        target.parent.mkdir(parents=True, exist_ok=True)
        with open(temp_file, "w", encoding="utf-8", newline="\n") as f:
            f.write(text)
        os.replace(temp_file, target)
    except OSError as e:
        if temp_file.exists():
            try:
                temp_file.unlink()
            except OSError:
                pass
        raise ArtifactIOError(f"Failed to write {target}: {e}")

    logger.debug(f"Wrote {target}")
    return target


def read_text(path: PathLike) -> str:
    try:
        with open(path, "r", encoding="utf-8") as f:
            return f.read()
    except OSError as e:
        raise ArtifactIOError(f"Failed to read {path}: {e}")
    except UnicodeDecodeError as e:
        raise DataFormatError(f"{path} is not valid UTF-8: {e}")


def read_jsonl(path: PathLike) -> Iterator[Tuple[int, Dict[str, Any]]]:
    """Yield ``(line_number, record)`` for every non-blank line.

    Raises:
        DataFormatError: On invalid JSON or a non-object line, naming the line
    """
    for number, line in enumerate(read_text(path).splitlines(), start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as e:
            raise DataFormatError(f"invalid JSON ({e.msg})", str(path), number)
        if not isinstance(record, dict):
            raise DataFormatError("expected a JSON object", str(path), number)
        yield number, record


def write_jsonl(path: PathLike, records: Iterable[Mapping[str, Any]]) -> Path:
    lines = [json.dumps(record, ensure_ascii=False) for record in records]
    return write_text_atomic(path, "".join(f"{line}\n" for line in lines))


def write_json(path: PathLike, record: Any) -> Path:
    return write_text_atomic(path, json.dumps(record, indent=2, ensure_ascii=False) + "\n")


def read_json(path: PathLike) -> Any:
    try:
        return json.loads(read_text(path))
    except json.JSONDecodeError as e:
        raise DataFormatError(f"invalid JSON ({e.msg})", str(path), e.lineno)


def _located(path: PathLike, number: int, error: ValidationError) -> DataFormatError:
    return DataFormatError(str(error), str(path), number)


def read_dialogue_records(path: PathLike) -> List[Tuple[int, Dialogue, Dict[str, Any]]]:
    """Dialogues with their line numbers and raw records (extra keys such as ``summary`` kept)."""
    rows = []
    for number, record in read_jsonl(path):
        try:
            rows.append((number, Dialogue.from_dict(record), record))
        except ValidationError as e:
            raise _located(path, number, e)
    logger.debug(f"Read {len(rows)} dialogues from {path}")
    return rows


def read_dialogues(path: PathLike) -> List[Dialogue]:
    return [dialogue for _, dialogue, _ in read_dialogue_records(path)]


def write_dialogues(path: PathLike, dialogues: Iterable[Dialogue]) -> Path:
    return write_jsonl(path, (d.to_dict() for d in dialogues))


def read_annotations(path: PathLike) -> List[CorefAnnotation]:
    annotations = []
    for number, record in read_jsonl(path):
        try:
            annotations.append(CorefAnnotation.from_dict(record))
        except ValidationError as e:
            raise _located(path, number, e)
    logger.debug(f"Read {len(annotations)} annotations from {path}")
    return annotations


def write_annotations(path: PathLike, annotations: Iterable[CorefAnnotation]) -> Path:
    return write_jsonl(path, (a.to_dict() for a in annotations))


def read_resolver_predictions(path: PathLike) -> List[Tuple[str, List[str], List[Any]]]:
    """Resolver output lines ``{"dialogue_id", "document", "clusters"}``."""
    predictions = []
    for number, record in read_jsonl(path):
        dialogue_id = record.get("dialogue_id")
        document = record.get("document")
        clusters = record.get("clusters")
        if not isinstance(dialogue_id, str):
            raise DataFormatError("resolver record needs a string dialogue_id", str(path), number)
        if not isinstance(document, list) or not isinstance(clusters, list):
            raise DataFormatError(
                "resolver record needs document and clusters lists", str(path), number
            )
        predictions.append((dialogue_id, [str(tok) for tok in document], clusters))
    return predictions


def read_lines(path: PathLike) -> List[str]:
    """One entry per line, trailing newline ignored."""
    text = read_text(path)
    if not text:
        return []
    lines = text.split("\n")
    return lines[:-1] if text.endswith("\n") else lines


def write_lines(path: PathLike, lines: Iterable[str]) -> Path:
    return write_text_atomic(path, "".join(f"{line}\n" for line in lines))
