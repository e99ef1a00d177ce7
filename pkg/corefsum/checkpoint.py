"""
Model checkpoints as plain JSON.

Layout::

    {
      "<parameter name>": {"shape": [...], "data": [...]},
      ...
      "meta": {"variant", "config", "vocab", "vocab_hash", "lambda", "heads", "training"}
    }

Floats are written with Python's shortest round-trip repr, so loading a
checkpoint restores every 64-bit value exactly and saving the same state
twice produces identical bytes.
"""

import json
import logging
from dataclasses import dataclass, field
from typing import Any, Dict, Mapping, Optional

import torch

from .dialogue import Vocabulary
from .exceptions import CheckpointError, DataFormatError, ValidationError
from .model import CorefSummarizer, ModelConfig
from .numerics import DTYPE
from .storage import PathLike, read_text, write_text_atomic


logger = logging.getLogger(__name__)

META_KEY = "meta"


@dataclass
class ModelCheckpoint:
    """Named parameter tensors plus the metadata needed to rebuild the model."""

    config: ModelConfig
    vocabulary: Vocabulary
    state: Dict[str, torch.Tensor]
    training: Dict[str, Any] = field(default_factory=dict)

    @property
    def variant(self) -> str:
        return self.config.variant

    @property
    def vocab_hash(self) -> str:
        return self.vocabulary.fingerprint()

    @property
    def fusion_lambda(self) -> Optional[float]:
        value = self.state.get("fusion.fusion.value")
        return float(value.item()) if value is not None else None

    @classmethod
    def from_model(
        cls,
        model: CorefSummarizer,
        vocabulary: Vocabulary,
        training: Optional[Mapping[str, Any]] = None,
    ) -> "ModelCheckpoint":
        state = {name: tensor.detach().clone() for name, tensor in model.state_dict().items()}
        return cls(model.config, vocabulary, state, dict(training or {}))

    def build_model(self) -> CorefSummarizer:
        """Instantiate the model and load the stored weights.

        Raises:
            CheckpointError: If stored tensors do not match the architecture
        """
        model = CorefSummarizer(self.config, len(self.vocabulary))
        expected = model.state_dict()
        missing = sorted(set(expected) - set(self.state))
        extra = sorted(set(self.state) - set(expected))
        if missing or extra:
            raise CheckpointError(
                f"Checkpoint does not match a {self.variant} model "
                f"(missing {missing[:3]}, unexpected {extra[:3]})"
            )
        for name, tensor in self.state.items():
            if tuple(tensor.shape) != tuple(expected[name].shape):
                raise CheckpointError(
                    f"Parameter {name} has shape {tuple(tensor.shape)}, "
                    f"model expects {tuple(expected[name].shape)}"
                )
        model.load_state_dict(self.state)
        model.eval()
        return model

    def meta(self) -> Dict[str, Any]:
        return {
            "variant": self.variant,
            "config": self.config.to_dict(),
            "vocab": self.vocabulary.tokens,
            "vocab_hash": self.vocab_hash,
            "lambda": self.fusion_lambda,
            "heads": [list(pair) for pair in self.config.heads],
            "training": self.training,
        }

    def to_json(self) -> str:
        record: Dict[str, Any] = {}
        for name in sorted(self.state):
            tensor = self.state[name]
            record[name] = {
                "shape": list(tensor.shape),
                "data": tensor.reshape(-1).tolist(),
            }
        record[META_KEY] = self.meta()
        return json.dumps(record, separators=(",", ":"), allow_nan=False) + "\n"

    @classmethod
    def from_json(cls, text: str, source: str = "<checkpoint>") -> "ModelCheckpoint":
        """Parse a checkpoint and verify its vocabulary hash.

        Raises:
            CheckpointError: On a malformed file or a vocabulary hash mismatch
        """
        try:
            record = json.loads(text)
        except json.JSONDecodeError as e:
            raise DataFormatError(f"invalid checkpoint JSON ({e.msg})", source, e.lineno)
        if not isinstance(record, dict) or not isinstance(record.get(META_KEY), dict):
            raise CheckpointError(f"{source}: checkpoint has no meta object")

        meta = record.pop(META_KEY)
        try:
            config = ModelConfig.from_dict(meta["config"])
            vocabulary = Vocabulary(meta["vocab"])
            stored_hash = meta["vocab_hash"]
        except (KeyError, TypeError, ValidationError) as e:
            raise CheckpointError(f"{source}: malformed checkpoint meta: {e}")
        if vocabulary.fingerprint() != stored_hash:
            raise CheckpointError(f"{source}: vocabulary hash mismatch")

        state: Dict[str, torch.Tensor] = {}
        for name, entry in record.items():
            try:
                shape = [int(s) for s in entry["shape"]]
                tensor = torch.tensor(entry["data"], dtype=DTYPE).reshape(shape)
            except (KeyError, TypeError, ValueError, RuntimeError) as e:
                raise CheckpointError(f"{source}: malformed parameter {name}: {e}")
            state[name] = tensor
        return cls(config, vocabulary, state, dict(meta.get("training") or {}))

    def save(self, path: PathLike) -> None:
        write_text_atomic(path, self.to_json())
        logger.info(f"Saved {self.variant} checkpoint to {path}")

    @classmethod
    def load(cls, path: PathLike) -> "ModelCheckpoint":
        checkpoint = cls.from_json(read_text(path), str(path))
        logger.debug(f"Loaded {checkpoint.variant} checkpoint from {path}")
        return checkpoint

    def check_vocabulary(self, vocabulary: Vocabulary) -> None:
        """Reject a tokenizer vocabulary that differs from the checkpoint's."""
        if vocabulary.fingerprint() != self.vocab_hash:
            raise CheckpointError(
                f"Vocabulary hash mismatch: checkpoint {self.vocab_hash[:12]}, "
                f"tokenizer {vocabulary.fingerprint()[:12]}"
            )