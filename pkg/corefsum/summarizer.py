"""
Inference on trained models: summaries and attention-head probing.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from typing import List, Optional, Sequence, Tuple

import torch

from .annotation import CorefAnnotation
from .checkpoint import ModelCheckpoint
from .dialogue import Dialogue, Vocabulary, flatten_dialogue
from .exceptions import CorefAnnotationError
from .fusion import LayerProbe, ProbeAccumulator, ProbeReportEntry, probe_heads
from .model import Batch, CorefSummarizer, EncoderOutput, prepare_batch


logger = logging.getLogger(__name__)

DEFAULT_SUMMARY_LENGTH = 48
DEFAULT_BATCH_SIZE = 8

Item = Tuple[Dialogue, Optional[CorefAnnotation]]


def _annotation_for(dialogue: Dialogue, annotation: Optional[CorefAnnotation]) -> CorefAnnotation:
    if annotation is None:
        return CorefAnnotation.empty(dialogue.id)
    if annotation.dialogue_id != dialogue.id:
        raise CorefAnnotationError(
            f"Annotation for {annotation.dialogue_id} paired with dialogue {dialogue.id}"
        )
    return annotation


class Summarizer:
    """A model bound to its vocabulary, in evaluation mode."""

    def __init__(
        self,
        model: CorefSummarizer,
        vocabulary: Vocabulary,
        max_summary_length: int = DEFAULT_SUMMARY_LENGTH,
    ):
        self.model = model
        self.vocabulary = vocabulary
        self.max_summary_length = max_summary_length

    @classmethod
    def from_checkpoint(
        cls,
        checkpoint: ModelCheckpoint,
        vocabulary: Optional[Vocabulary] = None,
        max_summary_length: int = DEFAULT_SUMMARY_LENGTH,
    ) -> "Summarizer":
        """Rebuild the model; an explicit tokenizer vocabulary must match the checkpoint's.

        Raises:
            CheckpointError: On a vocabulary hash mismatch
        """
        if vocabulary is not None:
            checkpoint.check_vocabulary(vocabulary)
        return cls(checkpoint.build_model(), checkpoint.vocabulary, max_summary_length)

    def batch(self, items: Sequence[Item], with_attention: bool = False) -> Batch:
        """Model inputs with the structures the model's variant reads (plus A^c on request)."""
        sources = [flatten_dialogue(dialogue).tokens for dialogue, _ in items]
        annotations = [_annotation_for(dialogue, annotation) for dialogue, annotation in items]
        config = self.model.config
        return prepare_batch(
            sources,
            annotations,
            self.vocabulary,
            config.max_length,
            variant=config.variant,
            with_attention=with_attention,
        )

    @torch.no_grad()
    def encode(self, dialogue: Dialogue, annotation: Optional[CorefAnnotation] = None) -> EncoderOutput:
        self.model.eval()
        batch = self.batch([(dialogue, annotation)])
        return self.model.encode(batch.source, batch.source_mask, batch.structures)

    @torch.no_grad()
    def summarize_many(
        self, items: Sequence[Item], batch_size: int = DEFAULT_BATCH_SIZE
    ) -> List[str]:
        """Greedy summaries for many dialogues, decoded in batches."""
        was_training = self.model.training
        self.model.eval()
        summaries: List[str] = []
        try:
            for start in range(0, len(items), batch_size):
                batch = self.batch(items[start : start + batch_size])
                encoded = self.model.encode(batch.source, batch.source_mask, batch.structures)
                for ids in self.model.decode_greedy(encoded, self.max_summary_length):
                    summaries.append(" ".join(self.vocabulary.decode(ids)))
        finally:
            self.model.train(was_training)
        return summaries

    def summarize(self, dialogue: Dialogue, annotation: Optional[CorefAnnotation] = None) -> str:
        return self.summarize_many([(dialogue, annotation)])[0]

    def _probe_one(self, item: Item) -> Optional[List[LayerProbe]]:
        dialogue, annotation = item
        annotation = _annotation_for(dialogue, annotation)
        if not annotation.clusters:
            logger.debug(f"{dialogue.id}: no clusters, skipped in probing")
            return None
        with torch.no_grad():
            batch = self.batch([(dialogue, annotation)], with_attention=True)
            encoded = self.model.encode(batch.source, batch.source_mask, batch.structures)
        maps = [list(layer_maps[0]) for layer_maps in encoded.attention_maps]
        return probe_heads(maps, batch.structures.attention[0])

    def probe(self, items: Sequence[Item], workers: int = 1) -> List[ProbeReportEntry]:
        """Per layer, how often each encoder head's map is the closest to A^c.

        Dialogues without clusters carry no signal and are skipped.

        Args:
            items: (dialogue, annotation) pairs
            workers: Threads encoding dialogues in parallel; the model is only read

        Returns:
            One report entry per encoder layer
        """
        config = self.model.config
        accumulator = ProbeAccumulator(config.encoder_layers, config.num_heads)
        self.model.eval()
        if workers > 1 and len(items) > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                probes = list(pool.map(self._probe_one, items))
        else:
            probes = [self._probe_one(item) for item in items]
        for layer_probes in probes:
            if layer_probes is not None:
                accumulator.add(layer_probes)
        logger.info(f"Probed {accumulator.samples} of {len(items)} dialogues")
        return accumulator.report()


def summarize(
    checkpoint: ModelCheckpoint,
    dialogue: Dialogue,
    annotation: Optional[CorefAnnotation] = None,
    vocabulary: Optional[Vocabulary] = None,
) -> str:
    """Encode, decode greedily and detokenize one dialogue."""
    return Summarizer.from_checkpoint(checkpoint, vocabulary).summarize(dialogue, annotation)
