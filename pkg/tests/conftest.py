"""
Pytest configuration and fixtures for corefsum tests.
"""

import json
import shutil
import tempfile
from pathlib import Path

import pytest
import torch

from corefsum.annotation import CorefAnnotation
from corefsum.dialogue import Dialogue, Span, Turn
from corefsum.model import ModelConfig
from corefsum.synthetic import generate_synthetic
from corefsum.training import TrainingConfig


def spans(*pairs):
    """Cluster helper: spans((1, 1), (3, 4)) -> (Span(1, 1), Span(3, 4))."""
    return tuple(Span(s, e) for s, e in pairs)


def single(*positions):
    """Cluster of single-token mentions."""
    return tuple(Span(p, p) for p in positions)


@pytest.fixture
def temp_dir():
    """Create a temporary directory for testing."""
    temp_path = tempfile.mkdtemp()
    yield Path(temp_path)
    shutil.rmtree(temp_path)


@pytest.fixture
def fig4_annotation():
    """Clusters {t1, t3, t7} and {t2, t5} over eight tokens."""
    return CorefAnnotation("fig4", (single(1, 3, 7), single(2, 5)))


@pytest.fixture
def chat():
    """Three-turn dialogue used by the post-processing tests.

    Flattened positions:
        0 Paul  1 :  2 where  3 is  4 Amanda  5 ?
        6 Amanda  7 :  8 she  9 is  10 with  11 me  12 ,  13 Paul
        14 Paul  15 :  16 ok
    """
    return Dialogue(
        "chat-1",
        (
            Turn("Paul", "where is Amanda ?"),
            Turn("Amanda", "she is with me , Paul"),
            Turn("Paul", "ok"),
        ),
    )


@pytest.fixture
def tiny_config():
    """Small model with dropout off, for exact and gradient tests."""
    return ModelConfig(
        d_model=8,
        encoder_layers=2,
        decoder_layers=2,
        num_heads=2,
        ffn_size=16,
        max_length=128,
        dropout=0.0,
        seed=0,
    )


@pytest.fixture
def quick_training():
    """Two short epochs with the from-scratch learning rates."""
    return TrainingConfig.from_scratch(epochs=2, batch_size=4, max_summary_length=12)


@pytest.fixture
def small_corpus():
    """Six synthetic examples split 4/1/1."""
    return generate_synthetic(6, seed=3, split=(4, 1, 1))


@pytest.fixture
def generator():
    """Seeded torch generator for random test tensors."""
    g = torch.Generator()
    g.manual_seed(1234)
    return g


@pytest.fixture
def write_jsonl():
    """Write a list of records as JSONL and return the path."""

    def _write(path, records):
        path = Path(path)
        path.write_text("".join(json.dumps(r) + "\n" for r in records), encoding="utf-8")
        return path

    return _write


@pytest.fixture
def tiny_config_file(temp_dir):
    """Training config for a model small enough for CLI tests."""
    path = temp_dir / "tiny.cfg"
    path.write_text(
        "\n".join(
            [
                "# tiny model for tests",
                "d_model=16",
                "num_heads=2",
                "ffn_size=32",
                "encoder_layers=1",
                "decoder_layers=1",
                "dropout=0.0",
                "epochs=1",
                "batch_size=4",
                "backbone_lr=1e-3",
                "max_summary_length=12",
            ]
        )
        + "\n",
        encoding="utf-8",
    )
    return path
