"""
corefsum - Coreference-aware dialogue summarization

Post-processes automatic coreference output for dialogues, turns it into
graphs and attention matrices, and fuses it into a small trainable
encoder-decoder summarizer.
"""

__version__ = "0.3.0"
__author__ = "corefsum contributors"
