"""
Test suite for corefsum.
"""
