"""End-to-end tests for corefsum pipelines."""
