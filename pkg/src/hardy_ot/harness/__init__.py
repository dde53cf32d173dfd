"""Transports, transcripts, Monte Carlo runner and CLI."""
