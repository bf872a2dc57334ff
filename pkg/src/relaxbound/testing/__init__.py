"""Brute-force reference implementations for tests; exponential, never used by solvers."""
