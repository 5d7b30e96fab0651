"""errors.py — Exception hierarchy.

Two families, mapped to CLI exit codes by branch_cli:
  ValidationError     — a precondition failed before any simulation (exit 2)
  BranchRuntimeError  — a run could not produce its statistic (exit 3)

PopulationOverflow is neither: the engine raises it with the truncated
trajectory attached so callers can keep the partial result.
"""
from __future__ import annotations


class BranchError(Exception):
    """Root of every error raised by this package."""


# ── Validation (exit 2) ──────────────────────────────────────────────────────

class ValidationError(BranchError):
    pass


class InvalidPmf(ValidationError):
    pass


class SubcriticalOffspring(ValidationError):
    pass


class InvalidParameter(ValidationError):
    pass


class InvalidGenerator(ValidationError):
    pass


class InvalidConfig(ValidationError):
    pass


class UnknownKey(InvalidConfig):
    pass


# ── Runtime (exit 3) ─────────────────────────────────────────────────────────

class BranchRuntimeError(BranchError):
    pass


class NoSurvivors(BranchRuntimeError):
    pass


class EmptyDenominator(BranchRuntimeError):
    pass


class ZeroEigenfunction(BranchRuntimeError):
    pass


class MissingNuMass(BranchRuntimeError):
    pass


class TruncationTooSmall(BranchRuntimeError):
    pass


class IoError(BranchRuntimeError):
    pass


# ── Overflow ─────────────────────────────────────────────────────────────────

class PopulationOverflow(BranchError):
    """Live population exceeded max_population; ``trajectory`` is truncated."""

    def __init__(self, message: str, trajectory=None):
        super().__init__(message)
        self.trajectory = trajectory
