"""Configurable studies, their reports, and the command-line entry point."""

from .config import ExperimentConfig
from .report import StudyReport, Verdict
from .studies import STUDIES

__all__ = ["ExperimentConfig", "StudyReport", "Verdict", "STUDIES"]
