"""Experiment orchestration: config, stages and the ``edas`` CLI."""

from .config import DEFAULTS, ExperimentConfig, stage_seed
from .main import main
from .stages import STAGES, run_pipeline, run_stage

__all__ = ["DEFAULTS", "STAGES", "ExperimentConfig", "main", "run_pipeline", "run_stage",
           "stage_seed"]
