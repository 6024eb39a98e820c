"""Experiment harnesses: phase-transition sweeps and the image-patch pipeline."""

from .image import (
    PatchMatrix,
    extract_patches,
    learn_image_dictionary,
    precondition,
    read_pgm,
    reassemble,
    run_image_pipeline,
    sparsity_report,
    write_pgm,
)
from .sweep import SweepConfig, SweepResult, run_sweep

__all__ = [
    "PatchMatrix", "extract_patches", "learn_image_dictionary", "precondition", "read_pgm",
    "reassemble", "run_image_pipeline", "sparsity_report", "write_pgm",
    "SweepConfig", "SweepResult", "run_sweep",
]
