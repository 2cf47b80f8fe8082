"""Fault and performance detection, localization and severity prediction
for NFV telemetry."""

from .errors import FcpError
from .ingest import DesignMatrix, assemble_features, load_kde_table, load_telstra, split, standardize
from .metrics import kfold
from .persist import TrainedModel, load_model, save_model
from .pipeline import FcpVerdict, PipelineConfig, run_pipeline
from .synthgen import fit_kde, generate_dataset, load_taxonomy, sample_markov
from .training import fit_model

__version__ = "0.1.0"

__all__ = [
    "DesignMatrix",
    "FcpError",
    "FcpVerdict",
    "PipelineConfig",
    "TrainedModel",
    "assemble_features",
    "fit_kde",
    "fit_model",
    "generate_dataset",
    "kfold",
    "load_kde_table",
    "load_model",
    "load_taxonomy",
    "load_telstra",
    "run_pipeline",
    "sample_markov",
    "save_model",
    "split",
    "standardize",
]
