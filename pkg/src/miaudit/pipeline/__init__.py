"""Manifest-driven orchestration, reports and the command line."""
from miaudit.pipeline.io import emit_report, export_predictions, import_predictions, report_files
from miaudit.pipeline.manifest import ExperimentManifest, PostTraining, load_manifest, parse_manifest
from miaudit.pipeline.runner import (
    POSTERIOR_ONLY_ATTACKS,
    STAGES,
    SWEEP_AXES,
    ReportBundle,
    Session,
    StageError,
    audit_predictions,
    run_experiment,
    run_sweep,
    run_unlearning_audit,
)

__all__ = [
    "POSTERIOR_ONLY_ATTACKS", "ExperimentManifest", "PostTraining", "ReportBundle", "STAGES", "SWEEP_AXES", "Session", "StageError", "audit_predictions",
    "emit_report", "export_predictions", "import_predictions", "report_files", "load_manifest", "parse_manifest", "run_experiment", "run_sweep", "run_unlearning_audit",
]
