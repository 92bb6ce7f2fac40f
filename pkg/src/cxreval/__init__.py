"""Evaluation toolkit for chest radiograph models and reader studies."""

__version__ = "0.1.0"

from .agreement import (  # noqa: E402
    AgreementTable,
    KappaResult,
    agreement_table,
    cohen_kappa,
    fleiss_kappa,
    interpret_kappa,
    model_vs_rater_table,
    percent_agreement,
    reader_study_delta,
)
from .bootstrap import BootstrapConfig, Interval, bootstrap_ci  # noqa: E402
from .classification import (  # noqa: E402
    ScoredLabelSet,
    auroc,
    operating_point,
    per_label_classification_report,
    roc_curve,
    youden_threshold,
)
from .detection import (  # noqa: E402
    froc_curve,
    froc_score,
    match_detections,
    per_finding_detection_report,
    sensitivity_at_fppi,
)
from .model import BBox, ConsensusPolicy, RaterRead, consensus_labels  # noqa: E402
from .taxonomy import build_label_taxonomy  # noqa: E402
