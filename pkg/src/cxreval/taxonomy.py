"""The 28-label chest X-ray taxonomy (22 lesion-level, 6 image-level labels)."""

from __future__ import annotations

import re
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache


class LabelKind(str, Enum):
    GLOBAL = "global"
    LOCAL = "local"


@dataclass(frozen=True)
class LabelClass:
    name: str
    kind: LabelKind
    trainable: bool = True

    @property
    def is_global(self) -> bool:
        return self.kind is LabelKind.GLOBAL

    @property
    def is_local(self) -> bool:
        return self.kind is LabelKind.LOCAL

    def __str__(self) -> str:
        return self.name


NO_FINDING = "No Finding"

# (name, trainable) in dataset-table order.
_LOCAL = [
    ("Aortic Enlargement", True),
    ("Atelectasis", True),
    ("Cardiomegaly", True),
    ("Calcification", True),
    ("Clavicle Fracture", False),
    ("Consolidation", True),
    ("Edema", False),
    ("Emphysema", False),
    ("Enlarged PA", False),
    ("ILD", True),
    ("Infiltration", True),
    ("Lung Cavity", False),
    ("Lung Cyst", False),
    ("Lung Opacity", True),
    ("Mediastinal Shift", False),
    ("Nodule/Mass", True),
    ("Pulmonary Fibrosis", True),
    ("Pneumothorax", True),
    ("Pleural Thickening", True),
    ("Pleural Effusion", True),
    ("Rib Fracture", False),
    ("Other Lesions", True),
]
_GLOBAL = [
    ("Lung Tumor", True),
    ("Pneumonia", True),
    ("Tuberculosis", True),
    ("Other Diseases", True),
    ("COPD", False),
    (NO_FINDING, True),
]

# Spellings seen in public annotation releases and in result tables.
_ALIASES = {
    "interstitial lung disease": "ILD",
    "interstitial lung disease (ild)": "ILD",
    "opacity": "Lung Opacity",
    "other lesion": "Other Lesions",
    "other disease": "Other Diseases",
    "nodule": "Nodule/Mass",
    "mass": "Nodule/Mass",
    "nodule / mass": "Nodule/Mass",
    "enlarged pulmonary artery": "Enlarged PA",
    "chronic obstructive pulmonary disease": "COPD",
    "lung tumour": "Lung Tumor",
    "no findings": NO_FINDING,
}

# Classification rows of the per-radiograph results table. Pleural Effusion is
# a lesion-level label scored at image level.
CLASSIFICATION_LABELS = (
    "Pleural Effusion",
    "Lung Tumor",
    "Pneumonia",
    "Tuberculosis",
    "Other Diseases",
    NO_FINDING,
)

# Rows of the lesion-detection results table, in published order.
DETECTION_FINDINGS = (
    "Cardiomegaly",
    "Lung Opacity",
    "Consolidation",
    "Atelectasis",
    "Pneumothorax",
    "Pleural Effusion",
    "Aortic Enlargement",
    "ILD",
    "Infiltration",
    "Nodule/Mass",
    "Pulmonary Fibrosis",
    "Pleural Thickening",
    "Calcification",
    "Other Lesions",
)

# Rows of the reader-study agreement tables, in published order.
AGREEMENT_LABELS = (
    "Lung Tumor",
    "Pneumonia",
    "Tuberculosis",
    "Other Diseases",
    NO_FINDING,
    "Aortic Enlargement",
    "Atelectasis",
    "Calcification",
    "Cardiomegaly",
    "Consolidation",
    "ILD",
    "Infiltration",
    "Lung Opacity",
    "Nodule/Mass",
    "Pleural Effusion",
    "Pleural Thickening",
    "Pneumothorax",
    "Pulmonary Fibrosis",
    "Other Lesions",
)


@lru_cache(maxsize=None)
def _taxonomy() -> tuple[LabelClass, ...]:
    return tuple(
        [LabelClass(n, LabelKind.LOCAL, t) for n, t in _LOCAL]
        + [LabelClass(n, LabelKind.GLOBAL, t) for n, t in _GLOBAL]
    )


def build_label_taxonomy() -> list[LabelClass]:
    """Return the 28 labels, local ones first, in dataset-table order."""
    return list(_taxonomy())


def _norm(name: str) -> str:
    return re.sub(r"\s+", " ", name.strip()).lower()


@lru_cache(maxsize=None)
def _index() -> dict[str, LabelClass]:
    idx = {_norm(c.name): c for c in _taxonomy()}
    for alias, canonical in _ALIASES.items():
        idx[alias] = idx[_norm(canonical)]
    return idx


def lookup(name: str) -> LabelClass | None:
    """Case- and whitespace-insensitive lookup, aliases included."""
    return _index().get(_norm(name))


def get(name: str) -> LabelClass:
    cls = lookup(name)
    if cls is None:
        raise KeyError(f"unknown label {name!r}")
    return cls


def untyped(name: str, kind: LabelKind) -> LabelClass:
    """A label outside the taxonomy, used when strict checking is off."""
    return LabelClass(name.strip(), kind, trainable=False)


def trainable(kind: LabelKind | None = None) -> list[LabelClass]:
    return [c for c in _taxonomy() if c.trainable and (kind is None or c.kind is kind)]
