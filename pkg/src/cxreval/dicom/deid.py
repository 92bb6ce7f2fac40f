"""Removal of protected health information from parsed DICOM objects."""

from __future__ import annotations

from .parser import DicomObject

# Identifying attributes deleted outright. Age and sex are kept for cohort
# statistics.
PHI_TAGS = {
    (0x0010, 0x0010): "PatientName",
    (0x0010, 0x0020): "PatientID",
    (0x0010, 0x0030): "PatientBirthDate",
    (0x0010, 0x1000): "OtherPatientIDs",
    (0x0010, 0x1040): "PatientAddress",
    (0x0008, 0x0090): "ReferringPhysicianName",
    (0x0008, 0x0080): "InstitutionName",
    (0x0008, 0x0081): "InstitutionAddress",
    (0x0008, 0x0050): "AccessionNumber",
    (0x0008, 0x1010): "StationName",
    (0x0008, 0x1070): "OperatorsName",
}
RETAINED_TAGS = {
    (0x0010, 0x1010): "PatientAge",
    (0x0010, 0x0040): "PatientSex",
}


def is_private(tag) -> bool:
    return tag[0] % 2 == 1


def blacklisted(tag) -> bool:
    return tag in PHI_TAGS or is_private(tag)


def deidentify(obj: DicomObject) -> DicomObject:
    """Drop the PHI blacklist and every private (odd-group) element.

    Only top-level elements are inspected; sequences are carried over
    unchanged. Pixel data and the pixel descriptor are never touched.
    """
    return obj.without(t for t in obj.elements if blacklisted(t))
