"""DICOM ingestion: parsing, de-identification, decoding, preprocessing."""

from .deid import PHI_TAGS, deidentify
from .parser import (
    EXPLICIT_LE,
    IMPLICIT_LE,
    DataElement,
    DicomObject,
    PixelDescriptor,
    encode_dicom,
    parse_dicom,
    read_dicom,
)
from .pixels import (
    GrayImage,
    PixelTensor,
    decode_pixels,
    export_png,
    preprocess,
    preprocess_stages,
    read_png,
    read_tensor,
    write_tensor,
)

__all__ = [
    "EXPLICIT_LE",
    "IMPLICIT_LE",
    "PHI_TAGS",
    "DataElement",
    "DicomObject",
    "GrayImage",
    "PixelDescriptor",
    "PixelTensor",
    "decode_pixels",
    "deidentify",
    "encode_dicom",
    "export_png",
    "parse_dicom",
    "preprocess",
    "preprocess_stages",
    "read_dicom",
    "read_png",
    "read_tensor",
    "write_tensor",
]
