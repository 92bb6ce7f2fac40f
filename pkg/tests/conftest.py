"""Shared fixtures: hand-assembled DICOM bytes and small read/prediction builders."""

from __future__ import annotations

import struct

import numpy as np
import pytest

from cxreval.model import BBox, RaterRead, Session
from cxreval.taxonomy import lookup

EXPLICIT_LE = "1.2.840.10008.1.2.1"
IMPLICIT_LE = "1.2.840.10008.1.2"
JPEG_LOSSLESS = "1.2.840.10008.1.2.4.70"

LONG = {"OB", "OW", "SQ", "UN", "UT"}


def _even(value: bytes, pad: bytes = b" ") -> bytes:
    return value if len(value) % 2 == 0 else value + pad


def element(group, elem, vr, value: bytes, explicit=True) -> bytes:
    value = _even(value, b"\x00" if vr in ("UI", "OB") else b" ")
    head = struct.pack("<HH", group, elem)
    if not explicit:
        return head + struct.pack("<I", len(value)) + value
    if vr in LONG:
        return head + vr.encode() + b"\x00\x00" + struct.pack("<I", len(value)) + value
    return head + vr.encode() + struct.pack("<H", len(value)) + value


def us(v: int) -> bytes:
    return struct.pack("<H", v)


def build_dicom(
    pixels: np.ndarray,
    *,
    bits: int = 8,
    photometric: str = "MONOCHROME2",
    syntax: str = EXPLICIT_LE,
    preamble: bool = True,
    meta: bool = True,
    window: tuple[float, float] | None = None,
    extra: list[tuple[int, int, str, bytes]] = (),
    with_pixels: bool = True,
) -> bytes:
    """Minimal Part-10 file assembled byte by byte."""
    explicit = syntax != IMPLICIT_LE
    rows, cols = pixels.shape
    body = [
        (0x0008, 0x0060, "CS", b"DX"),
        (0x0028, 0x0002, "US", us(1)),
        (0x0028, 0x0004, "CS", photometric.encode()),
        (0x0028, 0x0010, "US", us(rows)),
        (0x0028, 0x0011, "US", us(cols)),
        (0x0028, 0x0100, "US", us(bits)),
        (0x0028, 0x0101, "US", us(bits)),
        (0x0028, 0x0103, "US", us(0)),
    ]
    if window is not None:
        body += [(0x0028, 0x1050, "DS", str(window[0]).encode()), (0x0028, 0x1051, "DS", str(window[1]).encode())]
    body += list(extra)
    if with_pixels:
        dtype = "<u1" if bits == 8 else "<u2"
        body.append((0x7FE0, 0x0010, "OB" if bits == 8 else "OW", pixels.astype(dtype).tobytes()))
    body.sort(key=lambda t: (t[0], t[1]))
    dataset = b"".join(element(g, e, vr, v, explicit) for g, e, vr, v in body)
    out = b""
    if preamble:
        out += b"\x00" * 128 + b"DICM"
    if meta:
        m = element(0x0002, 0x0001, "OB", b"\x00\x01") + element(0x0002, 0x0010, "UI", syntax.encode())
        out += element(0x0002, 0x0000, "UL", struct.pack("<I", len(m))) + m
    return out + dataset


PHI = [
    (0x0008, 0x0050, "SH", b"ACC123"),
    (0x0008, 0x0080, "LO", b"General Hospital"),
    (0x0008, 0x0081, "ST", b"1 Main St"),
    (0x0008, 0x0090, "PN", b"REF^DOC"),
    (0x0008, 0x1010, "SH", b"STATION7"),
    (0x0008, 0x1070, "PN", b"OP^ONE"),
    (0x0009, 0x0010, "LO", b"PRIVATE CREATOR"),
    (0x0010, 0x0010, "PN", b"DOE^JANE"),
    (0x0010, 0x0020, "LO", b"PID0001"),
    (0x0010, 0x0030, "DA", b"19700101"),
    (0x0010, 0x0040, "CS", b"F"),
    (0x0010, 0x1000, "LO", b"OTHER1"),
    (0x0010, 0x1010, "AS", b"045Y"),
    (0x0010, 0x1040, "LO", b"Somewhere"),
    (0x0029, 0x1001, "OB", b"\x01\x02\x03\x04"),
]


@pytest.fixture
def golden_2x2() -> bytes:
    return build_dicom(np.array([[0, 64], [128, 255]]), extra=PHI)


def make_read(image_id, rater, labels=(), boxes=(), session=Session.UNASSISTED, site=""):
    """RaterRead from label names; ``boxes`` is a list of (name, (x0, y0, x1, y1))."""
    glob = frozenset(lookup(n) for n in labels)
    finds = tuple((lookup(n), BBox(*b)) for n, b in boxes)
    return RaterRead(image_id, rater, session, glob, finds, site)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in mod.format_results():
        terminalreporter.write_line(line)
