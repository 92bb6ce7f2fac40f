"""Minimal DICOM Part-10 reader/writer for uncompressed little-endian data.

Supported: explicit-VR and implicit-VR little endian, with or without the
128-byte preamble. Sequences are kept as opaque bytes.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Mapping

from ..errors import DicomError, DicomParseError, NoPixelData, UnsupportedEncoding

IMPLICIT_LE = "1.2.840.10008.1.2"
EXPLICIT_LE = "1.2.840.10008.1.2.1"
SUPPORTED_SYNTAXES = (EXPLICIT_LE, IMPLICIT_LE)

PIXEL_DATA = (0x7FE0, 0x0010)
ROWS = (0x0028, 0x0010)
COLUMNS = (0x0028, 0x0011)
SAMPLES_PER_PIXEL = (0x0028, 0x0002)
PHOTOMETRIC = (0x0028, 0x0004)
BITS_ALLOCATED = (0x0028, 0x0100)
BITS_STORED = (0x0028, 0x0101)
PIXEL_REPRESENTATION = (0x0028, 0x0103)
WINDOW_CENTER = (0x0028, 0x1050)
WINDOW_WIDTH = (0x0028, 0x1051)
RESCALE_INTERCEPT = (0x0028, 0x1052)
RESCALE_SLOPE = (0x0028, 0x1053)
TRANSFER_SYNTAX = (0x0002, 0x0010)

# VRs whose explicit encoding has 2 reserved bytes and a 4-byte length.
LONG_VRS = frozenset({"OB", "OD", "OF", "OL", "OV", "OW", "SQ", "SV", "UC", "UN", "UR", "UT", "UV"})
VALID_VRS = LONG_VRS | frozenset(
    {"AE", "AS", "AT", "CS", "DA", "DS", "DT", "FD", "FL", "IS", "LO", "LT", "PN", "SH", "SL", "SS", "ST", "TM", "UI", "UL", "US"}
)

# Implicit-VR datasets carry no VR; these are the tags this package reads or
# writes by value. Anything else is kept as raw bytes under "UN".
IMPLICIT_VRS = {
    (0x0002, 0x0000): "UL",
    (0x0002, 0x0001): "OB",
    (0x0002, 0x0002): "UI",
    (0x0002, 0x0003): "UI",
    (0x0002, 0x0010): "UI",
    (0x0002, 0x0012): "UI",
    (0x0002, 0x0013): "SH",
    (0x0008, 0x0016): "UI",
    (0x0008, 0x0018): "UI",
    (0x0008, 0x0020): "DA",
    (0x0008, 0x0050): "SH",
    (0x0008, 0x0060): "CS",
    (0x0008, 0x0070): "LO",
    (0x0008, 0x0080): "LO",
    (0x0008, 0x0081): "ST",
    (0x0008, 0x0090): "PN",
    (0x0008, 0x1010): "SH",
    (0x0008, 0x1070): "PN",
    (0x0010, 0x0010): "PN",
    (0x0010, 0x0020): "LO",
    (0x0010, 0x0030): "DA",
    (0x0010, 0x0040): "CS",
    (0x0010, 0x1000): "LO",
    (0x0010, 0x1010): "AS",
    (0x0010, 0x1040): "LO",
    (0x0020, 0x000D): "UI",
    (0x0020, 0x000E): "UI",
    (0x0028, 0x0002): "US",
    (0x0028, 0x0004): "CS",
    (0x0028, 0x0010): "US",
    (0x0028, 0x0011): "US",
    (0x0028, 0x0100): "US",
    (0x0028, 0x0101): "US",
    (0x0028, 0x0102): "US",
    (0x0028, 0x0103): "US",
    (0x0028, 0x1050): "DS",
    (0x0028, 0x1051): "DS",
    (0x0028, 0x1052): "DS",
    (0x0028, 0x1053): "DS",
    (0x7FE0, 0x0010): "OW",
}

_ITEM = (0xFFFE, 0xE000)
_ITEM_END = (0xFFFE, 0xE00D)
_SEQ_END = (0xFFFE, 0xE0DD)
_UNDEFINED = 0xFFFFFFFF


@dataclass(frozen=True)
class DataElement:
    vr: str
    value: bytes
    undefined_length: bool = False


@dataclass(frozen=True)
class PixelDescriptor:
    rows: int
    columns: int
    bits_allocated: int
    bits_stored: int
    pixel_representation: int  # 0 unsigned, 1 two's complement
    photometric: str
    rescale_slope: float = 1.0
    rescale_intercept: float = 0.0
    window_center: float | None = None
    window_width: float | None = None

    @property
    def signed(self) -> bool:
        return self.pixel_representation == 1


@dataclass(frozen=True)
class DicomObject:
    elements: Mapping[tuple[int, int], DataElement]
    transfer_syntax: str
    meta: Mapping[tuple[int, int], DataElement] = field(default_factory=dict)
    has_preamble: bool = field(default=True, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "elements", MappingProxyType(dict(sorted(self.elements.items()))))
        object.__setattr__(self, "meta", MappingProxyType(dict(sorted(self.meta.items()))))

    def __contains__(self, tag) -> bool:
        return tag in self.elements

    def text(self, tag) -> str | None:
        el = self.elements.get(tag)
        if el is None:
            return None
        return el.value.decode("latin-1").rstrip("\x00 ").strip()

    def us(self, tag) -> int | None:
        el = self.elements.get(tag)
        if el is None or len(el.value) < 2:
            return None
        return struct.unpack_from("<H", el.value)[0]

    def ds(self, tag) -> float | None:
        """First value of a decimal-string element."""
        s = self.text(tag)
        if not s:
            return None
        try:
            return float(s.split("\\")[0])
        except ValueError as exc:
            raise DicomParseError(f"bad decimal string {s!r} in tag {format_tag(tag)}") from exc

    @property
    def pixel_data(self) -> bytes:
        el = self.elements.get(PIXEL_DATA)
        if el is None:
            raise NoPixelData()
        return el.value

    @property
    def descriptor(self) -> PixelDescriptor:
        return pixel_descriptor(self)

    def without(self, tags) -> "DicomObject":
        tags = set(tags)
        kept = {t: e for t, e in self.elements.items() if t not in tags}
        return DicomObject(kept, self.transfer_syntax, self.meta, self.has_preamble)


def format_tag(tag) -> str:
    return f"({tag[0]:04X},{tag[1]:04X})"


def pixel_descriptor(obj: DicomObject) -> PixelDescriptor:
    rows, cols, bits = obj.us(ROWS), obj.us(COLUMNS), obj.us(BITS_ALLOCATED)
    for tag, v in ((ROWS, rows), (COLUMNS, cols), (BITS_ALLOCATED, bits)):
        if v is None:
            raise DicomParseError(f"missing pixel descriptor tag {format_tag(tag)}")
    if rows < 1 or cols < 1:
        raise DicomParseError(f"invalid image size {rows}x{cols}")
    if bits not in (8, 16):
        raise DicomError(f"unsupported bits allocated: {bits}")
    stored = obj.us(BITS_STORED) or bits
    if stored > bits:
        raise DicomParseError(f"bits stored {stored} exceeds bits allocated {bits}")
    spp = obj.us(SAMPLES_PER_PIXEL) or 1
    if spp != 1:
        raise DicomError(f"unsupported samples per pixel: {spp}")
    photometric = obj.text(PHOTOMETRIC) or "MONOCHROME2"
    if photometric not in ("MONOCHROME1", "MONOCHROME2"):
        raise DicomError(f"unsupported photometric interpretation: {photometric}")
    slope = obj.ds(RESCALE_SLOPE)
    intercept = obj.ds(RESCALE_INTERCEPT)
    return PixelDescriptor(
        rows=rows,
        columns=cols,
        bits_allocated=bits,
        bits_stored=stored,
        pixel_representation=obj.us(PIXEL_REPRESENTATION) or 0,
        photometric=photometric,
        rescale_slope=1.0 if slope is None else slope,
        rescale_intercept=0.0 if intercept is None else intercept,
        window_center=obj.ds(WINDOW_CENTER),
        window_width=obj.ds(WINDOW_WIDTH),
    )


# ---------------------------------------------------------------- reading


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf

    def need(self, pos: int, n: int, what: str) -> None:
        if pos + n > len(self.buf):
            raise DicomParseError(f"truncated {what}", offset=pos)

    def tag(self, pos: int) -> tuple[int, int]:
        self.need(pos, 4, "tag")
        return struct.unpack_from("<HH", self.buf, pos)

    def header(self, pos: int, explicit: bool):
        """Decode one element header -> (tag, vr, length, value_pos)."""
        tag = self.tag(pos)
        if tag[0] == 0xFFFE:
            self.need(pos, 8, "item header")
            return tag, "", struct.unpack_from("<I", self.buf, pos + 4)[0], pos + 8
        if explicit:
            self.need(pos, 8, "element header")
            vr = self.buf[pos + 4 : pos + 6].decode("latin-1")
            if vr not in VALID_VRS:
                raise DicomParseError(f"invalid VR {vr!r} for tag {format_tag(tag)}", offset=pos + 4)
            if vr in LONG_VRS:
                self.need(pos, 12, "element header")
                return tag, vr, struct.unpack_from("<I", self.buf, pos + 8)[0], pos + 12
            return tag, vr, struct.unpack_from("<H", self.buf, pos + 6)[0], pos + 8
        self.need(pos, 8, "element header")
        length = struct.unpack_from("<I", self.buf, pos + 4)[0]
        return tag, IMPLICIT_VRS.get(tag, "UN"), length, pos + 8

    def skip_undefined(self, pos: int, explicit: bool) -> int:
        """Position just past the sequence delimiter of an undefined-length sequence."""
        while True:
            tag, _, length, vpos = self.header(pos, explicit)
            if tag == _SEQ_END:
                return vpos
            if tag != _ITEM:
                raise DicomParseError(f"expected sequence item, got {format_tag(tag)}", offset=pos)
            if length != _UNDEFINED:
                self.need(vpos, length, "sequence item")
                pos = vpos + length
                continue
            pos = vpos
            while True:
                t, vr, ln, vp = self.header(pos, explicit)
                if t == _ITEM_END:
                    pos = vp
                    break
                pos = self.skip_element(t, vr, ln, vp, explicit)

    def skip_element(self, tag, vr, length, vpos, explicit) -> int:
        if length == _UNDEFINED:
            if vr in ("SQ", "UN") or not explicit:
                return self.skip_undefined(vpos, explicit)
            raise DicomParseError(
                f"undefined length for {vr} tag {format_tag(tag)} (encapsulated data?)", offset=vpos
            )
        self.need(vpos, length, f"value field of tag {format_tag(tag)}")
        return vpos + length

    def dataset(self, pos: int, end: int, explicit: bool, stop_group: int | None = None):
        out: dict[tuple[int, int], DataElement] = {}
        while pos < end:
            if stop_group is not None:
                if pos + 4 > end or self.tag(pos)[0] != stop_group:
                    break
            tag, vr, length, vpos = self.header(pos, explicit)
            if tag[0] == 0xFFFE:
                raise DicomParseError(f"unexpected delimiter {format_tag(tag)}", offset=pos)
            nxt = self.skip_element(tag, vr, length, vpos, explicit)
            if length == _UNDEFINED:
                out[tag] = DataElement(vr, self.buf[vpos:nxt], undefined_length=True)
            else:
                out[tag] = DataElement(vr, self.buf[vpos:nxt])
            pos = nxt
        return out, pos


def _looks_explicit(buf: bytes, pos: int) -> bool:
    vr = buf[pos + 4 : pos + 6]
    return len(vr) == 2 and vr.decode("latin-1", "replace") in VALID_VRS


def parse_dicom(data: bytes) -> DicomObject:
    """Parse a DICOM file (with or without the 128-byte preamble)."""
    buf = bytes(data)
    reader = _Reader(buf)
    has_preamble = len(buf) >= 132 and buf[128:132] == b"DICM"
    pos = 132 if has_preamble else 0
    if pos >= len(buf):
        raise DicomParseError("empty dataset", offset=pos)

    meta: dict = {}
    if reader.tag(pos)[0] == 0x0002:
        meta, pos = reader.dataset(pos, len(buf), explicit=True, stop_group=0x0002)
    if TRANSFER_SYNTAX in meta:
        syntax = meta[TRANSFER_SYNTAX].value.decode("latin-1").rstrip("\x00 ").strip()
    else:
        syntax = EXPLICIT_LE if pos + 6 <= len(buf) and _looks_explicit(buf, pos) else IMPLICIT_LE
    if syntax not in SUPPORTED_SYNTAXES:
        raise UnsupportedEncoding(syntax)

    elements, _ = reader.dataset(pos, len(buf), explicit=syntax == EXPLICIT_LE)
    obj = DicomObject(elements, syntax, meta, has_preamble)
    if PIXEL_DATA not in elements:
        raise NoPixelData()
    d = obj.descriptor
    expected = d.rows * d.columns * (d.bits_allocated // 8)
    got = len(obj.pixel_data)
    if not (got == expected or (expected % 2 == 1 and got == expected + 1)):
        raise DicomParseError(f"pixel data length {got} does not match {d.rows}x{d.columns}x{d.bits_allocated // 8} = {expected}")
    return obj


def read_dicom(path) -> DicomObject:
    with open(path, "rb") as fh:
        return parse_dicom(fh.read())


# ---------------------------------------------------------------- writing


def _pad(value: bytes, vr: str) -> bytes:
    if len(value) % 2 == 0:
        return value
    return value + (b"\x00" if vr in ("UI", "OB", "UN") else b" ")


def _encode_element(tag, el: DataElement, explicit: bool) -> bytes:
    value = el.value if el.undefined_length else _pad(el.value, el.vr)
    length = _UNDEFINED if el.undefined_length else len(value)
    head = struct.pack("<HH", *tag)
    if not explicit:
        return head + struct.pack("<I", length) + value
    vr = el.vr.encode("latin-1")
    if el.vr in LONG_VRS:
        return head + vr + b"\x00\x00" + struct.pack("<I", length) + value
    if length > 0xFFFF:
        raise DicomError(f"value of tag {format_tag(tag)} too long for VR {el.vr}")
    return head + vr + struct.pack("<H", length) + value


def encode_dicom(obj: DicomObject, preamble: bool | None = None) -> bytes:
    """Serialize as Part-10 (explicit-VR file meta, dataset in ``obj.transfer_syntax``)."""
    preamble = obj.has_preamble if preamble is None else preamble
    meta = {t: e for t, e in obj.meta.items() if t != (0x0002, 0x0000)}
    meta.setdefault((0x0002, 0x0001), DataElement("OB", b"\x00\x01"))
    meta[TRANSFER_SYNTAX] = DataElement("UI", _pad(obj.transfer_syntax.encode("ascii"), "UI"))
    body = b"".join(_encode_element(t, e, True) for t, e in sorted(meta.items()))
    group_len = _encode_element((0x0002, 0x0000), DataElement("UL", struct.pack("<I", len(body))), True)
    explicit = obj.transfer_syntax == EXPLICIT_LE
    dataset = b"".join(_encode_element(t, e, explicit) for t, e in obj.elements.items())
    head = (b"\x00" * 128 + b"DICM") if preamble else b""
    return head + group_len + body + dataset
