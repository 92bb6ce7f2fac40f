import pytest

from cxreval.classification import ScoredLabelSet, roc_curve
from cxreval.detection import DetectionRecord, GroundTruthBox, froc_curve
from cxreval.errors import OutputError
from cxreval.model import BBox
from cxreval.svg import emit_curve_svg, read_sidecar


def test_perfect_roc_sidecar(tmp_path):
    curve = roc_curve(ScoredLabelSet([("a", 0.9, True), ("b", 0.2, False)]))
    emit_curve_svg(curve, tmp_path / "roc.svg")
    assert read_sidecar(tmp_path / "roc.svg")["curve"] == [(0.0, 0.0), (0.0, 1.0), (1.0, 1.0)]
    text = (tmp_path / "roc.svg").read_text()
    assert text.startswith("<svg") and text.count('class="curve"') == 1


def test_froc_pass_through(tmp_path):
    dets = [DetectionRecord("i1", "Nodule/Mass", BBox(0, 0, 10, 10), 0.9),
            DetectionRecord("i1", "Nodule/Mass", BBox(40, 40, 50, 50), 0.8),
            DetectionRecord("i2", "Nodule/Mass", BBox(0, 0, 3, 3), 0.7)]
    gts = [GroundTruthBox("i1", "Nodule/Mass", BBox(0, 0, 10, 10)), GroundTruthBox("i2", "Nodule/Mass", BBox(5, 5, 9, 9))]
    curve = froc_curve(dets, gts, "Nodule/Mass", ["i1", "i2", "i3"])
    emit_curve_svg(curve, tmp_path / "froc.svg")
    assert read_sidecar(tmp_path / "froc.svg")["curve"] == list(curve.points)


def test_band_adds_two_polylines(tmp_path):
    curve = roc_curve(ScoredLabelSet([("a", 0.9, True), ("b", 0.2, False), ("c", 0.5, True)]))
    emit_curve_svg(curve, tmp_path / "plain.svg")
    band = ([(0, 0), (1, 0.5)], [(0, 0.5), (1, 1)])
    emit_curve_svg(curve, tmp_path / "band.svg", band=band)
    plain = (tmp_path / "plain.svg").read_text().count("<polyline")
    banded = (tmp_path / "band.svg").read_text().count("<polyline")
    assert banded == plain + 2
    side = read_sidecar(tmp_path / "band.svg")
    assert side["band_lo"] == [(0.0, 0.0), (1.0, 0.5)] and side["band_hi"] == [(0.0, 0.5), (1.0, 1.0)]


def test_unwritable(tmp_path):
    curve = roc_curve(ScoredLabelSet([("a", 0.9, True), ("b", 0.2, False)]))
    with pytest.raises(OutputError, match="nowhere"):
        emit_curve_svg(curve, tmp_path / "nowhere" / "x.svg")
