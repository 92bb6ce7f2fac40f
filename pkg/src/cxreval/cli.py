"""Evaluate chest radiograph models and reader agreement.

Usage: ``cxr-eval <command> ...``.

Exit status: 0 on success, 1 on a data or validation error (message on
standard error), 2 on a usage error.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import re
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from . import report as rp
from .agreement import agreement_table, model_vs_rater_table, reader_study_delta, summarize_deltas
from .bootstrap import BootstrapConfig
from .classification import ScoredLabelSet, per_label_classification_report, roc_band, roc_curve
from .detection import DEFAULT_FPPI, DEFAULT_IOU, per_finding_detection_report
from .dicom import decode_pixels, deidentify, encode_dicom, export_png, preprocess, read_dicom, write_tensor
from .errors import CxrEvalError, DataError, OutputError, StructureMismatch
from .io import ground_truth_boxes, load_annotations, load_predictions
from .model import AI_RATER, Session, reference_standard
from .svg import emit_curve_svg
from .taxonomy import AGREEMENT_LABELS, CLASSIFICATION_LABELS, DETECTION_FINDINGS, NO_FINDING

SEED_ENV = "CXR_EVAL_SEED"
_U64 = (1 << 64) - 1


class UsageError(Exception):
    pass


# ---------------------------------------------------------------- argument types


def _u64(text: str) -> int:
    try:
        v = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if not 0 <= v <= _U64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _positive(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def _float_list(text: str) -> list[float]:
    try:
        vals = [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None
    if not vals or any(not np.isfinite(v) or v <= 0 for v in vals) or vals != sorted(set(vals)):
        raise argparse.ArgumentTypeError("rates must be finite positive values in increasing order")
    return vals


def _label_list(text: str) -> list[str]:
    return [x.strip() for x in text.split(",") if x.strip()]


def _resolve_seed(arg: int | None) -> int:
    if arg is not None:
        return arg
    env = os.environ.get(SEED_ENV)
    if env is None or env == "":
        return 0
    try:
        return _u64(env)
    except argparse.ArgumentTypeError as exc:
        raise UsageError(f"{SEED_ENV}: {exc}") from None


def _config(args) -> BootstrapConfig:
    return BootstrapConfig(replications=args.bootstrap, seed=_resolve_seed(args.seed), level=args.level, workers=args.workers)


def _slug(name: str) -> str:
    return re.sub(r"[^a-z0-9]+", "_", name.lower()).strip("_")


def _bootstrap_flags(p):
    p.add_argument("--bootstrap", type=_positive, default=10_000, metavar="N", help="bootstrap replications")
    p.add_argument("--seed", type=_u64, default=None, help=f"u64 seed (default ${SEED_ENV}, else 0)")
    p.add_argument("--level", type=float, default=95.0, help="interval level in percent")
    p.add_argument("--workers", type=_positive, default=1, help="bootstrap worker threads")


def _boot_meta(cfg: BootstrapConfig) -> dict:
    return {"replications": cfg.replications, "seed": cfg.seed, "level": cfg.level}


# ---------------------------------------------------------------- ingest


def _ingest_one(src: Path, out: Path, png: bool, tensor: bool, deid: bool) -> str:
    obj = read_dicom(src)
    if deid:
        obj = deidentify(obj)
    stem = out / src.stem
    try:
        Path(f"{stem}.dcm").write_bytes(encode_dicom(obj))
    except OSError as exc:
        raise OutputError(f"{stem}.dcm", exc.strerror or exc) from exc
    if png or tensor:
        img = decode_pixels(obj)
        if png:
            export_png(img, f"{stem}.png")
        if tensor:
            write_tensor(preprocess(img), f"{stem}.cxrt")
    return "ok"


def cmd_ingest(args) -> int:
    src_dir, out_dir = Path(args.in_dir), Path(args.out)
    if not src_dir.is_dir():
        raise DataError("input directory does not exist", os.fspath(src_dir))
    out_dir.mkdir(parents=True, exist_ok=True)
    files = sorted(p for p in src_dir.iterdir() if p.is_file())

    def run(p):
        try:
            return p, _ingest_one(p, out_dir, args.png, args.tensor, not args.no_deid)
        except CxrEvalError as exc:
            return p, f"error: {exc}"

    with ThreadPoolExecutor(max_workers=args.workers) as pool:
        results = list(pool.map(run, files))
    failed = 0
    with open(out_dir / "ingest_log.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["file", "status"])
        for p, status in results:
            w.writerow([p.name, status])
            print(f"{p.name}: {status}")
            failed += status != "ok"
    print(f"{len(results) - failed} ingested, {failed} failed")
    return 1 if failed else 0


# ---------------------------------------------------------------- classify-eval


def _load_thresholds(path) -> dict[str, float]:
    path = os.fspath(path)
    if path.lower().endswith(".json"):
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except OSError as exc:
            raise DataError(f"cannot open: {exc.strerror}", path) from None
        except json.JSONDecodeError as exc:
            raise DataError(f"invalid JSON: {exc.msg}", path, exc.lineno) from None
        if not isinstance(data, dict):
            raise DataError("thresholds JSON must be an object of label -> threshold", path)
        items = list(data.items())
    else:
        try:
            with open(path, newline="", encoding="utf-8-sig") as fh:
                items = [(r["label"], r["threshold"]) for r in csv.DictReader(fh)]
        except OSError as exc:
            raise DataError(f"cannot open: {exc.strerror}", path) from None
        except KeyError:
            raise DataError("thresholds CSV needs columns label,threshold", path, 1) from None
    out = {}
    for label, value in items:
        try:
            out[label] = float(value)
        except (TypeError, ValueError):
            raise DataError(f"threshold for {label!r} is not a number", path) from None
    return out


def _truth(gt_path, quorum):
    reads = [r for r in load_annotations(gt_path) if r.rater_id != AI_RATER]
    try:
        return reference_standard(reads, quorum)
    except ValueError as exc:
        raise DataError(str(exc), os.fspath(gt_path)) from None


def cmd_classify(args) -> int:
    cfg = _config(args)
    labels = args.labels or list(CLASSIFICATION_LABELS)
    truth = _truth(args.gt, args.quorum)
    pred = load_predictions(args.pred)
    extra = sorted(set(pred.image_ids) - set(truth))
    if extra:
        raise DataError(f"predictions for images without reference labels: {extra[:5]}", os.fspath(args.pred))
    scores = pred.image_scores(labels, truth)
    policy = _load_thresholds(args.thresholds) if args.thresholds else "youden"
    rep = per_label_classification_report(scores, truth, policy, labels, cfg)

    inputs = {"pred": args.pred, "gt": args.gt}
    if args.thresholds:
        inputs["thresholds"] = args.thresholds
    config = {
        "command": "classify-eval",
        "bootstrap": _boot_meta(cfg),
        "resampling_unit": "image",
        "threshold_policy": "file" if args.thresholds else "youden",
        "labels": list(labels),
        "quorum": args.quorum,
    }
    doc = rp.document("classification", rp.metadata(inputs, config, cfg.seed), classification=rp.classification_json(rep))
    rp.write_json(doc, args.out)

    if args.roc_svg:
        out = Path(args.roc_svg)
        out.mkdir(parents=True, exist_ok=True)
        grid = np.linspace(0.0, 1.0, 101)
        for lab in labels:
            col = ScoredLabelSet.from_arrays(
                [scores[i][lab] for i in sorted(truth)], [lab in truth[i] for i in sorted(truth)], sorted(truth)
            )
            if not (col.n_pos and col.n_neg):
                print(f"skipping ROC for {lab}: one class only", file=sys.stderr)
                continue
            lo, hi = roc_band(col, grid, cfg)
            band = (list(zip(grid.tolist(), lo)), list(zip(grid.tolist(), hi)))
            emit_curve_svg(roc_curve(col, label=lab), out / f"roc_{_slug(lab)}.svg", band)
    return 0


# ---------------------------------------------------------------- froc


def cmd_froc(args) -> int:
    cfg = _config(args)
    reads = [r for r in load_annotations(args.gt) if r.rater_id != AI_RATER]
    if args.gt_rater:
        reads = [r for r in reads if r.rater_id == args.gt_rater]
    gts = ground_truth_boxes(reads, args.gt_rater)
    images = sorted({r.image_id for r in reads})
    pred = load_predictions(args.pred)
    extra = sorted({d.image_id for d in pred.detections} - set(images))
    if extra:
        raise DataError(f"detections for images without ground truth: {extra[:5]}", os.fspath(args.pred))
    findings = tuple(args.findings) if args.findings else DETECTION_FINDINGS + (NO_FINDING,)
    rep = per_finding_detection_report(pred.detections, gts, images, findings, args.fppi, args.iou, cfg)

    config = {
        "command": "froc",
        "bootstrap": _boot_meta(cfg),
        "resampling_unit": "image",
        "iou_threshold": args.iou,
        "fppi": list(args.fppi),
        "findings": list(findings),
        "gt_rater": args.gt_rater,
    }
    doc = rp.document("detection", rp.metadata({"pred": args.pred, "gt": args.gt}, config, cfg.seed),
                      detection=rp.detection_json(rep))
    rp.write_json(doc, args.out)

    if args.froc_svg:
        out = Path(args.froc_svg)
        out.mkdir(parents=True, exist_ok=True)
        for f, curve in rep.curves.items():
            emit_curve_svg(curve, out / f"froc_{_slug(f)}.svg")
    return 0


# ---------------------------------------------------------------- agreement


def cmd_agreement(args) -> int:
    cfg = _config(args)
    labels = args.labels or list(AGREEMENT_LABELS)
    session = Session(args.session)
    reads = load_annotations(args.reads)
    sites = sorted({r.site for r in reads if r.session == session})
    if not sites:
        raise DataError(f"no {session.value} reads", os.fspath(args.reads))
    out = {}
    for site in sites:
        human = [r for r in reads if r.site == site and r.session == session and r.rater_id != AI_RATER]
        images = {r.image_id for r in human}
        model = [r for r in reads if r.rater_id == AI_RATER and r.image_id in images]
        tables = {"inter_rater": None, "model_vs_rater": None}
        if len({r.rater_id for r in human}) >= 2:
            tables["inter_rater"] = rp.agreement_table_json(agreement_table(human, labels, cfg))
        if model:
            tables["model_vs_rater"] = rp.agreement_table_json(model_vs_rater_table(model, human, labels, cfg))
        out[site] = tables
    config = {"command": "agreement", "bootstrap": _boot_meta(cfg), "resampling_unit": "image",
              "session": session.value, "labels": list(labels)}
    doc = rp.document("agreement", rp.metadata({"reads": args.reads}, config, cfg.seed),
                      agreement={"session": session.value, "sites": out})
    rp.write_json(doc, args.out)
    return 0


# ---------------------------------------------------------------- reader-study


def cmd_reader_study(args) -> int:
    before, after = rp.read_json(args.before), rp.read_json(args.after)
    for name, d in (("before", before), ("after", after)):
        if "agreement" not in d:
            raise DataError("not an agreement report", os.fspath(getattr(args, name)))
    b_sites, a_sites = before["agreement"]["sites"], after["agreement"]["sites"]
    if sorted(b_sites) != sorted(a_sites):
        raise StructureMismatch(f"sites differ: {sorted(b_sites)} vs {sorted(a_sites)}")
    sites, per_kind = {}, {"inter_rater": {}, "model_vs_rater": {}}
    for site in sorted(b_sites):
        sites[site] = {}
        for kind in per_kind:
            tb, ta = b_sites[site].get(kind), a_sites[site].get(kind)
            if (tb is None) != (ta is None):
                raise StructureMismatch(f"site {site!r}: {kind} table present in only one session")
            if tb is None:
                sites[site][kind] = None
                continue
            delta = reader_study_delta(rp.agreement_table_from_json(tb), rp.agreement_table_from_json(ta))
            sites[site][kind] = rp.delta_json(delta)
            per_kind[kind][site] = delta
    summary = {k: rp.summary_json(summarize_deltas(v)) for k, v in per_kind.items()}
    config = {"command": "reader-study"}
    doc = rp.document("reader_study", rp.metadata({"before": args.before, "after": args.after}, config),
                      reader_study={"units": "kappa points x 100", "sites": sites, "summary": summary})
    rp.write_json(doc, args.out)
    return 0


# ---------------------------------------------------------------- report


def cmd_report(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    docs, inputs = [], {}
    for i, path in enumerate(args.inputs):
        doc = rp.read_json(path)
        docs.append(doc)
        inputs[f"{i:02d}_{Path(path).name}"] = path
        stem = f"{i:02d}_{_slug(Path(path).stem)}"
        for section, render in rp.CSV_RENDERERS.items():
            if section in doc:
                (out / f"{stem}.{section}.csv").write_text(render(doc[section]), encoding="utf-8")
    merged = rp.document("consolidated", rp.metadata(inputs, {"command": "report"}), reports=docs)
    rp.write_json(merged, out / "report.json")
    text = rp.summary_text(merged)
    (out / "summary.txt").write_text(text, encoding="utf-8")
    print(text, end="")
    return 0


# ---------------------------------------------------------------- parser


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="cxr-eval", description=__doc__.splitlines()[0])

    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("ingest", help="de-identify a directory of DICOM files, optionally exporting model inputs")
    s.add_argument("--in", dest="in_dir", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--png", action="store_true", help="also write 8-bit PNGs")
    s.add_argument("--tensor", action="store_true", help="also write model-input tensors (.cxrt)")
    s.add_argument("--no-deid", action="store_true", help="keep identifying tags")
    s.add_argument("--workers", type=_positive, default=1)
    s.set_defaults(func=cmd_ingest)

    s = sub.add_parser("classify-eval", help="per-label classification report")
    s.add_argument("--pred", required=True)
    s.add_argument("--gt", required=True, help="annotation CSV; reference = majority of readers")
    g = s.add_mutually_exclusive_group()
    g.add_argument("--thresholds", help="JSON object or CSV label,threshold")
    g.add_argument("--youden", action="store_true", help="Youden-optimal thresholds (default)")
    s.add_argument("--labels", type=_label_list, default=None)
    s.add_argument("--quorum", type=_positive, default=None, help="odd panel size (default: per image)")
    s.add_argument("--out", required=True)
    s.add_argument("--roc-svg", default=None, metavar="DIR")
    _bootstrap_flags(s)
    s.set_defaults(func=cmd_classify)

    s = sub.add_parser("froc", help="per-finding lesion detection report")
    s.add_argument("--pred", required=True)
    s.add_argument("--gt", required=True, help="annotation CSV with ground-truth boxes")
    s.add_argument("--gt-rater", default=None, help="use only this reader's boxes")
    s.add_argument("--iou", type=float, default=DEFAULT_IOU)
    s.add_argument("--fppi", type=_float_list, default=list(DEFAULT_FPPI))
    s.add_argument("--findings", type=_label_list, default=None)
    s.add_argument("--out", required=True)
    s.add_argument("--froc-svg", default=None, metavar="DIR")
    _bootstrap_flags(s)
    s.set_defaults(func=cmd_froc)

    s = sub.add_parser("agreement", help="inter-rater and model-vs-rater agreement tables per site")
    s.add_argument("--reads", required=True)
    s.add_argument("--session", required=True, choices=[Session.UNASSISTED.value, Session.ASSISTED.value])
    s.add_argument("--labels", type=_label_list, default=None)
    s.add_argument("--out", required=True)
    _bootstrap_flags(s)
    s.set_defaults(func=cmd_agreement)

    s = sub.add_parser("reader-study", help="kappa change between two agreement reports")
    s.add_argument("--before", required=True)
    s.add_argument("--after", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_reader_study)

    s = sub.add_parser("report", help="consolidate reports and render CSV tables plus a text summary")
    s.add_argument("--inputs", nargs="+", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if getattr(args, "iou", None) is not None and not 0.0 <= args.iou < 1.0:
            raise UsageError("--iou must lie in [0, 1)")
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except SystemExit as exc:  # --help / --version
        return exc.code if isinstance(exc.code, int) else 0
    except (CxrEvalError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
