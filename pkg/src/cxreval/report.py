"""Report documents: JSON (versioned schema), CSV tables and a text summary.

Every numeric cell is ``{"point": p, "lo": l, "hi": h}`` or the string
``"undefined"``. ``lo``/``hi`` are ``null`` when the bootstrap was unstable.
Output is byte-stable: keys keep a fixed order, floats use ``repr`` and no
wall-clock time is written unless ``SOURCE_DATE_EPOCH`` is set.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import os
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Mapping

from . import __version__
from .agreement import (
    AgreementRow,
    AgreementTable,
    DeltaSummary,
    KappaResult,
    MeanRow,
    PairCell,
    TableDelta,
    interpret_kappa,
)
from .bootstrap import Interval
from .classification import METRICS, ClassificationReport
from .detection import DetectionReport
from .errors import DataError

SCHEMA = "cxreval.report/1"
UNDEFINED = "undefined"


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def config_hash(inputs: Mapping[str, str], config: Mapping[str, Any]) -> str:
    blob = json.dumps({"inputs": dict(inputs), "config": dict(config)}, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def metadata(inputs: Mapping[str, os.PathLike | str], config: Mapping[str, Any], seed: int | None = None) -> dict:
    digests = {name: file_digest(p) for name, p in sorted(inputs.items())}
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    generated = None
    if epoch:
        generated = datetime.fromtimestamp(int(epoch), tz=timezone.utc).isoformat()
    return {
        "tool_version": __version__,
        "seed": seed,
        "config_hash": config_hash(digests, config),
        "config": dict(config),
        "inputs": digests,
        "timestamps": {"generated": generated},
    }


def document(kind: str, meta: dict, **sections) -> dict:
    return {"schema": SCHEMA, "kind": kind, "metadata": meta, **sections}


def dumps(doc: Mapping) -> str:
    return json.dumps(doc, indent=2, allow_nan=False) + "\n"


def write_json(doc: Mapping, path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(dumps(doc), encoding="utf-8")


def read_json(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise DataError(f"cannot open: {exc.strerror}", os.fspath(path)) from None
    except json.JSONDecodeError as exc:
        raise DataError(f"invalid JSON: {exc.msg}", os.fspath(path), exc.lineno) from None
    if not isinstance(doc, dict) or doc.get("schema") != SCHEMA:
        raise DataError(f"not a {SCHEMA} document", os.fspath(path))
    return doc


# ---------------------------------------------------------------- cells


def cell(iv: Interval | None) -> dict | str:
    if iv is None:
        return UNDEFINED
    return {"point": iv.point, "lo": iv.lo, "hi": iv.hi}


def cell_interval(c) -> Interval | None:
    if c == UNDEFINED or c is None:
        return None
    return Interval(c["point"], c.get("lo"), c.get("hi"))


def fmt_cell(c) -> str:
    if c == UNDEFINED or c is None:
        return "-"
    if c.get("lo") is None:
        return f"{c['point']:.3f}"
    return f"{c['point']:.3f} ({c['lo']:.3f}, {c['hi']:.3f})"


# ---------------------------------------------------------------- classification


def classification_json(rep: ClassificationReport) -> dict:
    return {
        "labels": list(rep.labels),
        "metrics": list(METRICS),
        "thresholds": {l: rep.thresholds[l] for l in rep.labels},
        "rows": [{"label": l, **{m: cell(rep.rows[l][m]) for m in METRICS}} for l in rep.labels],
        "mean": {m: cell(rep.mean[m]) for m in METRICS},
        "excluded_from_mean": dict(rep.excluded_from_mean),
        "unstable": [list(k) for k in rep.unstable],
        "n_images": rep.n_images,
    }


def classification_csv(section: Mapping) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    metrics = section["metrics"]
    w.writerow(["label", "threshold"] + [f"{m}{s}" for m in metrics for s in ("", "_lo", "_hi")])
    rows = list(section["rows"]) + [{"label": "Mean", **section["mean"]}]
    for r in rows:
        thr = section["thresholds"].get(r["label"], "")
        w.writerow([r["label"], thr] + [v for m in metrics for v in _cell_values(r[m])])
    return buf.getvalue()


def _cell_values(c):
    if c == UNDEFINED:
        return [UNDEFINED, "", ""]
    return [repr(c["point"]), "" if c["lo"] is None else repr(c["lo"]), "" if c["hi"] is None else repr(c["hi"])]


# ---------------------------------------------------------------- detection


def _rate_key(r: float) -> str:
    return repr(float(r))


def detection_json(rep: DetectionReport) -> dict:
    return {
        "rates": list(rep.rates),
        "iou_threshold": rep.iou_threshold,
        "rows": [
            {
                "finding": f,
                "sensitivity": {_rate_key(r): cell(rep.rows[f][r]) for r in rep.rates},
                "froc": cell(rep.froc.get(f)),
            }
            for f in rep.findings
        ],
        "mean": {
            "sensitivity": {_rate_key(r): cell(rep.mean[r]) for r in rep.rates},
            "froc": cell(rep.mean_froc),
        },
        "n_images": rep.n_images,
    }


def detection_csv(section: Mapping) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    keys = [_rate_key(r) for r in section["rates"]]
    w.writerow(["finding"] + [f"sens@{k}{s}" for k in keys for s in ("", "_lo", "_hi")] + ["froc", "froc_lo", "froc_hi"])
    rows = list(section["rows"]) + [{"finding": "Mean", **section["mean"]}]
    for r in rows:
        vals = [v for k in keys for v in _cell_values(r["sensitivity"][k])]
        w.writerow([r["finding"]] + vals + _cell_values(r["froc"]))
    return buf.getvalue()


# ---------------------------------------------------------------- agreement


def _kappa_json(k: KappaResult) -> dict:
    return {
        **cell(k.ci if k.ci is not None else Interval(k.kappa, None, None)),
        "p_o": k.p_o,
        "p_e": k.p_e,
        "degenerate": k.degenerate,
        "band": k.band.value,
    }


def _kappa_from(d: Mapping) -> KappaResult:
    ci = Interval(d["point"], d.get("lo"), d.get("hi"))
    return KappaResult(d["point"], d.get("p_o"), d.get("p_e"), bool(d.get("degenerate", False)), ci)


def _mean_kappa_json(iv: Interval) -> dict:
    return {**cell(iv), "band": interpret_kappa(iv.point).value}


def agreement_table_json(t: AgreementTable) -> dict:
    return {
        "kind": t.kind,
        "labels": list(t.labels),
        "pairs": [list(p) for p in t.pairs],
        "rows": [
            {
                "label": lab,
                "pairs": {
                    pk: {"agreement": cell(c.agreement), "kappa": _kappa_json(c.kappa)}
                    for pk, c in t.rows[lab].pairs.items()
                },
                "fleiss": None if t.rows[lab].fleiss is None else _kappa_json(t.rows[lab].fleiss),
            }
            for lab in t.labels
        ],
        "mean": {
            "pairs": {
                pk: {"agreement": cell(t.mean.agreement[pk]), "kappa": _mean_kappa_json(t.mean.kappa[pk])}
                for pk in t.pair_keys
            },
            "fleiss": None if t.mean.fleiss is None else _mean_kappa_json(t.mean.fleiss),
        },
        "n_images": t.n_images,
    }


def agreement_table_from_json(d: Mapping) -> AgreementTable:
    """Rebuild a table from its JSON form (label rows may be empty)."""
    try:
        pairs = tuple(tuple(p) for p in d["pairs"])
        rows = {}
        for r in d["rows"]:
            cells = {
                pk: PairCell(cell_interval(c["agreement"]), _kappa_from(c["kappa"])) for pk, c in r["pairs"].items()
            }
            rows[r["label"]] = AgreementRow(cells, None if r.get("fleiss") is None else _kappa_from(r["fleiss"]))
        m = d["mean"]
        mean = MeanRow(
            agreement={pk: cell_interval(c.get("agreement")) for pk, c in m["pairs"].items()},
            kappa={pk: cell_interval(c["kappa"]) for pk, c in m["pairs"].items()},
            fleiss=None if m.get("fleiss") is None else cell_interval(m["fleiss"]),
        )
        return AgreementTable(d["kind"], tuple(d["labels"]), pairs, rows, mean, int(d.get("n_images", 0)))
    except (KeyError, TypeError) as exc:
        raise DataError(f"malformed agreement table: missing {exc}") from None


def agreement_csv(section: Mapping) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["site", "table", "label", "pair", "agreement", "kappa", "kappa_lo", "kappa_hi", "band"])
    for site, tables in section["sites"].items():
        for name in ("inter_rater", "model_vs_rater"):
            t = tables.get(name)
            if t is None:
                continue
            for r in t["rows"] + [{"label": "Mean", **t["mean"]}]:
                for pk, c in r["pairs"].items():
                    ag = c["agreement"]
                    k = c["kappa"]
                    w.writerow([site, name, r["label"], pk, "" if ag == UNDEFINED else repr(ag["point"]),
                                repr(k["point"]), "" if k["lo"] is None else repr(k["lo"]),
                                "" if k["hi"] is None else repr(k["hi"]), k["band"]])
                fl = r.get("fleiss")
                if fl is not None:
                    w.writerow([site, name, r["label"], "Fleiss", "", repr(fl["point"]),
                                "" if fl["lo"] is None else repr(fl["lo"]),
                                "" if fl["hi"] is None else repr(fl["hi"]), fl["band"]])
    return buf.getvalue()


# ---------------------------------------------------------------- reader study


def delta_json(d: TableDelta) -> dict:
    return {
        "kind": d.kind,
        "rows": [{"label": lab, "pairs": d.rows[lab], "fleiss": d.fleiss.get(lab)} for lab in d.rows],
        "mean": {"pairs": d.mean_pairs, "fleiss": d.mean_fleiss},
    }


def summary_json(s: DeltaSummary) -> dict:
    return {
        "site_cohen": s.site_cohen,
        "site_fleiss": s.site_fleiss,
        "cohen_by_site": s.cohen_by_site,
        "cohen_by_cell": s.cohen_by_cell,
        "fleiss_mean": s.fleiss_mean,
    }


# ---------------------------------------------------------------- text


def _table(header, rows) -> list[str]:
    widths = [max(len(str(x)) for x in col) for col in zip(header, *rows)]
    line = lambda r: "  ".join(str(x).ljust(w) for x, w in zip(r, widths)).rstrip()
    return [line(header), line(["-" * w for w in widths])] + [line(r) for r in rows]


def _pts(v) -> str:
    return "-" if v is None else f"{v:+.2f}"


def summary_text(doc: Mapping) -> str:
    """Human-readable rendering of any report document."""
    out = [f"# {doc.get('kind', 'report')} (schema {doc.get('schema')})", ""]
    if doc.get("kind") == "consolidated":
        return "\n".join(out) + "\n" + "\n".join(summary_text(d) for d in doc.get("reports", []))
    meta = doc.get("metadata", {})
    if meta:
        out.append(f"seed: {meta.get('seed')}  config hash: {meta.get('config_hash')}")
        out.append("")
    cls = doc.get("classification")
    if cls:
        out.append("## Per-radiograph classification")
        rows = [[r["label"]] + [fmt_cell(r[m]) for m in cls["metrics"]] for r in cls["rows"]]
        rows.append(["Mean"] + [fmt_cell(cls["mean"][m]) for m in cls["metrics"]])
        out += _table(["Label"] + [m.upper() if m != "f1" else "F1" for m in cls["metrics"]], rows) + [""]
    det = doc.get("detection")
    if det:
        out.append("## Lesion detection (sensitivity at FPPI)")
        keys = [_rate_key(r) for r in det["rates"]]
        rows = [[r["finding"]] + [fmt_cell(r["sensitivity"][k]) for k in keys] + [fmt_cell(r["froc"])] for r in det["rows"]]
        rows.append(["Mean"] + [fmt_cell(det["mean"]["sensitivity"][k]) for k in keys] + [fmt_cell(det["mean"]["froc"])])
        out += _table(["Finding"] + [f"@{k}" for k in keys] + ["FROC"], rows) + [""]
    ag = doc.get("agreement")
    if ag:
        for site, tables in ag["sites"].items():
            for name in ("inter_rater", "model_vs_rater"):
                t = tables.get(name)
                if t is None:
                    continue
                out.append(f"## Agreement ({name.replace('_', ' ')}), site {site or '-'}, session {ag.get('session')}")
                pks = list(t["mean"]["pairs"])
                hdr = ["Finding"] + [x for pk in pks for x in (f"{pk} agree", "kappa")]
                if name == "inter_rater":
                    hdr.append("Fleiss")
                rows = []
                for r in t["rows"] + [{"label": "Mean", **t["mean"]}]:
                    row = [r["label"]]
                    for pk in pks:
                        c = r["pairs"][pk]
                        row += [fmt_cell(c["agreement"]).split(" ")[0], fmt_cell(c["kappa"])]
                    if name == "inter_rater":
                        row.append(fmt_cell(r.get("fleiss")))
                    rows.append(row)
                out += _table(hdr, rows) + [""]
    rs = doc.get("reader_study")
    if rs:
        out.append("## Reader study: kappa change after assistance (points)")
        for name, s in rs["summary"].items():
            out.append(
                f"{name}: mean Fleiss delta {_pts(s['fleiss_mean'])}, "
                f"mean Cohen delta by site {_pts(s['cohen_by_site'])}, by cell {_pts(s['cohen_by_cell'])}"
            )
        out.append("")
    return "\n".join(out) + "\n"


def reader_study_csv(section: Mapping) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["site", "table", "label", "column", "delta_points"])
    for site, tables in section["sites"].items():
        for name, d in tables.items():
            if d is None:
                continue
            for r in d["rows"] + [{"label": "Mean", **d["mean"]}]:
                for pk, v in r["pairs"].items():
                    w.writerow([site, name, r["label"], pk, repr(v)])
                if r.get("fleiss") is not None:
                    w.writerow([site, name, r["label"], "Fleiss", repr(r["fleiss"])])
    return buf.getvalue()


CSV_RENDERERS = {
    "classification": classification_csv,
    "detection": detection_csv,
    "agreement": agreement_csv,
    "reader_study": reader_study_csv,
}
