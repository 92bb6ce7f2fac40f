"""Synthetic golden dataset with planted metric values.

Scores and reads are built by inverting the metric definitions, so every
planted metric value is known exactly (as
fractions) before any evaluation code runs. ``python -m cxreval.synth DIR``
writes::

    labels.csv   three-reader panel whose majority is the planted truth
    boxes.csv    ground-truth boxes (reader "GT") for the detection task
    pred.csv     image-level scores plus box detections
    reads.csv    two sites x two sessions of three readers, plus model reads
    planted.json the planted values, as "num/den" strings
"""

from __future__ import annotations

import argparse
import itertools
import json
from fractions import Fraction
from pathlib import Path

import numpy as np

from .detection import DEFAULT_FPPI, DetectionRecord
from .io import Predictions, write_annotations, write_predictions
from .model import AI_RATER, BBox, RaterRead, Session
from .taxonomy import CLASSIFICATION_LABELS, NO_FINDING, lookup

N_IMAGES = 200
N_ABNORMAL = 120
PLANTED_AUROC = {
    "Pleural Effusion": 0.989,
    "Lung Tumor": 0.978,
    "Pneumonia": 0.969,
    "Tuberculosis": 0.975,
    "Other Diseases": 0.920,
    NO_FINDING: 0.972,
}
PE_BOX = BBox(100.0, 600.0, 400.0, 900.0)

# finding -> (boxes, top hits, low hits); 75 high and 300 low false positives each
DETECTION_PLAN = {
    "Cardiomegaly": (30, 20, 6),
    "Nodule/Mass": (40, 18, 10),
    "Aortic Enlargement": (25, 15, 5),
    "Lung Opacity": (35, 12, 12),
}
FP_HIGH, FP_LOW = 75, 300

AGREEMENT_SITE_RATERS = {"SiteA": ("R1", "R2", "R3"), "SiteB": ("R4", "R5", "R6")}
AGREEMENT_LABELS_SYN = ("Lung Tumor", "Pneumonia", "Tuberculosis", "Other Diseases")
AGREEMENT_TABLE_LABELS = AGREEMENT_LABELS_SYN + (NO_FINDING,)
SITE_IMAGES = 200
MARGINAL = 50
AI_FLIPS = (8, 11, 14, 9)


def frac(x: Fraction) -> str:
    return f"{x.numerator}/{x.denominator}"


def kappa_from_overlap(a: int, n: int = SITE_IMAGES, m: int = MARGINAL) -> Fraction:
    """Cohen's kappa of two raters with ``m`` positives each and ``a`` shared positives."""
    p_o = Fraction(n - 2 * m + 2 * a, n)
    p_e = Fraction(m, n) ** 2 + Fraction(n - m, n) ** 2
    return (p_o - p_e) / (1 - p_e)


def overlap_for_kappa(kappa: Fraction, n: int = SITE_IMAGES, m: int = MARGINAL) -> int:
    """Inverse of :func:`kappa_from_overlap`; ``kappa`` must be attainable."""
    p_e = Fraction(m, n) ** 2 + Fraction(n - m, n) ** 2
    p_o = p_e + kappa * (1 - p_e)
    a = (p_o * n - n + 2 * m) / 2
    if a.denominator != 1 or not 0 <= a <= m:
        raise ValueError(f"kappa {kappa} is not attainable with n={n}, m={m}")
    return int(a)


def _cohen(a: np.ndarray, b: np.ndarray) -> Fraction:
    n = len(a)
    p_o = Fraction(int(np.sum(a == b)), n)
    pa, pb = Fraction(int(a.sum()), n), Fraction(int(b.sum()), n)
    p_e = pa * pb + (1 - pa) * (1 - pb)
    if p_e == 1:
        return Fraction(1 if p_o == 1 else 0)
    return (p_o - p_e) / (1 - p_e)


def _fleiss(votes: np.ndarray) -> Fraction:
    """Definitional Fleiss' kappa; ``votes`` is units x raters booleans."""
    N, n = votes.shape
    pos = votes.sum(axis=1).astype(int)
    counts = [(int(p), n - int(p)) for p in pos]
    P_i = [Fraction(sum(c * c for c in row) - n, n * (n - 1)) for row in counts]
    P_bar = sum(P_i, Fraction(0)) / N
    p_j = [Fraction(sum(row[j] for row in counts), N * n) for j in range(2)]
    P_e = sum(p * p for p in p_j)
    if P_e == 1:
        return Fraction(1 if P_bar == 1 else 0)
    return (P_bar - P_e) / (1 - P_e)


def three_rater_patterns(a12: int, a13: int, a23: int, n: int = SITE_IMAGES, m: int = MARGINAL) -> np.ndarray:
    """n x 3 presence matrix with marginals m and the given pairwise overlaps."""
    t = max(0, a12 + a13 - m, a12 + a23 - m, a13 + a23 - m)
    counts = {
        (1, 1, 1): t,
        (1, 1, 0): a12 - t,
        (1, 0, 1): a13 - t,
        (0, 1, 1): a23 - t,
        (1, 0, 0): m - a12 - a13 + t,
        (0, 1, 0): m - a12 - a23 + t,
        (0, 0, 1): m - a13 - a23 + t,
    }
    counts[(0, 0, 0)] = n - sum(counts.values())
    if min(counts.values()) < 0:
        raise ValueError(f"overlaps {(a12, a13, a23)} are infeasible")
    rows = [p for p, c in sorted(counts.items()) for _ in range(c)]
    return np.array(rows, dtype=bool)


# ---------------------------------------------------------------- classification


def _planted_scores(truth: np.ndarray, auc: float) -> tuple[np.ndarray, Fraction]:
    """Scores in (0, 1) whose AUROC against ``truth`` is the nearest multiple of 1/(2PN).

    Negative j sits at (2j+2)/(2N+3). A positive contributing k wins sits
    just above negative k-1; one contributing k + 1/2 ties negative k.
    """
    P, N = int(truth.sum()), int((~truth).sum())
    twice_u = round(2 * auc * P * N)
    base, extra = divmod(twice_u, P)  # per-positive contribution in half-units
    halves = [base + (1 if i < extra else 0) for i in range(P)]
    neg = [(2 * j + 2) / (2 * N + 3) for j in range(N)]
    pos = []
    for h in halves:
        k, half = divmod(h, 2)
        pos.append(neg[k] if half else (2 * k + 1) / (2 * N + 3))
    scores = np.empty(len(truth))
    scores[~truth] = neg
    scores[truth] = pos
    return scores, Fraction(twice_u, 2 * P * N)


def _class_truth(rng) -> dict[str, np.ndarray]:
    diseases = [l for l in CLASSIFICATION_LABELS if l != NO_FINDING]
    mat = np.zeros((N_IMAGES, len(diseases)), dtype=bool)
    mat[:N_ABNORMAL] = rng.random((N_ABNORMAL, len(diseases))) < 0.35
    for i in range(N_ABNORMAL):
        if not mat[i].any():
            mat[i, i % len(diseases)] = True
    truth = {l: mat[:, j] for j, l in enumerate(diseases)}
    truth[NO_FINDING] = ~mat.any(axis=1)
    return truth


def _image_ids(prefix: str, n: int) -> list[str]:
    return [f"{prefix}{i:04d}" for i in range(n)]


def _read(image_id, rater, labels, session=Session.UNASSISTED, site="", boxes=None) -> RaterRead:
    glob, finds = set(), []
    for name in labels:
        cls = lookup(name)
        if cls.is_local:
            finds.append((cls, (boxes or {}).get(name, PE_BOX)))
        else:
            glob.add(cls)
    if not glob and not finds:
        glob.add(lookup(NO_FINDING))
    return RaterRead(image_id, rater, session, frozenset(glob), tuple(finds), site)


def _panel(truth, ids, rng) -> list[RaterRead]:
    """Three readers; positives lose at most one vote, negatives gain at most one."""
    diseases = [l for l in CLASSIFICATION_LABELS if l != NO_FINDING]
    reads = []
    for i, img in enumerate(ids):
        marks = [set() for _ in range(3)]
        for j, l in enumerate(diseases):
            if truth[l][i]:
                drop = (i + j) % 3 if rng.random() < 0.3 else None
                for k in range(3):
                    if k != drop:
                        marks[k].add(l)
        noisy = int(rng.integers(0, 3)) if rng.random() < 0.2 else None
        if noisy is not None:
            marks[noisy].add(diseases[int(rng.integers(0, len(diseases)))])
        reads += [_read(img, f"P{k + 1}", marks[k]) for k in range(3)]
    return reads


# ---------------------------------------------------------------- detection


def _shift(b: BBox, d: float) -> BBox:
    return BBox(b.x_min + d, b.y_min + d, b.x_max + d, b.y_max + d)


def _detection_plan(ids, truth, rng):
    """Ground-truth boxes and detections with planted sensitivity at each FPPI."""
    gt_boxes: dict[str, dict[str, list[BBox]]] = {img: {} for img in ids}
    for i, img in enumerate(ids):
        if truth["Pleural Effusion"][i]:
            gt_boxes[img]["Pleural Effusion"] = [PE_BOX]
    dets: list[DetectionRecord] = []
    planted = {}
    for f_idx, (finding, (n_boxes, top, low)) in enumerate(DETECTION_PLAN.items()):
        chosen = sorted(rng.choice(len(ids), size=n_boxes, replace=False).tolist())
        slots = []
        for k, i in enumerate(chosen):
            b = BBox(500.0 + 40 * f_idx, 500.0 + 3 * k, 600.0 + 40 * f_idx, 600.0 + 3 * k)
            gt_boxes[ids[i]].setdefault(finding, []).append(b)
            slots.append((ids[i], b))
        order = rng.permutation(len(slots))
        for rank, s in enumerate(order[: top + low]):
            img, b = slots[s]
            score = 0.9 if rank < top else 0.3
            dets.append(DetectionRecord(img, finding, _shift(b, 2.0), score))
        for k in range(FP_HIGH + FP_LOW):
            img = ids[int(rng.integers(0, len(ids)))]
            fp = BBox(10.0 + 60 * f_idx, 10.0, 50.0 + 60 * f_idx, 50.0)
            dets.append(DetectionRecord(img, finding, fp, 0.7 if k < FP_HIGH else 0.1))
        n = len(ids)
        sens = {}
        for r in DEFAULT_FPPI:
            # sweep points: (0, top), (FP_HIGH/n, top), (FP_HIGH/n, top+low), ((FP_HIGH+FP_LOW)/n, top+low)
            hits = top if Fraction(FP_HIGH, n) > Fraction(r).limit_denominator() else top + low
            sens[repr(float(r))] = Fraction(hits, n_boxes)
        planted[finding] = sens
    return gt_boxes, dets, planted


# ---------------------------------------------------------------- agreement


def _session_overlaps(site_idx: int, label_idx: int, session: Session) -> tuple[int, int, int]:
    base = 30 + 2 * site_idx + label_idx
    bump = 2 + label_idx % 2 if session is Session.ASSISTED else 0
    return (base + bump, base + 1 + bump, base - 2 + bump)


def _agreement_reads(rng):
    reads: list[RaterRead] = []
    planted = {s.value: {} for s in (Session.UNASSISTED, Session.ASSISTED)}
    for s_idx, (site, raters) in enumerate(AGREEMENT_SITE_RATERS.items()):
        ids = _image_ids(f"{site}-", SITE_IMAGES)
        # one image order per label, shared by both sessions, keeps reads aligned across sessions
        perms = [rng.permutation(SITE_IMAGES) for _ in AGREEMENT_LABELS_SYN]
        votes: dict[Session, np.ndarray] = {}
        for session in (Session.UNASSISTED, Session.ASSISTED):
            cube = np.zeros((SITE_IMAGES, 3, len(AGREEMENT_LABELS_SYN)), dtype=bool)
            for j, perm in enumerate(perms):
                cube[:, :, j] = three_rater_patterns(*_session_overlaps(s_idx, j, session))[perm]
            votes[session] = cube
        # model: reader 1's unassisted marks with f positives and f negatives flipped
        ai = votes[Session.UNASSISTED][:, 0, :].copy()
        for j, f in enumerate(AI_FLIPS):
            col = ai[:, j]
            pos, neg = np.flatnonzero(col), np.flatnonzero(~col)
            col[rng.choice(pos, f, replace=False)] = False
            col[rng.choice(neg, f, replace=False)] = True
        for i, img in enumerate(ids):
            reads.append(_read(img, AI_RATER, [l for j, l in enumerate(AGREEMENT_LABELS_SYN) if ai[i, j]],
                               Session.MODEL, site))
        for session, cube in votes.items():
            for i, img in enumerate(ids):
                for k, r in enumerate(raters):
                    labs = [l for j, l in enumerate(AGREEMENT_LABELS_SYN) if cube[i, k, j]]
                    reads.append(_read(img, r, labs, session, site))
            planted[session.value][site] = _planted_tables(cube, ai, raters)
    return reads, planted


def _with_no_finding(m: np.ndarray) -> np.ndarray:
    """Append the derived No Finding column (no other label marked)."""
    return np.concatenate([m, ~m.any(axis=-1, keepdims=True)], axis=-1)


def _planted_tables(cube, ai, raters):
    cube = _with_no_finding(cube)
    ai = _with_no_finding(ai)
    inter, model = {}, {}
    for j, lab in enumerate(AGREEMENT_TABLE_LABELS):
        row = {}
        for (ka, a), (kb, b) in itertools.combinations(enumerate(raters), 2):
            row[f"{a} vs {b}"] = frac(_cohen(cube[:, ka, j], cube[:, kb, j]))
        row["fleiss"] = frac(_fleiss(cube[:, :, j]))
        inter[lab] = row
        model[lab] = {f"{r} vs {AI_RATER}": frac(_cohen(cube[:, k, j], ai[:, j])) for k, r in enumerate(raters)}
    return {"inter_rater": inter, "model_vs_rater": model}


# ---------------------------------------------------------------- driver


def generate(out_dir, seed: int = 2021) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    ids = _image_ids("img", N_IMAGES)
    truth = _class_truth(rng)

    write_annotations(_panel(truth, ids, rng), out / "labels.csv", with_session=False)

    pred = Predictions()
    planted_auc = {}
    for lab in CLASSIFICATION_LABELS:
        scores, auc = _planted_scores(truth[lab], PLANTED_AUROC[lab])
        planted_auc[lab] = frac(auc)
        for i, img in enumerate(ids):
            if lab == "Pleural Effusion":
                pred.detections.append(DetectionRecord(img, lab, PE_BOX, float(scores[i])))
            else:
                pred.scores.setdefault(img, {})[lab] = float(scores[i])

    gt_boxes, dets, planted_det = _detection_plan(ids, truth, rng)
    pred.detections.extend(dets)
    write_predictions(pred, out / "pred.csv")
    gt_reads = []
    for img in ids:
        labels = sorted(gt_boxes[img])
        finds = tuple((lookup(l), b) for l in labels for b in gt_boxes[img][l])
        glob = frozenset() if finds else frozenset({lookup(NO_FINDING)})
        gt_reads.append(RaterRead(img, "GT", Session.UNASSISTED, glob, finds))
    write_annotations(gt_reads, out / "boxes.csv", with_session=False)

    reads, planted_kappa = _agreement_reads(rng)
    write_annotations(reads, out / "reads.csv", with_session=True)

    planted = {
        "seed": seed,
        "classification": {"auroc": planted_auc},
        "detection": {"sensitivity": {f: {r: frac(v) for r, v in s.items()} for f, s in planted_det.items()}},
        "agreement": planted_kappa,
        "agreement_labels": list(AGREEMENT_TABLE_LABELS),
    }
    (out / "planted.json").write_text(json.dumps(planted, indent=2) + "\n", encoding="utf-8")
    return planted


def main(argv=None) -> int:
    p = argparse.ArgumentParser(prog="python -m cxreval.synth", description="Write the synthetic golden dataset.")
    p.add_argument("out_dir")
    p.add_argument("--seed", type=int, default=2021)
    args = p.parse_args(argv)
    generate(args.out_dir, args.seed)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
