"""Quantitative evaluation: SAR, detection counting, hold-out distance error."""

import json
from dataclasses import dataclass

import numpy as np

from .errors import EmptyGroundTruthError, TooFewLandmarksError
from .registration import map_point


@dataclass
class SegmentationScore:
    per_fold_sar: list
    tp: int
    fp: int
    fn: int

    @property
    def sensitivity(self):
        return self.tp / (self.tp + self.fn) if (self.tp + self.fn) else 0.0

    @property
    def mean_sar(self):
        return float(np.mean(self.per_fold_sar)) if self.per_fold_sar else 0.0

    def to_dict(self):
        return {
            "TP": self.tp, "FP": self.fp, "FN": self.fn,
            "sensitivity": self.sensitivity,
            "mean_sar": self.mean_sar,
            "per_fold_sar": [float(x) for x in self.per_fold_sar],
        }


@dataclass
class DistanceErrorReport:
    n_control: int
    n_heldout: int
    errors: np.ndarray
    seed: int

    @property
    def mean(self):
        return float(self.errors.mean()) if self.errors.size else 0.0

    @property
    def median(self):
        return float(np.median(self.errors)) if self.errors.size else 0.0

    @property
    def max(self):
        return float(self.errors.max()) if self.errors.size else 0.0

    def to_dict(self):
        return {
            "n_control": self.n_control, "n_heldout": self.n_heldout,
            "seed": self.seed, "mean_mm": self.mean, "median_mm": self.median,
            "max_mm": self.max, "errors_mm": [float(x) for x in self.errors],
        }


def sar(ground_truth, detected, mesh):
    """Segmented-area ratio: intersection area over union area."""
    gt = set(int(f) for f in np.asarray(ground_truth).ravel())
    if not gt:
        raise EmptyGroundTruthError("ground-truth face set is empty")
    det = set(int(f) for f in np.asarray(detected).ravel())
    areas = mesh.face_areas
    inter = areas[sorted(gt & det)].sum() if gt & det else 0.0
    union = areas[sorted(gt | det)].sum()
    return float(inter / union)


def score_detection(ground_truth_folds, detected_folds, mesh, min_overlap=0.5):
    """Greedy one-to-one matching by descending overlap area.

    A truth fold counts as detected when its matched detection covers more
    than ``min_overlap`` of its area; unmatched detections are false
    positives, unmatched truths false negatives. SAR is averaged over true
    positives.
    """
    areas = mesh.face_areas
    gt_sets = [set(int(f) for f in np.asarray(g).ravel())
               for g in ground_truth_folds]
    det_sets = [set(int(f) for f in np.asarray(d).ravel())
                for d in detected_folds]
    overlaps = []
    for i, g in enumerate(gt_sets):
        for j, d in enumerate(det_sets):
            inter = g & d
            if inter:
                overlaps.append((float(areas[sorted(inter)].sum()), i, j))
    overlaps.sort(key=lambda x: (-x[0], x[1], x[2]))

    matched_gt = {}
    used_det = set()
    for ov, i, j in overlaps:
        if i in matched_gt or j in used_det:
            continue
        matched_gt[i] = (j, ov)
        used_det.add(j)

    tp = 0
    sars = []
    for i, g in enumerate(gt_sets):
        hit = matched_gt.get(i)
        if hit is None:
            continue
        j, ov = hit
        if ov > min_overlap * areas[sorted(g)].sum():
            tp += 1
            sars.append(sar(sorted(g), sorted(det_sets[j]), mesh))
        else:
            del matched_gt[i]
            used_det.discard(j)
    fn = len(gt_sets) - tp
    fp = len(det_sets) - tp
    return SegmentationScore(per_fold_sar=sars, tp=tp, fp=fp, fn=fn)


def distance_error(reg_map, src_mesh, src_param, dst_mesh, dst_param,
                   landmarks_src, landmarks_dst, control_fraction=0.75,
                   seed=42):
    """Hold-out landmark protocol: map the held-out source landmarks and
    measure Euclidean distance (mm) to their true targets.

    The control/held-out split is a seeded permutation; control landmarks
    stand in for the features a registration would be tuned on and are
    excluded from scoring.
    """
    lm_src = np.atleast_2d(np.asarray(landmarks_src, dtype=np.float64))
    lm_dst = np.atleast_2d(np.asarray(landmarks_dst, dtype=np.float64))
    if lm_src.shape[0] != lm_dst.shape[0] or lm_src.shape[0] < 2:
        raise TooFewLandmarksError(
            f"need at least 2 landmark pairs, got {lm_src.shape[0]}"
        )
    if not 0.0 < control_fraction < 1.0:
        raise ValueError("control_fraction must be in (0, 1)")
    n = lm_src.shape[0]
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    n_control = min(max(int(round(control_fraction * n)), 0), n - 1)
    held = np.sort(perm[n_control:])
    mapped = map_point(reg_map, src_mesh, src_param, dst_mesh, dst_param,
                       lm_src[held])
    errors = np.linalg.norm(mapped - lm_dst[held], axis=1)
    return DistanceErrorReport(
        n_control=int(n_control), n_heldout=int(held.size),
        errors=errors, seed=int(seed),
    )


# ---- reports -------------------------------------------------------------------


def score_to_json(path, scores):
    """scores: dict scan-id -> SegmentationScore."""
    payload = {k: v.to_dict() for k, v in scores.items()}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)


def score_table(scores):
    """Plain-text table: Scan ID, #True, Sensitivity, #FNs, #FPs, SAR."""
    rows = ["Scan ID        #True  Sensitivity  #FNs  #FPs  SAR"]
    for k in sorted(scores):
        s = scores[k]
        rows.append(
            f"{k:<14} {s.tp + s.fn:>5}  {s.sensitivity:>11.2f}  "
            f"{s.fn:>4}  {s.fp:>4}  {s.mean_sar:.2f}"
        )
    return "\n".join(rows)
