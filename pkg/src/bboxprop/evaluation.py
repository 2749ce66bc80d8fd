"""Detection and tracking scores: AP at IoU 0.5 (overall and per ring) and CLEAR-MOT."""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field
from itertools import product
from typing import Callable, Iterable, NamedTuple, Sequence

import numpy as np

from .geometry import BBox, boxes_to_array, iou_matrix
from .ingest import Detection, GroundTruthBox
from .regions import RegionSpec, classify_region


class EvalError(ValueError):
    pass


class ScoredBox(NamedTuple):
    frame: int
    box: BBox
    score: float


def predictions_from_tracks(tracks) -> list[ScoredBox]:
    return [ScoredBox(f, tb.box, tb.confidence) for t in tracks for f, tb in sorted(t.boxes.items())]


def _match_flags(preds: Sequence[ScoredBox], gt: Sequence[GroundTruthBox], thr: float) -> list[tuple[float, int, bool]]:
    """Per-frame greedy matching; returns (score, order, is_tp) per prediction."""
    gt_by: dict[int, list[GroundTruthBox]] = {}
    for g in gt:
        gt_by.setdefault(g.frame, []).append(g)
    pred_by: dict[int, list[tuple[int, ScoredBox]]] = {}
    for k, p in enumerate(preds):
        pred_by.setdefault(p.frame, []).append((k, p))
    out = []
    for frame, items in pred_by.items():
        gts = sorted(gt_by.get(frame, []), key=lambda g: g.car_id)
        items = sorted(items, key=lambda kp: (-kp[1].score, kp[0]))
        if not gts:
            out.extend((p.score, k, False) for k, p in items)
            continue
        m = iou_matrix(boxes_to_array([p.box for _, p in items]), boxes_to_array([g.box for g in gts]))
        free = np.ones(len(gts), bool)
        for row, (k, p) in enumerate(items):
            cand = np.where(free, m[row], -1.0)
            j = int(np.argmax(cand))  # first max -> lowest car id
            if cand[j] >= thr:
                free[j] = False
                out.append((p.score, k, True))
            else:
                out.append((p.score, k, False))
    return out


def average_precision(flags: Sequence[tuple[float, int, bool]], n_gt: int) -> float:
    """All-point interpolated area under the precision-recall curve."""
    if n_gt <= 0:
        raise EvalError("average precision is undefined without ground truth")
    if not flags:
        return 0.0
    order = sorted(flags, key=lambda x: (-x[0], x[1]))
    tp = np.cumsum([f[2] for f in order], dtype=float)
    fp = np.cumsum([not f[2] for f in order], dtype=float)
    rec = tp / n_gt
    prec = tp / (tp + fp)
    mrec = np.concatenate([[0.0], rec, [1.0]])
    mpre = np.concatenate([[0.0], prec, [0.0]])
    mpre = np.maximum.accumulate(mpre[::-1])[::-1]
    idx = np.nonzero(mrec[1:] != mrec[:-1])[0]
    return float(np.sum((mrec[idx + 1] - mrec[idx]) * mpre[idx + 1]))


class APResult(NamedTuple):
    overall: float
    per_ring: list[float | None] | None


def ap50(
    predictions: Sequence[ScoredBox],
    gt: Sequence[GroundTruthBox],
    per_ring: RegionSpec | None = None,
    iou_threshold: float = 0.5,
) -> APResult:
    """AP at IoU 0.5. Ground-truth cars flagged as never moving are left out.

    Per-ring AP splits ground truth and predictions by the ring of their own
    centers; a ring without ground truth reports None.
    """
    gt = [g for g in gt if g.moving]
    if not gt:
        raise EvalError("no (moving) ground truth to score against")
    overall = average_precision(_match_flags(predictions, gt, iou_threshold), len(gt))
    rings = None
    if per_ring is not None:
        rings = []
        g_ring = [classify_region(g.box, per_ring) for g in gt]
        p_ring = [classify_region(p.box, per_ring) for p in predictions]
        for r in range(per_ring.n_rings):
            gr = [g for g, k in zip(gt, g_ring) if k == r]
            pr = [p for p, k in zip(predictions, p_ring) if k == r]
            rings.append(average_precision(_match_flags(pr, gr, iou_threshold), len(gr)) if gr else None)
    return APResult(overall, rings)


class MotResult(NamedTuple):
    mota: float
    motp: float | None
    tp: int
    fp: int
    fn: int
    id_switches: int
    gt_total: int


def clear_mot(tracks, gt: Sequence[GroundTruthBox], iou_threshold: float = 0.5) -> MotResult:
    """CLEAR-MOT counts with IoU >= 0.5 as the match criterion.

    Correspondences from the previous frame are kept while they still
    overlap enough; the rest are matched greedily by IoU. A ground-truth car
    matched to a different track than its last match is an identity switch.
    """
    gt = [g for g in gt if g.moving]
    if not gt:
        raise EvalError("no (moving) ground truth to score against")
    gt_by: dict[int, dict[int, BBox]] = {}
    for g in gt:
        gt_by.setdefault(g.frame, {})[g.car_id] = g.box
    hyp_by: dict[int, dict[int, BBox]] = {}
    for t in tracks:
        for f, tb in t.boxes.items():
            hyp_by.setdefault(f, {})[t.id] = tb.box
    tp = fp = fn = idsw = 0
    iou_sum = 0.0
    prev: dict[int, int] = {}
    last: dict[int, int] = {}
    for frame in sorted(set(gt_by) | set(hyp_by)):
        gts = gt_by.get(frame, {})
        hyps = hyp_by.get(frame, {})
        g_ids = sorted(gts)
        h_ids = sorted(hyps)
        if g_ids and h_ids:
            m = iou_matrix(boxes_to_array([gts[g] for g in g_ids]), boxes_to_array([hyps[h] for h in h_ids]))
        else:
            m = np.zeros((len(g_ids), len(h_ids)))
        gi = {g: i for i, g in enumerate(g_ids)}
        hi = {h: j for j, h in enumerate(h_ids)}
        matches: dict[int, int] = {}
        for g, h in sorted(prev.items()):
            if g in gi and h in hi and m[gi[g], hi[h]] >= iou_threshold:
                matches[g] = h
        taken = set(matches.values())
        cand = sorted(
            (-m[i, j], g, h)
            for g, i in gi.items()
            if g not in matches
            for h, j in hi.items()
            if h not in taken and m[i, j] >= iou_threshold
        )
        for neg, g, h in cand:
            if g in matches or h in taken:
                continue
            matches[g] = h
            taken.add(h)
        for g, h in matches.items():
            if g in last and last[g] != h:
                idsw += 1
            last[g] = h
            iou_sum += m[gi[g], hi[h]]
        tp += len(matches)
        fn += len(g_ids) - len(matches)
        fp += len(h_ids) - len(matches)
        prev = matches
    total = len(gt)
    mota = 1.0 - (fn + fp + idsw) / total
    motp = iou_sum / tp if tp else None
    return MotResult(mota, motp, tp, fp, fn, idsw, total)


@dataclass
class EvalReport:
    ap50_overall: float
    ap50_per_ring: list[float | None]
    mota: float
    motp: float | None
    counts: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(_rounded(self.to_dict()), indent=2, sort_keys=True) + "\n"

    def to_text(self) -> str:
        rows = [("AP50 overall", _f(self.ap50_overall))]
        names = _ring_names(len(self.ap50_per_ring))
        rows += [(f"AP50 {n}", _f(v)) for n, v in zip(names, self.ap50_per_ring)]
        rows += [("MOTA", _f(self.mota)), ("MOTP", _f(self.motp))]
        rows += [(k, str(v)) for k, v in self.counts.items()]
        width = max(len(k) for k, _ in rows)
        return "\n".join(f"{k:<{width}}  {v:>8}" for k, v in rows) + "\n"


def _ring_names(n: int) -> list[str]:
    if n == 3:
        return ["inner", "middle", "outer"]
    return [f"ring{i}" for i in range(n)]


def _f(v) -> str:
    return "n/a" if v is None else f"{v:.4f}"


def _rounded(obj, nd: int = 6):
    if isinstance(obj, float):
        return round(obj, nd)
    if isinstance(obj, dict):
        return {k: _rounded(v, nd) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_rounded(v, nd) for v in obj]
    return obj


def evaluate(tracks, gt: Sequence[GroundTruthBox], spec: RegionSpec) -> EvalReport:
    """Score the given (moving) tracks against ground truth."""
    ap = ap50(predictions_from_tracks(tracks), gt, spec)
    mot = clear_mot(tracks, gt)
    counts = {
        "tp": mot.tp,
        "fp": mot.fp,
        "fn": mot.fn,
        "id_switches": mot.id_switches,
        "gt_total": mot.gt_total,
    }
    return EvalReport(ap.overall, ap.per_ring, mot.mota, mot.motp, counts)


# Row order: none, each pass alone, pairs, all.
TOGGLE_ROWS = (
    (False, False, False),
    (True, False, False),
    (False, True, False),
    (False, False, True),
    (True, True, False),
    (True, False, True),
    (False, True, True),
    (True, True, True),
)


def ablation_grid(
    dets: Sequence[Detection],
    gt: Sequence[GroundTruthBox],
    spec: RegionSpec,
    validator_factory: Callable[[], object],
    n_frames: int | None = None,
    segment_size: int = 3,
    base_cfg=None,
    scene="both",
) -> list[dict]:
    """Run the pipeline for all eight propagation toggle combinations."""
    from dataclasses import replace

    from .pipeline import run_pipeline
    from .propagation import PropagationConfig

    base_cfg = base_cfg or PropagationConfig()
    rows = []
    for kf_if, if_kf, hcc in TOGGLE_ROWS:
        cfg = replace(base_cfg, kf_to_if=kf_if, if_to_kf=if_kf, hcc=hcc)
        t0 = time.perf_counter()
        res = run_pipeline(dets, spec, n_frames, segment_size, cfg, validator_factory(), scene)
        dt = time.perf_counter() - t0
        rep = evaluate(res.moving, gt, spec)
        rows.append(
            {
                "kf_to_if": kf_if,
                "if_to_kf": if_kf,
                "hcc": hcc,
                "ap50": rep.ap50_overall,
                "ap50_per_ring": rep.ap50_per_ring,
                "mota": rep.mota,
                "seconds": dt,
                "fps": res.plan.n_frames / dt if dt > 0 else float("inf"),
            }
        )
    return rows


def ablation_text(rows: Iterable[dict]) -> str:
    lines = [f"{'K->I':>5} {'I->K':>5} {'HCC':>5} {'AP50':>8} {'MOTA':>8} {'fps':>9}"]
    for r in rows:
        mark = lambda v: "x" if v else "."  # noqa: E731
        lines.append(
            f"{mark(r['kf_to_if']):>5} {mark(r['if_to_kf']):>5} {mark(r['hcc']):>5} "
            f"{r['ap50']:>8.4f} {r['mota']:>8.4f} {r['fps']:>9.1f}"
        )
    return "\n".join(lines) + "\n"
