"""File formats: detections, ground truth, tracks and run configs.

Detection and ground-truth CSVs follow the MOT-challenge layout with a
top-left corner (frame, id, x, y, w, h, conf, ...). Frames are 1-based.
"""

from __future__ import annotations

import csv
import enum
import io
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .geometry import BBox

TRACK_HEADER = "frame,track_id,x,y,w,h,status,source"


class DataError(ValueError):
    """Malformed or inconsistent input data."""


class Modality(str, enum.Enum):
    FULL = "full"
    MOTION = "motion-only"


@dataclass(frozen=True, slots=True)
class Detection:
    frame: int
    box: BBox
    confidence: float
    modality: Modality = Modality.FULL
    det_id: int = 0

    def __post_init__(self) -> None:
        if self.frame < 1:
            raise ValueError(f"frame index must be >= 1, got {self.frame}")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence must lie in [0, 1], got {self.confidence}")


@dataclass(frozen=True, slots=True)
class GroundTruthBox:
    frame: int
    car_id: int
    box: BBox
    moving: bool = True


def modality_schedule(frame: int, segment_size: int | None, n_frames: int | None = None) -> Modality:
    """Keyframes get full-modality detection, intermediate frames motion-only."""
    if segment_size is None:
        return Modality.FULL
    if (frame - 1) % (segment_size - 1) == 0 or (n_frames is not None and frame == n_frames):
        return Modality.FULL
    return Modality.MOTION


def _fmt(v: float, nd: int) -> str:
    s = f"{v:.{nd}f}"
    # avoid "-0.00"
    return s[1:] if s.startswith("-") and float(s) == 0.0 else s


def _box_fields(row: Sequence[str], lineno: int, path) -> BBox:
    try:
        x, y, w, h = (float(v) for v in row[2:6])
    except ValueError as exc:
        raise DataError(f"{path}:{lineno}: non-numeric box field ({exc})") from None
    if not (w > 0 and h > 0):
        raise DataError(f"{path}:{lineno}: non-positive box size w={w}, h={h}")
    return BBox.from_tlwh(x, y, w, h)


def _rows(path: str | Path):
    text = Path(path).read_text()
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        yield lineno, [f.strip() for f in line.split(",")]


def read_detections(
    path: str | Path,
    format: str = "mot-csv",
    segment_size: int | None = None,
    n_frames: int | None = None,
) -> list[Detection]:
    """Load detections, sorted by (frame, det_id).

    ``det_id`` is the per-frame ordinal in file order unless the file sets it.
    Modality comes from an explicit column when present, otherwise from the
    keyframe schedule implied by ``segment_size`` (all full when None).
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"detections file not found: {path}")
    raw: list[tuple[int, BBox, float, Modality | None, int | None]] = []
    if format == "mot-csv":
        for lineno, row in _rows(path):
            if len(row) < 7:
                raise DataError(f"{path}:{lineno}: expected at least 7 fields, got {len(row)}")
            try:
                frame = int(float(row[0]))
                conf = float(row[6])
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from None
            box = _box_fields(row, lineno, path)
            modality = None
            if len(row) >= 8 and row[7] in (Modality.FULL.value, Modality.MOTION.value):
                modality = Modality(row[7])
            _check_frame_conf(frame, conf, lineno, path)
            raw.append((frame, box, conf, modality, None))
    elif format == "jsonl":
        for lineno, line in enumerate(path.read_text().splitlines(), start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                frame = int(rec["frame"])
                conf = float(rec.get("confidence", rec.get("conf", 1.0)))
                w, h = float(rec["w"]), float(rec["h"])
                x, y = float(rec["x"]), float(rec["y"])
            except (ValueError, KeyError, TypeError) as exc:
                raise DataError(f"{path}:{lineno}: bad record ({exc})") from None
            if not (w > 0 and h > 0):
                raise DataError(f"{path}:{lineno}: non-positive box size w={w}, h={h}")
            _check_frame_conf(frame, conf, lineno, path)
            modality = Modality(rec["modality"]) if "modality" in rec else None
            raw.append((frame, BBox.from_tlwh(x, y, w, h), conf, modality, rec.get("det_id")))
    else:
        raise ValueError(f"unknown detection format {format!r}")

    if n_frames is None and raw:
        n_frames = max(r[0] for r in raw)
    ordinal: dict[int, int] = {}
    dets = []
    for frame, box, conf, modality, det_id in raw:
        if det_id is None:
            det_id = ordinal.get(frame, 0)
        ordinal[frame] = max(ordinal.get(frame, 0), int(det_id)) + 1
        if modality is None:
            modality = modality_schedule(frame, segment_size, n_frames)
        dets.append(Detection(frame, box, conf, modality, int(det_id)))
    dets.sort(key=lambda d: (d.frame, d.det_id))
    return dets


def _check_frame_conf(frame: int, conf: float, lineno: int, path) -> None:
    if frame < 1:
        raise DataError(f"{path}:{lineno}: frame index must be >= 1")
    if not 0.0 <= conf <= 1.0:
        raise DataError(f"{path}:{lineno}: confidence {conf} outside [0, 1]")


def write_detections(dets: Iterable[Detection], path: str | Path, format: str = "mot-csv") -> None:
    out = io.StringIO()
    for d in sorted(dets, key=lambda d: (d.frame, d.det_id)):
        x, y, w, h = d.box.to_tlwh()
        if format == "mot-csv":
            out.write(
                f"{d.frame},-1,{_fmt(x, 4)},{_fmt(y, 4)},{_fmt(w, 4)},{_fmt(h, 4)},"
                f"{_fmt(d.confidence, 4)},{d.modality.value}\n"
            )
        elif format == "jsonl":
            rec = {
                "frame": d.frame,
                "det_id": d.det_id,
                "x": round(x, 4),
                "y": round(y, 4),
                "w": round(w, 4),
                "h": round(h, 4),
                "confidence": round(d.confidence, 4),
                "modality": d.modality.value,
            }
            out.write(json.dumps(rec, sort_keys=True) + "\n")
        else:
            raise ValueError(f"unknown detection format {format!r}")
    Path(path).write_text(out.getvalue())


def read_ground_truth(path: str | Path) -> list[GroundTruthBox]:
    """Load MOT-style ground truth; an optional 8th column is the moving flag."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"ground-truth file not found: {path}")
    seen: set[tuple[int, int]] = set()
    out = []
    for lineno, row in _rows(path):
        if len(row) < 6:
            raise DataError(f"{path}:{lineno}: expected at least 6 fields, got {len(row)}")
        try:
            frame = int(float(row[0]))
            car_id = int(float(row[1]))
            moving = bool(int(float(row[7]))) if len(row) >= 8 else True
        except ValueError as exc:
            raise DataError(f"{path}:{lineno}: {exc}") from None
        if frame < 1:
            raise DataError(f"{path}:{lineno}: frame index must be >= 1")
        box = _box_fields(row, lineno, path)
        if (frame, car_id) in seen:
            raise DataError(f"{path}:{lineno}: duplicate identity {car_id} in frame {frame}")
        seen.add((frame, car_id))
        out.append(GroundTruthBox(frame, car_id, box, moving))
    out.sort(key=lambda g: (g.frame, g.car_id))
    return out


def write_ground_truth(gt: Iterable[GroundTruthBox], path: str | Path) -> None:
    out = io.StringIO()
    for g in sorted(gt, key=lambda g: (g.frame, g.car_id)):
        x, y, w, h = g.box.to_tlwh()
        out.write(
            f"{g.frame},{g.car_id},{_fmt(x, 4)},{_fmt(y, 4)},{_fmt(w, 4)},{_fmt(h, 4)},1,{int(g.moving)}\n"
        )
    Path(path).write_text(out.getvalue())


def _track_rows(tracks):
    rows = []
    for t in tracks:
        for frame, tb in t.boxes.items():
            rows.append((frame, t.id, tb, t.status))
    rows.sort(key=lambda r: (r[0], r[1]))
    return rows


def write_tracks(tracks, path: str | Path) -> None:
    """Write the golden-file track CSV: ``frame,track_id,x,y,w,h,status,source``."""
    lines = [TRACK_HEADER]
    for frame, tid, tb, status in _track_rows(tracks):
        x, y, w, h = tb.box.to_tlwh()
        lines.append(
            f"{frame},{tid},{_fmt(x, 2)},{_fmt(y, 2)},{_fmt(w, 2)},{_fmt(h, 2)},"
            f"{_status_name(status)},{tb.source.value}"
        )
    Path(path).write_text("\n".join(lines) + "\n")


def write_tracks_jsonl(tracks, path: str | Path) -> None:
    """Same rows as :func:`write_tracks` plus the box confidence, one JSON object per line."""
    out = io.StringIO()
    for frame, tid, tb, status in _track_rows(tracks):
        x, y, w, h = tb.box.to_tlwh()
        rec = {
            "frame": frame,
            "track_id": tid,
            "x": round(x, 2),
            "y": round(y, 2),
            "w": round(w, 2),
            "h": round(h, 2),
            "status": _status_name(status),
            "source": tb.source.value,
            "confidence": round(tb.confidence, 4),
        }
        out.write(json.dumps(rec, sort_keys=True) + "\n")
    Path(path).write_text(out.getvalue())


def _status_name(status) -> str:
    value = getattr(status, "value", status)
    return "stationary" if value == "stationary" else "moving"


def read_tracks(path: str | Path):
    """Read tracks written by :func:`write_tracks` (CSV) or :func:`write_tracks_jsonl`.

    CSV track files carry no confidence; boxes read from them get 1.0.
    """
    from .tracker import Source, Status, Track, TrackBox

    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"track file not found: {path}")
    tracks: dict[int, Track] = {}

    def add(frame, tid, box, status, source, conf, lineno):
        t = tracks.setdefault(tid, Track(tid))
        if frame in t.boxes:
            raise DataError(f"{path}:{lineno}: track {tid} has two boxes in frame {frame}")
        t.boxes[frame] = TrackBox(box, Source(source), conf)
        t.status = Status(status)

    if path.suffix == ".jsonl":
        for lineno, line in enumerate(path.read_text().splitlines(), start=1):
            if not line.strip():
                continue
            try:
                r = json.loads(line)
                box = BBox.from_tlwh(r["x"], r["y"], r["w"], r["h"])
                add(int(r["frame"]), int(r["track_id"]), box, r["status"], r["source"],
                    float(r.get("confidence", 1.0)), lineno)
            except (KeyError, ValueError, TypeError) as exc:
                raise DataError(f"{path}:{lineno}: bad track record ({exc})") from None
    else:
        reader = csv.reader(io.StringIO(path.read_text()))
        for lineno, row in enumerate(reader, start=1):
            if lineno == 1 and row and row[0] == "frame":
                continue
            if not row:
                continue
            if len(row) != 8:
                raise DataError(f"{path}:{lineno}: expected 8 fields, got {len(row)}")
            try:
                box = BBox.from_tlwh(*(float(v) for v in row[2:6]))
                add(int(row[0]), int(row[1]), box, row[6], row[7], 1.0, lineno)
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from None
    for t in tracks.values():
        t.boxes = dict(sorted(t.boxes.items()))
    return [tracks[k] for k in sorted(tracks)]


def load_config(path: str | Path) -> dict:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"config file not found: {path}")
    try:
        cfg = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(cfg, dict):
        raise DataError(f"{path}: config must be a JSON object")
    return cfg
