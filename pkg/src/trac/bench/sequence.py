"""OTB-style sequence directories and the results CSV format."""

from __future__ import annotations

import csv
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np
from PIL import Image

log = logging.getLogger(__name__)

IMAGE_SUFFIXES = {".jpg", ".jpeg", ".png"}
RESULTS_HEADER = ["frame", "x", "y", "w", "h"]


class SequenceError(Exception):
    """Base class for unusable sequence data; carries the offending path."""

    def __init__(self, message, path=None):
        super().__init__(message)
        self.path = path


class MissingGroundTruthError(SequenceError):
    pass


class ImageReadError(SequenceError):
    pass


class MalformedRowError(SequenceError):
    def __init__(self, message, path=None, line=None):
        super().__init__(message, path)
        self.line = line


@dataclass
class SequenceSpec:
    name: str
    frame_paths: list[Path]
    boxes: np.ndarray
    attributes: list[str] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    def __len__(self):
        return len(self.frame_paths)

    def frames(self) -> Iterator[np.ndarray]:
        for p in self.frame_paths:
            yield load_frame(p)


def load_frame(path) -> np.ndarray:
    """RGB frame as float array in ``[0, 1]``."""
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.float64)
    except (OSError, ValueError) as exc:
        raise ImageReadError(f"cannot read image {path}: {exc}", path) from exc
    return arr / 255.0


def save_frame(frame: np.ndarray, path) -> None:
    img = np.clip(np.rint(np.asarray(frame) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(img).save(path, format="PNG")


def _frame_number(path: Path) -> int:
    digits = re.findall(r"\d+", path.stem)
    return int(digits[-1]) if digits else -1


def parse_boxes(path) -> np.ndarray:
    """``x,y,w,h`` rows separated by commas, tabs or spaces (mixed allowed)."""
    path = Path(path)
    if not path.is_file():
        raise MissingGroundTruthError(f"missing ground truth file {path}", path)
    rows = []
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        parts = [p for p in re.split(r"[,\s]+", line.strip()) if p]
        try:
            vals = [float(p) for p in parts]
        except ValueError:
            vals = []
        if len(vals) != 4 or not all(np.isfinite(vals)) or vals[2] <= 0 or vals[3] <= 0:
            raise MalformedRowError(f"{path}:{lineno}: expected x,y,w,h with w,h > 0, got {line!r}",
                                    path, lineno)
        rows.append(vals)
    return np.array(rows, dtype=float).reshape(-1, 4)


def load_sequence(dir_path) -> SequenceSpec:
    root = Path(dir_path)
    img_dir = root / "img"
    gt_path = root / "groundtruth_rect.txt"
    boxes = parse_boxes(gt_path)
    if not img_dir.is_dir():
        raise ImageReadError(f"missing image folder {img_dir}", img_dir)
    frames = sorted((p for p in img_dir.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES),
                    key=lambda p: (_frame_number(p), p.name))
    if not frames:
        raise ImageReadError(f"no images in {img_dir}", img_dir)
    warnings = []
    if len(frames) != len(boxes):
        n = min(len(frames), len(boxes))
        msg = f"{len(frames)} frames but {len(boxes)} ground-truth rows; truncated to {n}"
        log.warning("%s: %s", root, msg)
        warnings.append(msg)
        frames, boxes = frames[:n], boxes[:n]
    attributes = []
    attr_path = root / "attributes.txt"
    if attr_path.is_file():
        attributes = [a.strip() for a in re.split(r"[,\n]", attr_path.read_text()) if a.strip()]
    return SequenceSpec(root.name, frames, boxes, attributes, warnings)


def write_sequence(out_dir, frames, boxes, attributes=()) -> SequenceSpec:
    """Materialise frames and boxes in OTB layout (``img/0001.png`` ...)."""
    root = Path(out_dir)
    img_dir = root / "img"
    img_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, frame in enumerate(frames, start=1):
        p = img_dir / f"{i:04d}.png"
        save_frame(frame, p)
        paths.append(p)
    (root / "groundtruth_rect.txt").write_text(
        "".join(",".join(_fmt(v) for v in row) + "\n" for row in np.asarray(boxes))
    )
    if attributes:
        (root / "attributes.txt").write_text(",".join(attributes) + "\n")
    return SequenceSpec(root.name, paths, np.asarray(boxes, dtype=float), list(attributes))


def _fmt(v: float) -> str:
    v = float(v)
    return str(int(v)) if v.is_integer() else repr(v)


def write_results(path, boxes, frames=None) -> None:
    boxes = np.asarray(boxes, dtype=float).reshape(-1, 4)
    frames = range(len(boxes)) if frames is None else frames
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RESULTS_HEADER)
        for f, row in zip(frames, boxes):
            w.writerow([int(f)] + [f"{v:.6f}" for v in row])


def read_results(path) -> np.ndarray:
    path = Path(path)
    if not path.is_file():
        raise SequenceError(f"missing results file {path}", path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != RESULTS_HEADER:
            raise MalformedRowError(f"{path}: expected header {','.join(RESULTS_HEADER)}", path, 1)
        rows = []
        for lineno, row in enumerate(reader, start=2):
            try:
                rows.append([float(v) for v in row[1:5]])
                if len(row) != 5:
                    raise ValueError
            except ValueError:
                raise MalformedRowError(f"{path}:{lineno}: malformed row {row!r}", path, lineno)
    if not rows:
        raise SequenceError(f"{path}: no result rows", path)
    return np.array(rows, dtype=float)
