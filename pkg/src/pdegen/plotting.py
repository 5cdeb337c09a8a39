"""Grayscale heatmaps as binary PGM files with a CSV of their value ranges."""
from __future__ import annotations

import csv
from pathlib import Path
from typing import List

import numpy as np


def to_gray(a: np.ndarray, lo: float, hi: float) -> np.ndarray:
    span = hi - lo
    if span <= 0:
        return np.zeros(a.shape, dtype=np.uint8)
    return np.clip(np.round((a - lo) / span * 255.0), 0, 255).astype(np.uint8)


def write_pgm(path, img: np.ndarray) -> Path:
    """8-bit binary PGM; rows of ``img`` become image rows."""
    img = np.ascontiguousarray(img, dtype=np.uint8)
    if img.ndim != 2:
        raise ValueError("PGM images are 2-D")
    h, w = img.shape
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(img.tobytes())
    return path


def read_pgm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    parts = raw.split(b"\n", 3)
    if parts[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM")
    w, h = (int(x) for x in parts[1].split())
    return np.frombuffer(parts[3], dtype=np.uint8).reshape(h, w)


def heatmap_triplet(out_dir, stem: str, pred: np.ndarray, truth: np.ndarray) -> List[list]:
    """Write pred / truth / |error| images sharing the pair's value range.

    Returns rows (file, min, max) for the sidecar CSV.
    """
    lo = float(min(pred.min(), truth.min()))
    hi = float(max(pred.max(), truth.max()))
    err = np.abs(pred - truth)
    rows = []
    for kind, img, a, b in (("pred", pred, lo, hi), ("truth", truth, lo, hi),
                            ("abserr", err, 0.0, hi - lo)):
        p = write_pgm(Path(out_dir) / f"{stem}_{kind}.pgm", to_gray(img, a, b))
        rows.append([p.name, repr(a), repr(b)])
    return rows


def plot_predictions(out_dir, pred: np.ndarray, truth: np.ndarray, spatial_dims: int) -> List[Path]:
    """pred / truth: [n, T, *extents, C]. 1-D: one space-time image per kind;
    2-D: one image per frame and kind. Also writes ranges.csv and slices.csv."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    n, T, C = pred.shape[0], pred.shape[1], pred.shape[-1]
    for i in range(n):
        for c in range(C):
            stem = f"traj{i:04d}" + (f"_c{c}" if C > 1 else "")
            if spatial_dims == 1:
                rows += heatmap_triplet(out, stem, pred[i, ..., c], truth[i, ..., c])
            else:
                for t in range(T):
                    rows += heatmap_triplet(out, f"{stem}_t{t:03d}", pred[i, t, ..., c], truth[i, t, ..., c])
    with open(out / "ranges.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["file", "min", "max"])
        w.writerows(rows)
    with open(out / "slices.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["trajectory", "channel", "point", "pred_last", "truth_last"])
        for i in range(n):
            p = pred[i, -1].reshape(-1, C)
            t = truth[i, -1].reshape(-1, C)
            for c in range(C):
                for k in range(p.shape[0]):
                    w.writerow([i, c, k, repr(float(p[k, c])), repr(float(t[k, c]))])
    return sorted(out.iterdir())
