"""Plain-text trajectory files: one trajectory per line, ``x,y`` pairs separated by spaces.

Blank lines and ``#`` comments are ignored. Writers emit an optional
``# bbox xmin ymin xmax ymax`` comment which readers honour when present, so a
dataset round-trips with its declared extent.
"""

from __future__ import annotations

import os
import tempfile
from pathlib import Path

import numpy as np

from .core import BBox, TrajectoryDataset


class TrajectoryFormatError(ValueError):
    pass


def parse_trajectories(lines, source: str = "<input>") -> TrajectoryDataset:
    trajs = []
    bbox = None
    for lineno, raw in enumerate(lines, 1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            parts = line[1:].split()
            if len(parts) == 5 and parts[0] == "bbox":
                try:
                    bbox = BBox(*(float(v) for v in parts[1:]))
                except ValueError as exc:
                    raise TrajectoryFormatError(f"{source}:{lineno}: bad bbox comment") from exc
            continue
        pts = []
        for tok in line.split():
            try:
                x, y = tok.split(",")
                pts.append((float(x), float(y)))
            except ValueError as exc:
                raise TrajectoryFormatError(f"{source}:{lineno}: bad point {tok!r}") from exc
        if not np.all(np.isfinite(pts)):
            raise TrajectoryFormatError(f"{source}:{lineno}: non-finite coordinate")
        trajs.append(pts)
    if not trajs:
        raise TrajectoryFormatError(f"{source}: no trajectories found")
    try:
        return TrajectoryDataset.from_points(trajs, bbox=bbox)
    except ValueError as exc:
        raise TrajectoryFormatError(f"{source}: {exc}") from exc


def read_trajectories(path) -> TrajectoryDataset:
    path = Path(path)
    with path.open(encoding="utf-8") as fh:
        return parse_trajectories(fh, source=str(path))


def format_trajectories(dataset: TrajectoryDataset, with_bbox: bool = True) -> str:
    out = []
    if with_bbox:
        out.append("# bbox " + " ".join(repr(float(v)) for v in dataset.bbox))
    for t in dataset:
        out.append(" ".join(f"{x!r},{y!r}" for x, y in t.tolist()))
    return "\n".join(out) + "\n"


def atomic_write_text(path, text: str) -> None:
    """Write via a temp file in the same directory and rename into place."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_trajectories(dataset: TrajectoryDataset, path, with_bbox: bool = True) -> None:
    atomic_write_text(path, format_trajectories(dataset, with_bbox=with_bbox))
