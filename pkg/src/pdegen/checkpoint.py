"""Versioned checkpoint files: ASCII header + named little-endian float32 blobs.

Layout::

    <MAGIC>\n
    <n header lines>\n
    header lines ...\n
    <n blobs>\n
    then per blob: "<name> <ndim> <d1> ... <dn>\n" followed by the raw data
"""
from __future__ import annotations

from pathlib import Path
from typing import Dict, List, Mapping, Tuple

import numpy as np
import torch

VAE_MAGIC = "ENMAVAE1"
GEN_MAGIC = "ENMAGEN1"


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, magic: str, header: List[str], tensors: Mapping[str, torch.Tensor]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    for line in header:
        if "\n" in line or not line.isascii():
            raise CheckpointError(f"header line not single-line ASCII: {line!r}")
    with open(path, "wb") as fh:
        fh.write(f"{magic}\n{len(header)}\n".encode())
        for line in header:
            fh.write(line.encode() + b"\n")
        fh.write(f"{len(tensors)}\n".encode())
        for name in sorted(tensors):
            if " " in name:
                raise CheckpointError(f"blob name contains a space: {name!r}")
            arr = tensors[name].detach().cpu().numpy().astype("<f4")
            dims = " ".join(str(d) for d in arr.shape)
            fh.write(f"{name} {arr.ndim} {dims}".rstrip().encode() + b"\n")
            fh.write(np.ascontiguousarray(arr).tobytes())
    return path


def load_checkpoint(path, magic: str) -> Tuple[List[str], Dict[str, torch.Tensor]]:
    with open(path, "rb") as fh:
        got = fh.readline().decode(errors="replace").rstrip("\n")
        if got != magic:
            raise CheckpointError(f"{path}: expected a {magic} checkpoint, found {got!r}")
        n_header = int(fh.readline())
        header = [fh.readline().decode().rstrip("\n") for _ in range(n_header)]
        n_blobs = int(fh.readline())
        tensors = {}
        for _ in range(n_blobs):
            parts = fh.readline().decode().split()
            if len(parts) < 2:
                raise CheckpointError(f"{path}: truncated blob table")
            name, ndim = parts[0], int(parts[1])
            shape = tuple(int(d) for d in parts[2:2 + ndim])
            count = int(np.prod(shape)) if shape else 1
            raw = fh.read(4 * count)
            if len(raw) != 4 * count:
                raise CheckpointError(f"{path}: blob {name!r} is truncated")
            tensors[name] = torch.from_numpy(np.frombuffer(raw, dtype="<f4").reshape(shape).copy())
    return header, tensors


def header_value(header: List[str], key: str, default=None):
    """Value of a top-level ``key = value`` line in a checkpoint header."""
    for line in header:
        k, sep, v = line.partition("=")
        if sep and k.strip() == key:
            return v.strip()
    return default
