"""PGM (binary P5) images, CSV signals and paired-dataset directories."""

from __future__ import annotations

import csv
import json
import re
from pathlib import Path

import numpy as np

from .sde import PairedSample

_HEADER = re.compile(rb"^P5\s+(?:#.*\s+)*(\d+)\s+(?:#.*\s+)*(\d+)\s+(?:#.*\s+)*(\d+)\s")


def read_pgm(path) -> np.ndarray:
    """Read a binary PGM into a float64 array in [0, 1]."""
    raw = Path(path).read_bytes()
    m = _HEADER.match(raw)
    if m is None:
        raise ValueError(f"{path}: not a binary (P5) PGM file")
    width, height, maxval = (int(g) for g in m.groups())
    if not 0 < maxval < 65536:
        raise ValueError(f"{path}: invalid maxval {maxval}")
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    body = raw[m.end():]
    need = width * height * dtype.itemsize
    if len(body) < need:
        raise ValueError(f"{path}: truncated pixel data ({len(body)} < {need} bytes)")
    pixels = np.frombuffer(body[:need], dtype=dtype).reshape(height, width)
    return pixels.astype(np.float64) / maxval


def write_pgm(path, image, maxval: int = 255) -> None:
    """Write a 2-D array (values in [0, 1], clipped) as a binary PGM."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2:
        raise ValueError(f"PGM needs a 2-D image, got shape {image.shape}")
    if maxval not in (255, 65535):
        raise ValueError("maxval must be 255 or 65535")
    dtype = np.dtype("u1") if maxval == 255 else np.dtype(">u2")
    q = np.rint(np.clip(image, 0.0, 1.0) * maxval).astype(dtype)
    header = f"P5\n{image.shape[1]} {image.shape[0]}\n{maxval}\n".encode("ascii")
    Path(path).write_bytes(header + q.tobytes())


def write_signal_csv(path, signal) -> None:
    signal = np.asarray(signal, dtype=np.float64).ravel()
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["index", "value"])
        for k, v in enumerate(signal):
            w.writerow([k, repr(float(v))])


def read_signal_csv(path) -> np.ndarray:
    with open(path, newline="") as f:
        rows = list(csv.DictReader(f))
    return np.array([float(r["value"]) for r in rows], dtype=np.float64)


def read_state(path) -> np.ndarray:
    path = Path(path)
    if path.suffix.lower() == ".pgm":
        return read_pgm(path)
    if path.suffix.lower() == ".csv":
        return read_signal_csv(path)
    raise ValueError(f"{path}: expected a .pgm image or .csv signal")


def write_state(path, state, maxval: int = 65535) -> None:
    state = np.asarray(state)
    if state.ndim == 2:
        write_pgm(path, state, maxval=maxval)
    else:
        write_signal_csv(path, state)


def _ext(sample: PairedSample) -> str:
    return "pgm" if sample.x0.ndim == 2 else "csv"


def save_dataset(directory, samples, maxval: int = 65535) -> Path:
    """Write ``{id}_hq`` / ``{id}_lq`` files plus ``manifest.json``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    for s in samples:
        ext = _ext(s)
        write_state(directory / f"{s.id}_hq.{ext}", s.x0, maxval)
        write_state(directory / f"{s.id}_lq.{ext}", s.mu, maxval)
        entries.append({"id": s.id, "degradation_tag": s.degradation_tag, "params": s.params,
                        "seed": s.seed, "shape": list(s.x0.shape)})
    (directory / "manifest.json").write_text(json.dumps(entries, indent=2))
    return directory


def load_dataset(directory, replay: bool = True) -> list:
    """Load a dataset directory.

    With ``replay`` (default) entries that carry a generator seed are rebuilt
    exactly from it, avoiding pixel quantization; other entries are read from
    their files.
    """
    from .degradations import make_pair

    directory = Path(directory)
    manifest = directory / "manifest.json"
    if not manifest.exists():
        raise FileNotFoundError(f"{manifest} not found")
    samples = []
    for e in json.loads(manifest.read_text()):
        if replay and e.get("seed") is not None and "shape" in e:
            s = make_pair(e["degradation_tag"], int(e["seed"]), tuple(e["shape"]), e.get("params"), id=e["id"])
        else:
            ext = "pgm" if (directory / f"{e['id']}_hq.pgm").exists() else "csv"
            s = PairedSample(x0=read_state(directory / f"{e['id']}_hq.{ext}"),
                             mu=read_state(directory / f"{e['id']}_lq.{ext}"),
                             degradation_tag=e.get("degradation_tag", ""), id=e["id"],
                             params=e.get("params", {}), seed=e.get("seed"))
        samples.append(s)
    return samples
