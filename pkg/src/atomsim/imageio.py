"""Frame and ground-truth serialization.

Two image containers: 16-bit binary PGM (big-endian samples, the format's
convention) and a minimal raw format for zero-copy ingestion (8-byte
little-endian header holding width and height as 32-bit words, then
little-endian 16-bit samples, row-major).
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import ParameterError
from .experiment import GroundTruth, SiteTruth

__all__ = [
    "write_image",
    "read_image",
    "truth_to_dict",
    "truth_from_dict",
    "write_ground_truth",
    "read_ground_truth",
]

FORMATS = ("pgm16", "raw")


def _check_image(image: np.ndarray) -> np.ndarray:
    arr = np.asarray(image)
    if arr.ndim != 2 or arr.dtype != np.uint16:
        raise ParameterError("image must be a 2D uint16 array")
    return arr


def write_image(image: np.ndarray, path, fmt: str = "pgm16") -> None:
    arr = _check_image(image)
    height, width = arr.shape
    if fmt == "pgm16":
        header = f"P5\n{width} {height}\n65535\n".encode("ascii")
        payload = header + arr.astype(">u2").tobytes()
    elif fmt == "raw":
        header = np.array([width, height], dtype="<u4").tobytes()
        payload = header + arr.astype("<u2").tobytes()
    else:
        raise ParameterError(f"unknown image format {fmt!r}")
    Path(path).write_bytes(payload)


def _read_pgm16(data: bytes) -> np.ndarray:
    # tokenizer for the plain whitespace-delimited header, '#' comments allowed
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ParameterError("truncated PGM header")
        tokens.append(data[start:pos])
    pos += 1  # single whitespace after maxval
    if tokens[0] != b"P5":
        raise ParameterError("not a binary PGM file")
    width, height, maxval = (int(t) for t in tokens[1:])
    if maxval != 65535:
        raise ParameterError(f"expected 16-bit PGM (maxval 65535), got {maxval}")
    expected = width * height * 2
    body = data[pos : pos + expected]
    if len(body) != expected:
        raise ParameterError("PGM payload shorter than header promises")
    return np.frombuffer(body, dtype=">u2").reshape(height, width).astype(np.uint16)


def _read_raw(data: bytes) -> np.ndarray:
    if len(data) < 8:
        raise ParameterError("raw image shorter than its 8-byte header")
    width, height = np.frombuffer(data[:8], dtype="<u4")
    expected = int(width) * int(height) * 2
    body = data[8 : 8 + expected]
    if len(body) != expected:
        raise ParameterError("raw payload shorter than header promises")
    return np.frombuffer(body, dtype="<u2").reshape(int(height), int(width)).astype(np.uint16)


def read_image(path, fmt: str | None = None) -> np.ndarray:
    data = Path(path).read_bytes()
    if fmt is None:
        fmt = "pgm16" if str(path).endswith(".pgm") else "raw"
    if fmt == "pgm16":
        return _read_pgm16(data)
    if fmt == "raw":
        return _read_raw(data)
    raise ParameterError(f"unknown image format {fmt!r}")


def truth_to_dict(truth: GroundTruth) -> dict:
    sites = []
    for site in truth.sites:
        record = {
            "row": int(site.row),
            "col": int(site.col),
            "occupied": bool(site.occupied),
            "lost": bool(site.lost),
        }
        if site.lost:
            record["loss_time"] = float(site.loss_time)
        sites.append(record)
    return {"sites": sites, "seed": int(truth.seed), "frame_index": int(truth.frame_index)}


def truth_from_dict(document: dict) -> GroundTruth:
    sites = [
        SiteTruth(
            row=int(s["row"]),
            col=int(s["col"]),
            occupied=bool(s["occupied"]),
            lost=bool(s["lost"]),
            loss_time=float(s["loss_time"]) if "loss_time" in s else None,
        )
        for s in document["sites"]
    ]
    return GroundTruth(sites=sites, seed=int(document["seed"]), frame_index=int(document["frame_index"]))


def serialize_ground_truth(truth: GroundTruth) -> str:
    return json.dumps(truth_to_dict(truth), sort_keys=True, separators=(",", ":"))


def write_ground_truth(truth: GroundTruth, path) -> None:
    Path(path).write_text(serialize_ground_truth(truth) + "\n")


def read_ground_truth(path) -> GroundTruth:
    return truth_from_dict(json.loads(Path(path).read_text()))
