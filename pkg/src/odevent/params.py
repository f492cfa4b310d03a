"""Flat parameter vectors with named layouts and lossless serialization."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidSpecError, ShapeError


def spec_hash(obj) -> str:
    """Stable 12-hex-digit hash of a JSON-serializable description."""
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:12]


@dataclass(frozen=True)
class LayoutEntry:
    name: str
    shape: tuple
    offset: int

    @property
    def size(self) -> int:
        n = 1
        for s in self.shape:
            n *= s
        return n


@dataclass
class ParamVec:
    """A flat float64 vector plus (name, shape, offset) descriptors.

    The descriptors partition the vector exactly: entries are contiguous,
    non-overlapping, and cover the full length.
    """

    values: np.ndarray
    layout: tuple = field(default_factory=tuple)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64).ravel()
        if not self.layout:
            self.layout = (LayoutEntry("params", (self.values.size,), 0),)
        off = 0
        for entry in self.layout:
            if entry.offset != off:
                raise InvalidSpecError(
                    f"layout entry {entry.name!r} at offset {entry.offset}, expected {off}"
                )
            off += entry.size
        if off != self.values.size:
            raise InvalidSpecError(
                f"layout covers {off} values but vector has {self.values.size}"
            )

    def __len__(self):
        return self.values.size

    def get(self, name: str) -> np.ndarray:
        """View of one named block, reshaped to its declared shape."""
        for entry in self.layout:
            if entry.name == name:
                return self.values[entry.offset : entry.offset + entry.size].reshape(
                    entry.shape
                )
        raise KeyError(name)

    def names(self):
        return [e.name for e in self.layout]

    def with_values(self, values: np.ndarray) -> "ParamVec":
        values = np.asarray(values, dtype=np.float64).ravel()
        if values.size != self.values.size:
            raise ShapeError(
                f"expected {self.values.size} values, got {values.size}"
            )
        return ParamVec(values, self.layout)

    def copy(self) -> "ParamVec":
        return ParamVec(self.values.copy(), self.layout)


def pack(arrays, layout=None) -> ParamVec:
    """Pack named arrays into a ParamVec.

    ``arrays`` is a dict or a list of (name, array) pairs; insertion order
    fixes the layout unless an explicit layout is given.
    """
    if isinstance(arrays, dict):
        items = list(arrays.items())
    else:
        items = list(arrays)
    if layout is not None:
        by_name = dict(items)
        items = [(e.name, by_name[e.name]) for e in layout]
    chunks = []
    entries = []
    off = 0
    for name, arr in items:
        arr = np.asarray(arr, dtype=np.float64)
        entries.append(LayoutEntry(name, arr.shape, off))
        chunks.append(arr.ravel())
        off += arr.size
    values = np.concatenate(chunks) if chunks else np.zeros(0)
    return ParamVec(values, tuple(entries))


def unpack(p: ParamVec) -> dict:
    """Inverse of pack: dict of name -> reshaped copy."""
    return {e.name: p.get(e.name).copy() for e in p.layout}


def save_paramvec(p: ParamVec, stem, spec_digest: str | None = None) -> None:
    """Write ``<stem>.bin`` (little-endian float64) and ``<stem>.json`` sidecar."""
    stem = str(stem)
    with open(stem + ".bin", "wb") as fh:
        fh.write(p.values.astype("<f8").tobytes())
    sidecar = {
        "layout": [
            {"name": e.name, "shape": list(e.shape), "offset": e.offset}
            for e in p.layout
        ],
        "length": int(p.values.size),
        "dtype": "<f8",
        "spec_hash": spec_digest,
    }
    with open(stem + ".json", "w") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_paramvec(stem) -> ParamVec:
    stem = str(stem)
    with open(stem + ".json") as fh:
        sidecar = json.load(fh)
    values = np.fromfile(stem + ".bin", dtype="<f8")
    if values.size != sidecar["length"]:
        raise ShapeError(
            f"{stem}.bin holds {values.size} values, sidecar says {sidecar['length']}"
        )
    layout = tuple(
        LayoutEntry(d["name"], tuple(d["shape"]), d["offset"])
        for d in sidecar["layout"]
    )
    return ParamVec(values.astype(np.float64), layout)
