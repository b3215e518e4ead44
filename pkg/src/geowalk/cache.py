"""Binary cache for Cayley balls.

Layout (all little-endian):

    magic   5 bytes  b"SDGW1"
    version u16
    speclen u32, spec  (presentation JSON, utf-8)
    radius  i32 (-1 for exact oracles)
    count   u32
    checksum 32 bytes (sha256 of the body)
    body:   count x (u16 length, length x i8 letters)
            count x i32 distance, count x i32 parent, count x i16 parent letter,
            count x |letters| x i32 neighbours
"""
from __future__ import annotations

import hashlib
import json
import os
import struct
from pathlib import Path

import numpy as np

from .errors import ChecksumMismatch, VersionMismatch
from .geometry import DistanceOracle, build_ball
from .group import GroupPresentation, parse_presentation

MAGIC = b"SDGW1"
FORMAT_VERSION = 1
CACHE_ENV = "GEOWALK_CACHE_DIR"


def _body(O: DistanceOracle) -> bytes:
    parts = []
    for w in O.elements:
        parts.append(struct.pack("<H", len(w)))
        parts.append(np.asarray(w, dtype="<i1").tobytes())
    parts.append(np.asarray(O.dist, dtype="<i4").tobytes())
    parts.append(np.asarray(O.parent, dtype="<i4").tobytes())
    parts.append(np.asarray(O.parent_letter, dtype="<i2").tobytes())
    parts.append(np.asarray(O.neighbors, dtype="<i4").tobytes())
    return b"".join(parts)


def save_oracle(O: DistanceOracle, path) -> None:
    spec = json.dumps(O.G.spec(), sort_keys=True).encode()
    body = _body(O)
    radius = -1 if O.radius is None else int(O.radius)
    head = MAGIC + struct.pack("<HI", FORMAT_VERSION, len(spec)) + spec
    head += struct.pack("<iI", radius, len(O.elements)) + hashlib.sha256(body).digest()
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(head + body)
    os.replace(tmp, path)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise ChecksumMismatch("cache file is truncated")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_oracle(path) -> DistanceOracle:
    data = Path(path).read_bytes()
    r = _Reader(data)
    if data[: len(MAGIC)] != MAGIC:
        raise VersionMismatch(f"bad magic {data[:len(MAGIC)]!r}")
    r.take(len(MAGIC))
    (version,) = r.unpack("<H")
    if version != FORMAT_VERSION:
        raise VersionMismatch(f"cache format {version}, expected {FORMAT_VERSION}")
    (speclen,) = r.unpack("<I")
    spec = r.take(speclen)
    radius, count = r.unpack("<iI")
    digest = r.take(32)
    body = data[r.pos :]
    if hashlib.sha256(body).digest() != digest:
        raise ChecksumMismatch("cache body does not match its checksum")
    G = parse_presentation(json.loads(spec.decode()))
    O = DistanceOracle(G, None if radius < 0 else radius)
    b = _Reader(body)
    elements = []
    for _ in range(count):
        (n,) = b.unpack("<H")
        elements.append(tuple(int(c) for c in np.frombuffer(b.take(n), dtype="<i1")))
    L = len(G.letters)
    O.elements = elements
    O.index = {w: i for i, w in enumerate(elements)}
    O.dist = np.frombuffer(b.take(4 * count), dtype="<i4").astype(np.int32)
    O.parent = np.frombuffer(b.take(4 * count), dtype="<i4").astype(np.int32)
    O.parent_letter = np.frombuffer(b.take(2 * count), dtype="<i2").astype(np.int16)
    O.neighbors = np.frombuffer(b.take(4 * count * L), dtype="<i4").astype(np.int32).reshape(count, L)
    O.stats = {"size": count, "loaded_from": str(path)}
    return O


def cache_path(G: GroupPresentation, radius: int, cache_dir=None) -> Path | None:
    cache_dir = cache_dir or os.environ.get(CACHE_ENV)
    if not cache_dir:
        return None
    key = hashlib.sha256(json.dumps([G.spec(), radius, FORMAT_VERSION], sort_keys=True).encode()).hexdigest()[:20]
    return Path(cache_dir) / f"ball-{G.tag}-r{radius}-{key}.sdgw"


def cached_ball(G: GroupPresentation, radius: int, cache_dir=None) -> DistanceOracle:
    """Load the ball from the cache directory if present, else build and store it."""
    path = cache_path(G, radius, cache_dir)
    if path is not None and path.exists():
        try:
            return load_oracle(path)
        except (ChecksumMismatch, VersionMismatch):
            pass  # rebuild below
    O = build_ball(G, radius)
    if path is not None:
        path.parent.mkdir(parents=True, exist_ok=True)
        save_oracle(O, path)
    return O
