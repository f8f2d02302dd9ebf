"""On-disk cache of per-(patch, variant) feature vectors.

Binary layout (all integers little-endian):

    magic   4 bytes  b"WBK1"
    u32     version (1)
    u32     d_x
    u32     variant_count
    table   variant_count x (u16 name length + utf-8 name)
    records fixed size: u64 slide-id hash, u32 row, u32 col, u16 variant
            index, d_x x f32 payload
    u32     CRC32 over everything above

The slide-id hash is the first 8 bytes of SHA-256(slide_id), little-endian.
Records are written in sorted key order, so identical inputs produce
byte-identical files on any platform.
"""

from __future__ import annotations

import hashlib
import struct
import zlib

import numpy as np

from ..errors import CacheCorrupt, KeyMissing
from .augment import AugmentationSpec, apply_augmentation
from .tile import Patch

MAGIC = b"WBK1"
VERSION = 1
ORIGINAL_VARIANT = "original"


def slide_hash(slide_id: str) -> int:
    return int.from_bytes(hashlib.sha256(slide_id.encode("utf-8")).digest()[:8], "little")


def write_cache(path, d_x: int, variants: list[str], records) -> dict:
    """Write (slide_id, row, col, variant, vector) records; returns a size
    report including the payload-only storage model n_records * d_x * 4."""
    variant_index = {name: i for i, name in enumerate(variants)}
    encoded = []
    for slide_id, row, col, variant, vector in records:
        vec = np.ascontiguousarray(vector, dtype="<f4")
        if vec.shape != (d_x,):
            raise CacheCorrupt(f"vector for {slide_id}:{row},{col},{variant} has shape {vec.shape}")
        encoded.append((slide_hash(slide_id), row, col, variant_index[variant], vec.tobytes()))
    encoded.sort(key=lambda r: r[:4])

    blob = bytearray()
    blob += MAGIC
    blob += struct.pack("<III", VERSION, d_x, len(variants))
    for name in variants:
        raw = name.encode("utf-8")
        blob += struct.pack("<H", len(raw)) + raw
    for h, row, col, vidx, payload in encoded:
        blob += struct.pack("<QIIH", h, row, col, vidx) + payload
    blob += struct.pack("<I", zlib.crc32(bytes(blob)) & 0xFFFFFFFF)
    with open(path, "wb") as fh:
        fh.write(blob)
    return {
        "records": len(encoded),
        "payload_bytes": len(encoded) * d_x * 4,
        "file_bytes": len(blob),
    }


class FeatureCacheReader:
    """Validates the file once, then serves lookups from an in-memory index."""

    def __init__(self, path):
        with open(path, "rb") as fh:
            blob = fh.read()
        if len(blob) < 4 + 12 + 4 or blob[:4] != MAGIC:
            raise CacheCorrupt(f"{path}: not a feature cache")
        stored_crc = struct.unpack("<I", blob[-4:])[0]
        if zlib.crc32(blob[:-4]) & 0xFFFFFFFF != stored_crc:
            raise CacheCorrupt(f"{path}: CRC mismatch")
        version, d_x, n_variants = struct.unpack_from("<III", blob, 4)
        if version != VERSION:
            raise CacheCorrupt(f"{path}: unsupported version {version}")
        offset = 16
        variants = []
        for _ in range(n_variants):
            (length,) = struct.unpack_from("<H", blob, offset)
            offset += 2
            variants.append(blob[offset:offset + length].decode("utf-8"))
            offset += length
        record_size = 8 + 4 + 4 + 2 + d_x * 4
        body = blob[offset:-4]
        if len(body) % record_size != 0:
            raise CacheCorrupt(f"{path}: truncated record section")
        self.d_x = d_x
        self.variants = tuple(variants)
        self._index: dict[tuple, np.ndarray] = {}
        for pos in range(0, len(body), record_size):
            h, row, col, vidx = struct.unpack_from("<QIIH", body, pos)
            payload = np.frombuffer(body, dtype="<f4", count=d_x, offset=pos + 18)
            self._index[(h, row, col, vidx)] = payload

    def __len__(self):
        return len(self._index)

    def positions(self, slide_id: str) -> list[tuple[int, int]]:
        """Sorted (row, col) grid positions cached for a slide."""
        h = slide_hash(slide_id)
        return sorted({(row, col) for (hh, row, col, _) in self._index if hh == h})

    def get(self, slide_id: str, row: int, col: int, variant: str) -> np.ndarray:
        try:
            vidx = self.variants.index(variant)
        except ValueError:
            raise KeyMissing(f"variant {variant!r} not in cache") from None
        key = (slide_hash(slide_id), row, col, vidx)
        if key not in self._index:
            raise KeyMissing(f"no cached vector for {slide_id}:{row},{col} variant {variant!r}")
        return self._index[key]


def build_feature_cache(path, patches: list[Patch], specs: list[AugmentationSpec],
                        embed) -> dict:
    """Embed every patch under the original and every spec'd variant."""
    variants = [ORIGINAL_VARIANT] + [spec.kind for spec in specs]
    if len(set(variants)) != len(variants):
        raise CacheCorrupt("duplicate variant names in spec list")

    def records():
        for patch in patches:
            row, col = patch.grid_pos
            yield patch.slide_id, row, col, ORIGINAL_VARIANT, embed(patch.pixels)
            for spec in specs:
                augmented = apply_augmentation(patch, spec)
                yield patch.slide_id, row, col, spec.kind, embed(augmented.pixels)

    probe = embed(patches[0].pixels) if patches else np.zeros(0, dtype="<f4")
    return write_cache(path, probe.shape[0], variants, records())
