"""Manifest and feature-store file formats.

The manifest is a single JSON document. The feature store is a little-endian
binary file::

    b"WAFLFT01"  u32 version=1  u32 n_videos
    per video:  u32 len(id)  id (utf-8)  u32 n_tokens
    per token:  u32 T_v  u32 k_v  float32[T_v*k_v]  u32 T_a  u32 k_a  float32[T_a*k_a]
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .datamodel import (
    REAL,
    Dataset,
    ForgerySegment,
    TokenFeatures,
    VideoRecord,
    WordToken,
)
from .errors import DataError, FormatError, MissingFeatures

FEATURE_MAGIC = b"WAFLFT01"
FEATURE_VERSION = 1
MANIFEST_NAME = "manifest.json"
FEATURES_NAME = "features.bin"

_U32 = struct.Struct("<I")


def manifest_to_dict(records: list[VideoRecord]) -> dict:
    return {
        "videos": [
            {
                "id": v.id,
                "duration": float(v.duration),
                "tokens": [
                    {
                        "word": t.word,
                        "t_s": float(t.t_s),
                        "t_e": float(t.t_e),
                        "label_v": t.label_v,
                        "label_a": t.label_a,
                    }
                    for t in v.tokens
                ],
                "gt_segments": [
                    {"t_s": float(s.t_s), "t_e": float(s.t_e), "modality": s.modality}
                    for s in v.gt_segments
                ],
            }
            for v in records
        ]
    }


def manifest_from_dict(doc: dict) -> list[VideoRecord]:
    try:
        videos = doc["videos"]
        records = []
        for v in videos:
            tokens = [
                WordToken(
                    str(t["word"]),
                    float(t["t_s"]),
                    float(t["t_e"]),
                    t.get("label_v", REAL),
                    t.get("label_a", REAL),
                )
                for t in v.get("tokens", [])
            ]
            segs = [
                ForgerySegment(float(s["t_s"]), float(s["t_e"]), s.get("modality", "both"))
                for s in v.get("gt_segments", [])
            ]
            records.append(VideoRecord(str(v["id"]), float(v["duration"]), tokens, segs))
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"malformed manifest: {exc!r}") from exc
    return records


def save_manifest(records: list[VideoRecord], path) -> None:
    text = json.dumps(manifest_to_dict(records), indent=2, ensure_ascii=False)
    Path(path).write_text(text + "\n", encoding="utf-8")


def load_manifest(path) -> list[VideoRecord]:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: not valid JSON ({exc})") from exc
    return manifest_from_dict(doc)


def _matrix_bytes(m: np.ndarray) -> bytes:
    m = np.asarray(m)
    if m.ndim != 2:
        raise FormatError(f"feature matrices must be 2-D, got {m.shape}")
    return _U32.pack(m.shape[0]) + _U32.pack(m.shape[1]) + np.ascontiguousarray(m, dtype="<f4").tobytes()


def features_to_bytes(store: dict[str, list[TokenFeatures]]) -> bytes:
    parts = [FEATURE_MAGIC, _U32.pack(FEATURE_VERSION), _U32.pack(len(store))]
    for vid, feats in store.items():
        raw_id = vid.encode("utf-8")
        parts += [_U32.pack(len(raw_id)), raw_id, _U32.pack(len(feats))]
        for tf in feats:
            parts.append(_matrix_bytes(tf.visual))
            parts.append(_matrix_bytes(tf.audio))
    return b"".join(parts)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise FormatError("feature file truncated")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return _U32.unpack(self.take(4))[0]

    def matrix(self) -> np.ndarray:
        rows, cols = self.u32(), self.u32()
        n = rows * cols
        if self.pos + 4 * n > len(self.buf):
            raise FormatError("feature file truncated")
        m = np.frombuffer(self.buf, dtype="<f4", count=n, offset=self.pos).reshape(rows, cols)
        self.pos += 4 * n
        return m.astype(np.float32, copy=False)


def features_from_bytes(buf: bytes) -> dict[str, list[TokenFeatures]]:
    r = _Reader(buf)
    if r.take(len(FEATURE_MAGIC)) != FEATURE_MAGIC:
        raise FormatError("bad feature-store magic")
    version = r.u32()
    if version != FEATURE_VERSION:
        raise FormatError(f"unsupported feature-store version {version}")
    store: dict[str, list[TokenFeatures]] = {}
    for _ in range(r.u32()):
        vid = r.take(r.u32()).decode("utf-8")
        feats = []
        for _ in range(r.u32()):
            visual = r.matrix()
            audio = r.matrix()
            feats.append(TokenFeatures(visual, audio))
        store[vid] = feats
    if r.pos != len(buf):
        raise FormatError("trailing bytes after feature store")
    return store


def save_features(store: dict[str, list[TokenFeatures]], path) -> None:
    Path(path).write_bytes(features_to_bytes(store))


def load_features(path) -> dict[str, list[TokenFeatures]]:
    return features_from_bytes(Path(path).read_bytes())


def save_dataset(dataset: Dataset, directory) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    save_manifest(dataset.videos, d / MANIFEST_NAME)
    store = {v.id: dataset.feature_store.get(v.id, []) for v in dataset.videos}
    save_features(store, d / FEATURES_NAME)


def load_dataset(directory, with_features: bool = True) -> Dataset:
    d = Path(directory)
    mpath = d / MANIFEST_NAME
    if not mpath.is_file():
        raise DataError(f"missing manifest {mpath}")
    videos = load_manifest(mpath)
    if not with_features:
        return Dataset.manifest_only(videos)
    fpath = d / FEATURES_NAME
    if not fpath.is_file():
        raise MissingFeatures(f"missing feature file {fpath}")
    return Dataset(videos, load_features(fpath))


def resolve_split(directory, split: str) -> Path:
    """``D/<split>`` when the synth command wrote train/test subsets, else ``D``."""
    d = Path(directory)
    sub = d / split
    if (sub / MANIFEST_NAME).is_file():
        return sub
    return d
