"""Word tokens, videos, padding and the in-memory dataset container."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    DimensionMismatch,
    EmptySequence,
    InvalidConfig,
    InvalidInterval,
    InvalidLabel,
    MissingFeatures,
    OverlappingTokens,
)

REAL = "real"
FAKE = "fake"
LABELS = (REAL, FAKE)

VISUAL = "visual"
AUDIO = "audio"
BOTH = "both"
MODALITIES = (VISUAL, AUDIO, BOTH)

REFLECTION = "reflection"
TRAILING = "trailing"
PAD_STRATEGIES = (REFLECTION, TRAILING)


def _check_interval(t_s: float, t_e: float) -> None:
    if not (math.isfinite(t_s) and math.isfinite(t_e)):
        raise InvalidInterval(f"non-finite interval [{t_s}, {t_e}]")
    if t_s < 0 or t_s >= t_e:
        raise InvalidInterval(f"invalid interval [{t_s}, {t_e}]")


@dataclass(frozen=True)
class WordToken:
    word: str
    t_s: float
    t_e: float
    label_v: str = REAL
    label_a: str = REAL

    def __post_init__(self):
        _check_interval(self.t_s, self.t_e)
        for lab in (self.label_v, self.label_a):
            if lab not in LABELS:
                raise InvalidLabel(f"unknown label {lab!r}")

    @property
    def fake_v(self) -> bool:
        return self.label_v == FAKE

    @property
    def fake_a(self) -> bool:
        return self.label_a == FAKE

    @property
    def fake(self) -> bool:
        """Fused label: forged if either modality is."""
        return self.fake_v or self.fake_a


@dataclass(frozen=True)
class ForgerySegment:
    t_s: float
    t_e: float
    modality: str = BOTH

    def __post_init__(self):
        _check_interval(self.t_s, self.t_e)
        if self.modality not in MODALITIES:
            raise InvalidLabel(f"unknown modality {self.modality!r}")

    def covers(self, modality: str) -> bool:
        return self.modality == BOTH or self.modality == modality


@dataclass(frozen=True)
class VideoRecord:
    id: str
    duration: float
    tokens: tuple[WordToken, ...] = ()
    gt_segments: tuple[ForgerySegment, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(self.tokens))
        object.__setattr__(self, "gt_segments", tuple(self.gt_segments))
        if not (math.isfinite(self.duration) and self.duration >= 0):
            raise InvalidInterval(f"video {self.id}: bad duration {self.duration}")
        for item in self.tokens + self.gt_segments:
            if item.t_e > self.duration:
                raise InvalidInterval(
                    f"video {self.id}: interval [{item.t_s}, {item.t_e}] "
                    f"exceeds duration {self.duration}"
                )
        _check_sorted(self.tokens)

    @property
    def n_tokens(self) -> int:
        return len(self.tokens)


@dataclass(frozen=True, eq=False)
class TokenFeatures:
    """Raw per-token feature sequences, one row per timestep."""

    visual: np.ndarray
    audio: np.ndarray

    def __eq__(self, other):
        if not isinstance(other, TokenFeatures):
            return NotImplemented
        return (
            self.visual.dtype == other.visual.dtype
            and self.audio.dtype == other.audio.dtype
            and np.array_equal(self.visual, other.visual)
            and np.array_equal(self.audio, other.audio)
        )


@dataclass(frozen=True)
class PadConfig:
    # target_T_a defaults to the compact synthetic length; see PadConfig.raw_audio()
    target_T_v: int = 16
    target_T_a: int = 32
    strategy_v: str = REFLECTION
    strategy_a: str = TRAILING

    def __post_init__(self):
        if self.target_T_v < 1 or self.target_T_a < 1:
            raise InvalidConfig("padding targets must be >= 1")
        for s in (self.strategy_v, self.strategy_a):
            if s not in PAD_STRATEGIES:
                raise InvalidConfig(f"unknown padding strategy {s!r}")

    @classmethod
    def raw_audio(cls) -> "PadConfig":
        """0.64 s at 25 fps video and 16 kHz audio: 16 frames, 10,240 samples."""
        return cls(target_T_v=16, target_T_a=10_240)


@dataclass
class Dataset:
    videos: list[VideoRecord]
    feature_store: dict[str, list[TokenFeatures]] = field(default_factory=dict)

    def __post_init__(self):
        self.validate()

    @classmethod
    def manifest_only(cls, videos: list[VideoRecord]) -> "Dataset":
        """A view without features, for label/metric work on annotations alone."""
        ds = object.__new__(cls)
        ds.videos = list(videos)
        ds.feature_store = {}
        ds._dims = None
        return ds

    def validate(self) -> None:
        dims = None
        for video in self.videos:
            feats = self.feature_store.get(video.id)
            if feats is None:
                if video.n_tokens:
                    raise MissingFeatures(f"no features for video {video.id}")
                continue
            if len(feats) != video.n_tokens:
                raise MissingFeatures(
                    f"video {video.id}: {video.n_tokens} tokens but "
                    f"{len(feats)} feature entries"
                )
            for tf in feats:
                if tf.visual.ndim != 2 or tf.audio.ndim != 2:
                    raise DimensionMismatch("token features must be 2-D matrices")
                d = (tf.visual.shape[1], tf.audio.shape[1])
                if dims is None:
                    dims = d
                elif d != dims:
                    raise DimensionMismatch(
                        f"video {video.id}: feature dims {d} differ from {dims}"
                    )
        self._dims = dims

    @property
    def feature_dims(self) -> tuple[int, int] | None:
        """(k_v, k_a), or None for a dataset without tokens."""
        return self._dims

    def tokens(self) -> Iterable[tuple[VideoRecord, int, WordToken]]:
        for video in self.videos:
            for i, tok in enumerate(video.tokens):
                yield video, i, tok

    @property
    def n_tokens(self) -> int:
        return sum(v.n_tokens for v in self.videos)

    def labels(self) -> np.ndarray:
        """(N, 3) int array of visual, audio and fused labels in token order."""
        rows = [(t.fake_v, t.fake_a, t.fake) for _, _, t in self.tokens()]
        return np.asarray(rows, dtype=np.int64).reshape(-1, 3)

    def subset(self, start: int, stop: int | None = None) -> "Dataset":
        videos = self.videos[start:stop]
        store = {v.id: self.feature_store[v.id] for v in videos if v.id in self.feature_store}
        return Dataset(videos, store)


def _check_sorted(tokens: Sequence[WordToken]) -> None:
    for a, b in zip(tokens, tokens[1:]):
        if b.t_s < a.t_s:
            raise OverlappingTokens(f"tokens not sorted: {a.word!r} before {b.word!r}")
        if a.t_e > b.t_s:
            raise OverlappingTokens(
                f"tokens {a.word!r} [{a.t_s}, {a.t_e}] and "
                f"{b.word!r} [{b.t_s}, {b.t_e}] overlap"
            )


def segment_words(transcript, duration: float) -> list[WordToken]:
    """Turn aligned ``(word, t_s, t_e)`` triples into sorted, clipped tokens."""
    if not (math.isfinite(duration) and duration > 0):
        raise InvalidInterval(f"duration must be positive, got {duration}")
    raw = []
    for word, t_s, t_e in transcript:
        t_s, t_e = float(t_s), float(t_e)
        if not (math.isfinite(t_s) and math.isfinite(t_e)) or t_s >= t_e:
            raise InvalidInterval(f"word {word!r}: invalid interval [{t_s}, {t_e}]")
        raw.append((t_s, t_e, str(word)))
    raw.sort(key=lambda r: r[0])
    tokens = []
    prev = None
    for t_s, t_e, word in raw:
        if prev is not None and t_s < prev[1]:
            raise OverlappingTokens(f"{prev[2]!r} and {word!r} overlap")
        prev = (t_s, t_e, word)
        t_s, t_e = max(t_s, 0.0), min(t_e, duration)
        if t_s >= t_e:
            # fully outside the clip after clipping
            continue
        tokens.append(WordToken(word, t_s, t_e))
    return tokens


def _overlap(a_s: float, a_e: float, b_s: float, b_e: float) -> float:
    return min(a_e, b_e) - max(a_s, b_s)


def label_tokens(tokens: Sequence[WordToken], gt_segments: Sequence[ForgerySegment]) -> list[WordToken]:
    """Mark a token fake for a modality iff it overlaps a forged segment of
    that modality with positive length. Touching endpoints do not count."""
    out = []
    for tok in tokens:
        fake_v = fake_a = False
        for seg in gt_segments:
            if _overlap(tok.t_s, tok.t_e, seg.t_s, seg.t_e) <= 0:
                continue
            fake_v |= seg.covers(VISUAL)
            fake_a |= seg.covers(AUDIO)
        out.append(
            replace(tok, label_v=FAKE if fake_v else REAL, label_a=FAKE if fake_a else REAL)
        )
    return out


def reflect_index(i: np.ndarray, n: int) -> np.ndarray:
    """Triangular-wave fold of row indices into ``[0, n)`` without edge repeat."""
    i = np.asarray(i)
    if n == 1:
        return np.zeros_like(i)
    period = 2 * (n - 1)
    p = i % period
    return np.where(p < n, p, period - p)


def pad_sequence(seq: np.ndarray, target_T: int, strategy: str) -> np.ndarray:
    """Pad or head-truncate a ``T x k`` sequence to exactly ``target_T`` rows."""
    seq = np.asarray(seq)
    if seq.ndim != 2:
        raise DimensionMismatch(f"expected a 2-D sequence, got shape {seq.shape}")
    T = seq.shape[0]
    if T == 0:
        raise EmptySequence("cannot pad an empty sequence")
    if T >= target_T:
        return seq[:target_T].copy()
    if strategy == TRAILING:
        out = np.zeros((target_T, seq.shape[1]), dtype=seq.dtype)
        out[:T] = seq
        return out
    if strategy == REFLECTION:
        return seq[reflect_index(np.arange(target_T), T)]
    raise ValueError(f"unknown padding strategy {strategy!r}")


def pad_token(tf: TokenFeatures, cfg: PadConfig) -> TokenFeatures:
    return TokenFeatures(
        visual=pad_sequence(tf.visual, cfg.target_T_v, cfg.strategy_v),
        audio=pad_sequence(tf.audio, cfg.target_T_a, cfg.strategy_a),
    )


def stack_padded(dataset: Dataset, cfg: PadConfig, dtype=np.float32) -> tuple[np.ndarray, np.ndarray]:
    """Pad every token and stack into ``(N, T_v, k_v)`` and ``(N, T_a, k_a)`` arrays."""
    dims = dataset.feature_dims
    n = dataset.n_tokens
    if dims is None:
        return (np.zeros((0, cfg.target_T_v, 0), dtype), np.zeros((0, cfg.target_T_a, 0), dtype))
    xv = np.empty((n, cfg.target_T_v, dims[0]), dtype=dtype)
    xa = np.empty((n, cfg.target_T_a, dims[1]), dtype=dtype)
    j = 0
    for video in dataset.videos:
        for tf in dataset.feature_store.get(video.id, []):
            xv[j] = pad_sequence(tf.visual, cfg.target_T_v, cfg.strategy_v)
            xa[j] = pad_sequence(tf.audio, cfg.target_T_a, cfg.strategy_a)
            j += 1
    return xv, xa
