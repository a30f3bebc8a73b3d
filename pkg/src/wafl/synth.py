"""Seeded desk-scale dataset generator and a cluster-separation statistic.

Each token's rows are a semantic centroid plus white noise. Fake tokens also
carry a weak artifact along a hidden per-modality direction, modulated by a
three-cycle sinusoid over the token's raw length.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .datamodel import (
    AUDIO,
    BOTH,
    MODALITIES,
    VISUAL,
    Dataset,
    ForgerySegment,
    PadConfig,
    TokenFeatures,
    VideoRecord,
    WordToken,
    label_tokens,
    stack_padded,
)
from .errors import DegenerateClass, InvalidConfig

ROW_NOISE_STD = 0.5
WORD_DURATION = (0.2, 0.8)
ARTIFACT_CYCLES = 3


def _pair(value, name) -> tuple[int, int]:
    try:
        lo, hi = value
    except (TypeError, ValueError):
        raise InvalidConfig(f"{name} must be a [min, max] pair") from None
    if int(lo) != lo or int(hi) != hi or lo > hi:
        raise InvalidConfig(f"{name}: need integers with min <= max, got {value}")
    return int(lo), int(hi)


@dataclass
class SynthConfig:
    n_videos: int = 100
    tokens_per_video: tuple[int, int] = (5, 50)
    fake_token_rate: float = 0.1
    run_length: tuple[int, int] = (1, 1)
    modality_mix: dict = field(default_factory=lambda: {VISUAL: 0.25, AUDIO: 0.25, BOTH: 0.5})
    k_v: int = 32
    k_a: int = 32
    T_v_raw: tuple[int, int] = (8, 16)
    T_a_raw: tuple[int, int] = (16, 32)
    artifact_amplitude: float = 1.0
    semantic_scale: float = 0.1
    seed: int = 0
    # videos split off the tail as a held-out test set by the synth command
    n_test: int = 0

    def __post_init__(self):
        self.tokens_per_video = _pair(self.tokens_per_video, "tokens_per_video")
        self.run_length = _pair(self.run_length, "run_length")
        self.T_v_raw = _pair(self.T_v_raw, "T_v_raw")
        self.T_a_raw = _pair(self.T_a_raw, "T_a_raw")
        if isinstance(self.modality_mix, (list, tuple)):
            self.modality_mix = dict(zip(MODALITIES, self.modality_mix))
        self.modality_mix = {str(k): float(v) for k, v in dict(self.modality_mix).items()}
        self.validate()

    def validate(self) -> None:
        if self.n_videos < 0 or not 0 <= self.n_test <= self.n_videos:
            raise InvalidConfig("need 0 <= n_test <= n_videos")
        if self.tokens_per_video[0] < 0:
            raise InvalidConfig("tokens_per_video must be nonnegative")
        if self.run_length[0] < 1:
            raise InvalidConfig("run_length must be >= 1")
        if self.T_v_raw[0] < 1 or self.T_a_raw[0] < 1:
            raise InvalidConfig("raw lengths must be >= 1")
        if not 0.0 <= self.fake_token_rate < 1.0:
            raise InvalidConfig("fake_token_rate must lie in [0, 1)")
        if set(self.modality_mix) - set(MODALITIES):
            raise InvalidConfig(f"modality_mix keys must be among {MODALITIES}")
        probs = [self.modality_mix.get(m, 0.0) for m in MODALITIES]
        if any(p < 0 or p > 1 for p in probs) or not math.isclose(sum(probs), 1.0, abs_tol=1e-9):
            raise InvalidConfig("modality_mix must be probabilities summing to 1")
        if self.k_v < 2 or self.k_a < 2:
            raise InvalidConfig("feature dims must be >= 2")
        if not self.artifact_amplitude >= 0:
            raise InvalidConfig("artifact_amplitude must be >= 0")
        if not self.semantic_scale > 0:
            raise InvalidConfig("semantic_scale must be > 0")
        if self.seed < 0:
            raise InvalidConfig("seed must be a nonnegative integer")


def artifact_directions(cfg: SynthConfig) -> dict[str, np.ndarray]:
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(0,)))
    dirs = {}
    for m, k in ((VISUAL, cfg.k_v), (AUDIO, cfg.k_a)):
        u = rng.standard_normal(k)
        dirs[m] = u / np.linalg.norm(u)
    return dirs


def _sample_runs(rng, n: int, cfg: SynthConfig) -> list[tuple[int, int, str]]:
    """(start, stop, modality) forgery runs, separated by at least one real token."""
    lo, hi = cfg.run_length
    mean_len = 0.5 * (lo + hi)
    rate = cfg.fake_token_rate
    # start probability giving an expected fake fraction of `rate`
    p_start = rate / (mean_len * (1.0 - rate))
    mods = list(MODALITIES)
    probs = np.array([cfg.modality_mix.get(m, 0.0) for m in mods])
    runs = []
    j = 0
    while j < n:
        if rng.random() < p_start:
            length = min(int(rng.integers(lo, hi + 1)), n - j)
            runs.append((j, j + length, mods[rng.choice(len(mods), p=probs)]))
            j += length + 1
        else:
            j += 1
    return runs


def _artifact_rows(T: int, u: np.ndarray, amplitude: float) -> np.ndarray:
    t = np.arange(T)
    mod = 1.0 + 0.5 * np.sin(2.0 * np.pi * ARTIFACT_CYCLES * t / T)
    return amplitude * mod[:, None] * u[None, :]


def _generate_video(idx: int, cfg: SynthConfig, dirs) -> tuple[VideoRecord, list[TokenFeatures]]:
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(1, idx)))
    n = int(rng.integers(cfg.tokens_per_video[0], cfg.tokens_per_video[1] + 1))
    durations = rng.uniform(*WORD_DURATION, size=n)
    edges = np.concatenate([[0.0], np.cumsum(durations)])
    tokens = [WordToken(f"w{i}", float(edges[i]), float(edges[i + 1])) for i in range(n)]
    runs = _sample_runs(rng, n, cfg)
    segments = [ForgerySegment(tokens[a].t_s, tokens[b - 1].t_e, m) for a, b, m in runs]
    tokens = label_tokens(tokens, segments)

    feats = []
    for tok in tokens:
        per_mod = {}
        for m, k, (lo, hi) in ((VISUAL, cfg.k_v, cfg.T_v_raw), (AUDIO, cfg.k_a, cfg.T_a_raw)):
            T = int(rng.integers(lo, hi + 1))
            centroid = rng.normal(0.0, cfg.semantic_scale, size=k)
            rows = centroid[None, :] + rng.normal(0.0, ROW_NOISE_STD, size=(T, k))
            if (tok.fake_v if m == VISUAL else tok.fake_a) and cfg.artifact_amplitude > 0:
                rows = rows + _artifact_rows(T, dirs[m], cfg.artifact_amplitude)
            per_mod[m] = rows.astype(np.float32)
        feats.append(TokenFeatures(per_mod[VISUAL], per_mod[AUDIO]))
    video = VideoRecord(f"synth_{cfg.seed}_{idx:05d}", float(edges[-1]), tokens, segments)
    return video, feats


def generate(cfg: SynthConfig) -> Dataset:
    """Build a dataset; a pure function of ``cfg``."""
    cfg.validate()
    dirs = artifact_directions(cfg)
    videos, store = [], {}
    for i in range(cfg.n_videos):
        video, feats = _generate_video(i, cfg, dirs)
        videos.append(video)
        store[video.id] = feats
    return Dataset(videos, store)


def split(dataset: Dataset, n_test: int) -> tuple[Dataset, Dataset]:
    """Head/tail split into (train, test)."""
    cut = len(dataset.videos) - n_test
    return dataset.subset(0, cut), dataset.subset(cut)


def pooled_raw_features(dataset: Dataset, pad: PadConfig | None = None) -> np.ndarray:
    """Time-averaged padded inputs, visual then audio: shape (N, k_v + k_a)."""
    xv, xa = stack_padded(dataset, pad or PadConfig(), dtype=np.float64)
    return np.concatenate([xv.mean(axis=1), xa.mean(axis=1)], axis=1)


def separation_statistic(dataset: Dataset, features: np.ndarray, eps: float = 1e-12) -> float:
    """Squared distance between class means over the summed class variances.

    ``features`` holds one row per token in dataset order; classes are the
    fused labels.
    """
    fake = dataset.labels()[:, 2].astype(bool)
    return separation_ratio(np.asarray(features, dtype=np.float64), fake, eps)


def separation_ratio(features: np.ndarray, fake: np.ndarray, eps: float = 1e-12) -> float:
    if len(features) != len(fake):
        raise DegenerateClass("features and labels differ in length")
    if not fake.any() or fake.all():
        raise DegenerateClass("both real and fake tokens are required")
    a, b = features[fake], features[~fake]
    gap = a.mean(axis=0) - b.mean(axis=0)
    spread = a.var(axis=0).sum() + b.var(axis=0).sum()
    return float(gap @ gap / (spread + eps))
