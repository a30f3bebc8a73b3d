"""Word-anchored proposals and AP@IoU / AR@N scoring.

Proposals are ranked by score, ties broken by earlier start time and then by
video id. Matching is greedy in that order: a proposal claims the unmatched
ground-truth segment of its video with the highest IoU, provided that IoU
reaches the threshold.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .datamodel import Dataset, PadConfig, VideoRecord, stack_padded
from .errors import InvalidConfig, ScoreCountMismatch

# absorbs float noise in IoU values that sit exactly on a threshold
IOU_TOL = 1e-9


@dataclass(frozen=True)
class Proposal:
    t_s: float
    t_e: float
    score: float
    video_id: str = ""


def default_ar_grid() -> list[float]:
    return [round(0.5 + 0.05 * i, 2) for i in range(10)]


@dataclass
class EvalConfig:
    ap_thresholds: list[float] = field(default_factory=lambda: [0.5, 0.75, 0.95])
    ar_caps: list[int] = field(default_factory=lambda: [100, 50, 20, 10, 5, 2])
    ar_iou_grid: list[float] = field(default_factory=default_ar_grid)
    merge_adjacent: bool = False
    merge_score_threshold: float = 0.5

    def __post_init__(self):
        if any(not 0 < t <= 1 for t in list(self.ap_thresholds) + list(self.ar_iou_grid)):
            raise InvalidConfig("IoU thresholds must lie in (0, 1]")
        if any(int(c) != c or c < 1 for c in self.ar_caps):
            raise InvalidConfig("AR caps must be positive integers")
        if not 0 <= self.merge_score_threshold <= 1:
            raise InvalidConfig("merge_score_threshold must be a probability")
        self.ar_caps = [int(c) for c in self.ar_caps]


@dataclass
class EvalReport:
    ap: dict[float, float]
    ar: dict[int, float]
    counts: dict[str, int]
    warnings: list[str] = field(default_factory=list)

    def to_json(self) -> dict:
        doc = {
            "ap": {f"{t:.2f}": v for t, v in self.ap.items()},
            "ar": {str(n): v for n, v in self.ar.items()},
            "counts": dict(self.counts),
        }
        if self.warnings:
            doc["warnings"] = list(self.warnings)
        return doc


def temporal_iou(a, b) -> float:
    inter = min(a[1], b[1]) - max(a[0], b[0])
    if inter <= 0:
        return 0.0
    union = max(a[1], b[1]) - min(a[0], b[0])
    return inter / union


def _rank_key(p: Proposal):
    return (-p.score, p.t_s, p.video_id)


def generate_proposals(video: VideoRecord, scores, cfg: EvalConfig | None = None) -> list[Proposal]:
    cfg = cfg or EvalConfig()
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    if scores.size != video.n_tokens:
        raise ScoreCountMismatch(
            f"video {video.id}: {video.n_tokens} tokens but {scores.size} scores"
        )
    toks = video.tokens
    props = []
    i = 0
    while i < len(toks):
        j = i + 1
        if cfg.merge_adjacent and scores[i] >= cfg.merge_score_threshold:
            while j < len(toks) and scores[j] >= cfg.merge_score_threshold:
                j += 1
        props.append(Proposal(toks[i].t_s, toks[j - 1].t_e, float(scores[i:j].min()), video.id))
        i = j
    props.sort(key=_rank_key)
    return props


def _match(ranked: list[Proposal], gt: dict[str, list[tuple[float, float]]], tau: float) -> np.ndarray:
    """TP flags for ranked proposals under greedy one-to-one matching."""
    used = {vid: np.zeros(len(segs), dtype=bool) for vid, segs in gt.items()}
    tp = np.zeros(len(ranked), dtype=bool)
    for n, p in enumerate(ranked):
        segs = gt.get(p.video_id)
        if not segs:
            continue
        ious = np.array([temporal_iou((p.t_s, p.t_e), s) for s in segs])
        ious[used[p.video_id]] = -1.0
        best = int(np.argmax(ious))
        if ious[best] >= tau - IOU_TOL:
            used[p.video_id][best] = True
            tp[n] = True
    return tp


def _gt_map(gt) -> dict[str, list[tuple[float, float]]]:
    if isinstance(gt, dict):
        return {vid: [(float(s[0]), float(s[1])) for s in segs] for vid, segs in gt.items()}
    out: dict[str, list] = {}
    for v in gt:
        out[v.id] = [(s.t_s, s.t_e) for s in v.gt_segments]
    return out


def average_precision(proposals: list[Proposal], gt, tau: float) -> tuple[float, bool]:
    """All-point interpolated AP of pooled proposals.

    ``gt`` maps video id to ``(t_s, t_e)`` pairs (or is a list of VideoRecord).
    Returns ``(ap, ok)`` where ``ok`` is False when there is no ground truth.
    """
    gt = _gt_map(gt)
    n_gt = sum(len(s) for s in gt.values())
    if n_gt == 0:
        return 0.0, False
    ranked = sorted(proposals, key=_rank_key)
    if not ranked:
        return 0.0, True
    tp = _match(ranked, gt, tau)
    ctp = np.cumsum(tp)
    precision = ctp / np.arange(1, len(ranked) + 1)
    recall = ctp / n_gt
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    steps = np.diff(np.concatenate([[0.0], recall]))
    return float(np.sum(steps * envelope)), True


def average_recall_at_n(per_video: dict[str, list[Proposal]], gt, cap: int,
                        cfg: EvalConfig | None = None) -> float:
    """Pooled recall of the top-``cap`` proposals per video, averaged over the IoU grid."""
    cfg = cfg or EvalConfig()
    gt = _gt_map(gt)
    n_gt = sum(len(s) for s in gt.values())
    if n_gt == 0:
        return 0.0
    kept = []
    for vid, props in per_video.items():
        kept.extend(sorted(props, key=_rank_key)[:cap])
    kept.sort(key=_rank_key)
    recalls = [_match(kept, gt, tau).sum() / n_gt for tau in cfg.ar_iou_grid]
    return float(np.mean(recalls))


def evaluate(videos, scores: dict[str, np.ndarray], cfg: EvalConfig | None = None) -> EvalReport:
    """Full protocol over a dataset (or list of videos) and fused scores per video id."""
    cfg = cfg or EvalConfig()
    if isinstance(videos, Dataset):
        videos = videos.videos
    per_video = {}
    for v in videos:
        if v.id not in scores:
            raise ScoreCountMismatch(f"no scores for video {v.id}")
        per_video[v.id] = generate_proposals(v, scores[v.id], cfg)
    pooled = [p for props in per_video.values() for p in props]
    gt = _gt_map(videos)
    warnings = []
    ap = {}
    for tau in cfg.ap_thresholds:
        ap[tau], ok = average_precision(pooled, gt, tau)
        if not ok and "no ground-truth segments; AP reported as 0" not in warnings:
            warnings.append("no ground-truth segments; AP reported as 0")
    ar = {n: average_recall_at_n(per_video, gt, n, cfg) for n in cfg.ar_caps}
    counts = {
        "videos": len(videos),
        "proposals": len(pooled),
        "gt_segments": sum(len(s) for s in gt.values()),
    }
    return EvalReport(ap, ar, counts, warnings)


def score_dataset(bundle, dataset: Dataset, pad: PadConfig, chunk: int = 4096) -> dict[str, np.ndarray]:
    """Eval-mode fused-head scores per video id."""
    xv, xa = stack_padded(dataset, pad)
    fused = np.empty(len(xv))
    for s in range(0, len(xv), chunk):
        probs, _ = bundle.forward(xv[s : s + chunk], xa[s : s + chunk])
        fused[s : s + chunk] = probs[:, 2]
    bundle.realign_v._cache = bundle.realign_a._cache = None
    out, j = {}, 0
    for v in dataset.videos:
        out[v.id] = fused[j : j + v.n_tokens]
        j += v.n_tokens
    return out


def oracle_ap(proposals: list[Proposal], gt, tau: float) -> float:
    """Reference AP by brute force: explicit PR table and suffix-max envelope.

    Written independently of ``average_precision`` (pure Python, O(P*G)
    matching) and used only to cross-check it.
    """
    gt = _gt_map(gt)
    total = sum(len(s) for s in gt.values())
    if total == 0:
        return 0.0
    order = sorted(range(len(proposals)),
                   key=lambda i: (-proposals[i].score, proposals[i].t_s, proposals[i].video_id, i))
    claimed = set()
    table = []  # (precision, recall) after each rank
    hits = 0
    for rank, i in enumerate(order, start=1):
        p = proposals[i]
        best, best_iou = None, -1.0
        for g, (s, e) in enumerate(gt.get(p.video_id, [])):
            if (p.video_id, g) in claimed:
                continue
            inter = max(0.0, min(p.t_e, e) - max(p.t_s, s))
            iou = inter / (max(p.t_e, e) - min(p.t_s, s)) if inter > 0 else 0.0
            if iou > best_iou:
                best, best_iou = g, iou
        if best is not None and best_iou >= tau - IOU_TOL:
            claimed.add((p.video_id, best))
            hits += 1
        table.append((hits / rank, hits / total))
    ap, prev_recall = 0.0, 0.0
    for k, (_, rec) in enumerate(table):
        interp = max(prec for prec, _ in table[k:])
        ap += (rec - prev_recall) * interp
        prev_recall = rec
    return ap
