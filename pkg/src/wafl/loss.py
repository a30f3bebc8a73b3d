"""Asymmetric margin loss, BCE and focal baselines, and per-head aggregation.

All per-sample functions are vectorised over ``p`` and ``y`` and clamp ``p``
to ``[eps, 1 - eps]`` before taking logs. Gradients are exact derivatives of
the clamped expressions, so they vanish where the clamp is active.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidConfig, InvalidLabel, NonFinite

LOSS_KINDS = ("aca", "focal", "bce")


@dataclass(frozen=True)
class ACAConfig:
    gamma_plus: float = 0.0
    gamma_minus: float = 4.0
    mu: float = 0.05
    eps: float = 1e-7
    # exponent used by the symmetric focal baseline
    focal_gamma: float = 2.0

    def __post_init__(self):
        if self.gamma_plus < 0 or self.gamma_minus < 0 or self.focal_gamma < 0:
            raise InvalidConfig("modulation exponents must be nonnegative")
        if not 0.0 <= self.mu < 1.0:
            raise InvalidConfig("mu must lie in [0, 1)")
        if not 0.0 < self.eps <= 1e-3:
            raise InvalidConfig("eps must lie in (0, 1e-3]")


@dataclass(frozen=True)
class LossReport:
    l_v: float
    l_a: float
    l_va: float

    @property
    def total(self) -> float:
        return self.l_v + self.l_a + self.l_va

    def as_dict(self) -> dict:
        return {"l_v": self.l_v, "l_a": self.l_a, "l_va": self.l_va, "total": self.total}


def _prepare(p, y, eps):
    p = np.asarray(p, dtype=np.float64)
    y = np.asarray(y)
    if not np.all(np.isfinite(p)):
        raise NonFinite("probability is NaN or infinite")
    if not np.all((y == 0) | (y == 1)):
        raise InvalidLabel("labels must be 0 or 1")
    pc = np.clip(p, eps, 1.0 - eps)
    active = (p >= eps) & (p <= 1.0 - eps)
    return pc, y.astype(bool), active


def _pow(base, e):
    # 0 ** 0 == 1, and e == 0 never multiplies an infinite log term
    return np.ones_like(base) if e == 0 else base**e


def _dpow(base, e):
    """d/dbase of base**e, with the e == 0 case identically zero."""
    if e == 0:
        return np.zeros_like(base)
    if e == 1:
        return np.ones_like(base)
    return e * base ** (e - 1)


def margin_shift(p, mu):
    return np.maximum(np.asarray(p, dtype=np.float64) - mu, 0.0)


def _ret(x):
    return float(x) if np.ndim(x) == 0 else x


def aca_loss(p, y, cfg: ACAConfig = ACAConfig()):
    pc, pos, _ = _prepare(p, y, cfg.eps)
    pm = margin_shift(pc, cfg.mu)
    l_pos = -_pow(1.0 - pc, cfg.gamma_plus) * np.log(pc)
    l_neg = -_pow(pm, cfg.gamma_minus) * np.log1p(-pm)
    # the margin yields pm == 0 exactly, so the negative branch is exactly zero there
    l_neg = np.where(pm > 0, l_neg, 0.0)
    return _ret(np.where(pos, l_pos, l_neg))


def aca_grad(p, y, cfg: ACAConfig = ACAConfig()):
    pc, pos, active = _prepare(p, y, cfg.eps)
    gp, gm = cfg.gamma_plus, cfg.gamma_minus
    q = 1.0 - pc
    g_pos = _dpow(q, gp) * np.log(pc) - _pow(q, gp) / pc
    pm = margin_shift(pc, cfg.mu)
    with np.errstate(divide="ignore", invalid="ignore"):
        g_neg = -_dpow(pm, gm) * np.log1p(-pm) + _pow(pm, gm) / (1.0 - pm)
    g_neg = np.where(pm > 0, g_neg, 0.0)
    return _ret(np.where(active, np.where(pos, g_pos, g_neg), 0.0))


def focal_loss(p, y, gamma: float = 2.0, eps: float = 1e-7):
    pc, pos, _ = _prepare(p, y, eps)
    l_pos = -_pow(1.0 - pc, gamma) * np.log(pc)
    l_neg = -_pow(pc, gamma) * np.log1p(-pc)
    return _ret(np.where(pos, l_pos, l_neg))


def focal_grad(p, y, gamma: float = 2.0, eps: float = 1e-7):
    pc, pos, active = _prepare(p, y, eps)
    q = 1.0 - pc
    g_pos = _dpow(q, gamma) * np.log(pc) - _pow(q, gamma) / pc
    g_neg = -_dpow(pc, gamma) * np.log1p(-pc) + _pow(pc, gamma) / q
    return _ret(np.where(active, np.where(pos, g_pos, g_neg), 0.0))


def bce_loss(p, y, eps: float = 1e-7):
    pc, pos, _ = _prepare(p, y, eps)
    return _ret(np.where(pos, -np.log(pc), -np.log1p(-pc)))


def bce_grad(p, y, eps: float = 1e-7):
    pc, pos, active = _prepare(p, y, eps)
    return _ret(np.where(active, np.where(pos, -1.0 / pc, 1.0 / (1.0 - pc)), 0.0))


def loss_fn(kind: str, cfg: ACAConfig = ACAConfig()):
    """``(loss(p, y), grad(p, y))`` for a loss kind name."""
    if kind == "aca":
        return (lambda p, y: aca_loss(p, y, cfg)), (lambda p, y: aca_grad(p, y, cfg))
    if kind == "focal":
        g = cfg.focal_gamma
        return (lambda p, y: focal_loss(p, y, g, cfg.eps)), (lambda p, y: focal_grad(p, y, g, cfg.eps))
    if kind == "bce":
        return (lambda p, y: bce_loss(p, y, cfg.eps)), (lambda p, y: bce_grad(p, y, cfg.eps))
    raise InvalidConfig(f"unknown loss kind {kind!r}; expected one of {LOSS_KINDS}")


def fused_labels(y_v, y_a) -> np.ndarray:
    return (np.asarray(y_v, dtype=bool) | np.asarray(y_a, dtype=bool)).astype(np.int64)


def batch_loss(probs, labels, cfg: ACAConfig = ACAConfig(), kind: str = "aca",
               with_grad: bool = False):
    """Mean per-head loss over a batch.

    ``probs`` and ``labels`` are ``(B, 3)`` in visual, audio, fused order. With
    ``with_grad`` also returns dL/dp of the summed report total, shape (B, 3).
    """
    probs = np.asarray(probs, dtype=np.float64).reshape(-1, 3)
    labels = np.asarray(labels).reshape(-1, 3)
    if probs.shape != labels.shape:
        raise InvalidConfig(f"probs {probs.shape} and labels {labels.shape} differ")
    loss, grad = loss_fn(kind, cfg)
    per = np.asarray(loss(probs, labels)).reshape(probs.shape)
    B = probs.shape[0]
    means = per.mean(axis=0) if B else np.zeros(3)
    report = LossReport(float(means[0]), float(means[1]), float(means[2]))
    if not np.isfinite(report.total):
        raise NonFinite(f"non-finite loss {report.as_dict()}")
    if not with_grad:
        return report
    dp = np.asarray(grad(probs, labels)).reshape(probs.shape) / max(B, 1)
    return report, dp
