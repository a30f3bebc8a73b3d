"""Central finite-difference checks of every analytic gradient in the package."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .loss import LOSS_KINDS, ACAConfig, batch_loss, loss_fn
from .model import LinearHead, ModelBundle, RealignLayer

TOLERANCE = 1e-4


@dataclass
class CheckResult:
    name: str
    max_rel_err: float
    n_points: int
    tol: float = TOLERANCE

    @property
    def passed(self) -> bool:
        return bool(self.max_rel_err < self.tol)


def rel_err(analytic, numeric, floor: float) -> float:
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    if a.size == 0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom))


def loss_grid(kind: str, cfg: ACAConfig = ACAConfig(), keep_out: float = 1e-3):
    """The (p, y) grid used for loss checks, minus points near the kinks."""
    p = np.round(np.arange(1, 100) / 100.0, 2)
    p, y = np.meshgrid(p, [0, 1])
    p, y = p.ravel(), y.ravel()
    ok = (p > cfg.eps + keep_out) & (p < 1.0 - cfg.eps - keep_out)
    if kind == "aca":
        ok &= np.abs(p - cfg.mu) > keep_out
    return p[ok], y[ok]


def check_loss(kind: str, cfg: ACAConfig = ACAConfig(), h: float = 1e-6) -> CheckResult:
    loss, grad = loss_fn(kind, cfg)
    p, y = loss_grid(kind, cfg)
    numeric = (loss(p + h, y) - loss(p - h, y)) / (2 * h)
    return CheckResult(f"loss:{kind}", rel_err(grad(p, y), numeric, 1e-12), p.size)


def _fd(f, arr: np.ndarray, h: float) -> np.ndarray:
    """Central differences of scalar ``f()`` w.r.t. each entry of ``arr`` (perturbed in place)."""
    out = np.zeros_like(arr)
    it = np.nditer(arr, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = arr[i]
        arr[i] = old + h
        up = f()
        arr[i] = old - h
        down = f()
        arr[i] = old
        out[i] = (up - down) / (2 * h)
    return out


def random_layer(k=6, d=5, r=2, alpha=16.0, dropout=0.0, seed=0) -> RealignLayer:
    rng = np.random.default_rng(seed)
    return RealignLayer(rng.normal(size=(d, k)) / np.sqrt(k), rng.normal(size=(d, r)),
                        rng.normal(size=(r, k)), alpha, r, dropout)


def check_realign(layer: RealignLayer, T: int = 4, seed: int = 0, h: float = 1e-4,
                  name: str = "realign") -> list[CheckResult]:
    """dL/dphi_up, dL/dphi_down, dL/dX for L = sum(G * H).

    With dropout enabled the mask is replayed from a fixed seed on every call.
    """
    rng = np.random.default_rng(seed + 1)
    X = rng.normal(size=(T, layer.k))
    G = rng.normal(size=(T, layer.d))
    training = layer.dropout_rate > 0

    def objective():
        H = layer.forward(X, training, np.random.default_rng(seed + 2))
        return float(np.sum(G * H))

    layer.forward(X, training, np.random.default_rng(seed + 2))
    grads = layer.backward(G)
    results = []
    for key, arr in (("phi_up", layer.phi_up), ("phi_down", layer.phi_down), ("x", X)):
        numeric = _fd(objective, arr, h)
        results.append(CheckResult(f"{name}.{key}", rel_err(grads[key], numeric, 1e-8), arr.size))
    layer._cache = None
    return results


def random_bundle(k_v=4, k_a=3, r=2, seed=0) -> ModelBundle:
    rng = np.random.default_rng(seed)
    rv = random_layer(k_v, k_v, r, seed=seed + 10)
    ra = random_layer(k_a, k_a, r, seed=seed + 20)
    # keep logits moderate so probabilities stay away from the clamp
    rv.phi_up *= 0.1
    ra.phi_up *= 0.1
    heads = [LinearHead(rng.normal(size=n) * 0.3, rng.normal() * 0.1) for n in (k_v, k_a, k_v + k_a)]
    return ModelBundle(rv, ra, *heads)


def check_bundle(kind: str, cfg: ACAConfig = ACAConfig(), batch: int = 4, seed: int = 0,
                 h: float = 1e-6) -> list[CheckResult]:
    """End-to-end: pooled realignment, three heads, and the batch loss."""
    bundle = random_bundle(seed=seed)
    rng = np.random.default_rng(seed + 3)
    xv = rng.normal(size=(batch, 5, bundle.realign_v.k))
    xa = rng.normal(size=(batch, 6, bundle.realign_a.k))
    yva = rng.integers(0, 2, size=(batch, 2))
    labels = np.column_stack([yva, yva.max(axis=1)])

    def objective():
        probs, _ = bundle.forward(xv, xa)
        return batch_loss(probs, labels, cfg, kind).total

    probs, cache = bundle.forward(xv, xa)
    _, dp = batch_loss(probs, labels, cfg, kind, with_grad=True)
    grads = bundle.backward(cache, dp * probs * (1 - probs))
    results = []
    for name, arr in bundle.trainable().items():
        numeric = _fd(objective, arr, h)
        results.append(CheckResult(f"bundle[{kind}].{name}", rel_err(grads[name], numeric, 1e-7), arr.size))
    return results


def run_all(cfg: ACAConfig = ACAConfig()) -> list[CheckResult]:
    results = [check_loss(kind, cfg) for kind in LOSS_KINDS]
    results += check_realign(random_layer(seed=1), name="realign_v")
    results += check_realign(random_layer(k=7, d=4, r=3, seed=2), name="realign_a")
    results += check_realign(random_layer(dropout=0.3, seed=3), name="realign_dropout")
    for kind in LOSS_KINDS:
        results += check_bundle(kind, cfg)
    return results


def format_table(results: list[CheckResult]) -> str:
    width = max(len(r.name) for r in results)
    lines = [f"{'check':<{width}}  {'max rel err':>12}  {'points':>6}  result"]
    for r in results:
        lines.append(f"{r.name:<{width}}  {r.max_rel_err:12.3e}  {r.n_points:6d}  "
                     f"{'PASS' if r.passed else 'FAIL'}")
    return "\n".join(lines)
