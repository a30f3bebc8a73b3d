"""Feature realignment over a frozen projection, pooling, and linear heads.

A realignment layer computes, per row ``x``::

    h = W0 @ x + (alpha / r) * phi_up @ phi_down @ dropout(x)

``W0`` is frozen; only ``phi_up`` and ``phi_down`` train. Dropout touches the
low-rank branch only. Everything here is batched over leading axes, so a
single token is just a batch of one.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .datamodel import TokenFeatures
from .errors import FormatError, InvalidConfig, InvalidRank, ShapeMismatch, StaleMask

CHECKPOINT_MAGIC = b"WAFLCKP1"
CHECKPOINT_VERSION = 1
_U32 = struct.Struct("<I")


def _f32(a: np.ndarray) -> np.ndarray:
    # keep parameters float32-representable so checkpoints store them exactly
    return np.asarray(a, dtype=np.float32).astype(np.float64)


def sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(z, dtype=np.float64)))


class RealignLayer:
    def __init__(self, W0, phi_up, phi_down, alpha: float, r: int, dropout_rate: float = 0.0):
        self.W0 = np.asarray(W0, dtype=np.float64)
        self.phi_up = np.asarray(phi_up, dtype=np.float64)
        self.phi_down = np.asarray(phi_down, dtype=np.float64)
        self.alpha = float(alpha)
        self.r = int(r)
        self.dropout_rate = float(dropout_rate)
        d, k = self.W0.shape
        if self.phi_up.shape != (d, self.r) or self.phi_down.shape != (self.r, k):
            raise ShapeMismatch(
                f"phi_up {self.phi_up.shape} / phi_down {self.phi_down.shape} "
                f"do not fit W0 {self.W0.shape} at rank {self.r}"
            )
        if self.r < 1 or self.r > min(d, k):
            raise InvalidRank(f"rank {self.r} outside [1, min(d, k)={min(d, k)}]")
        if not self.alpha > 0:
            raise InvalidConfig("alpha must be positive")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise InvalidConfig("dropout_rate must lie in [0, 1)")
        self._cache = None

    @property
    def d(self) -> int:
        return self.W0.shape[0]

    @property
    def k(self) -> int:
        return self.W0.shape[1]

    @property
    def scale(self) -> float:
        return self.alpha / self.r

    def forward(self, X, training: bool = False, rng: np.random.Generator | None = None) -> np.ndarray:
        """Map ``(..., T, k)`` inputs to ``(..., T, d)``; caches what backward needs."""
        X = np.asarray(X, dtype=np.float64)
        if X.ndim < 2 or X.shape[-1] != self.k:
            raise ShapeMismatch(f"expected (..., T, {self.k}) input, got {X.shape}")
        mask = None
        D = X
        if training and self.dropout_rate > 0:
            if rng is None:
                raise ValueError("training-mode dropout needs an rng")
            mask = (rng.random(X.shape) >= self.dropout_rate) / (1.0 - self.dropout_rate)
            D = X * mask
        Z = D @ self.phi_down.T
        H = X @ self.W0.T + self.scale * (Z @ self.phi_up.T)
        self._cache = (D, Z, mask)
        return H

    def backward(self, G) -> dict[str, np.ndarray]:
        """Gradients of the trainable matrices and of the input, given dL/dH."""
        if self._cache is None:
            raise StaleMask("backward() without a preceding forward()")
        D, Z, mask = self._cache
        self._cache = None
        G = np.asarray(G, dtype=np.float64)
        if G.shape != Z.shape[:-1] + (self.d,):
            raise ShapeMismatch(f"upstream gradient {G.shape} does not match output")
        s = self.scale
        G2 = G.reshape(-1, self.d)
        GU = G2 @ self.phi_up
        d_up = s * (G2.T @ Z.reshape(-1, self.r))
        d_down = s * (GU.T @ D.reshape(-1, self.k))
        dX_low = s * (GU @ self.phi_down).reshape(D.shape)
        if mask is not None:
            dX_low = dX_low * mask
        dX = G @ self.W0 + dX_low
        return {"phi_up": d_up, "phi_down": d_down, "x": dX}


def init_realign(k: int, d: int, r: int, alpha: float = 16.0, dropout_rate: float = 0.1,
                 seed: int | np.random.Generator = 0) -> RealignLayer:
    """Frozen ``W0 ~ N(0, 1/k)``, zero ``phi_up``, Kaiming-uniform ``phi_down``."""
    if r < 1 or r > min(d, k):
        raise InvalidRank(f"rank {r} outside [1, min(d, k)={min(d, k)}]")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    W0 = _f32(rng.normal(0.0, 1.0 / math.sqrt(k), size=(d, k)))
    bound = math.sqrt(6.0 / k)
    # float32 rounding can land on the bound; keep the interval open
    b32 = np.float32(bound)
    if b32 >= bound:
        b32 = np.nextafter(b32, np.float32(0))
    phi_down = np.clip(rng.uniform(-bound, bound, size=(r, k)).astype(np.float32), -b32, b32)
    phi_down = phi_down.astype(np.float64)
    return RealignLayer(W0, np.zeros((d, r)), phi_down, alpha, r, dropout_rate)


def pool(H) -> np.ndarray:
    """Global average over the time axis."""
    return np.asarray(H).mean(axis=-2)


class LinearHead:
    def __init__(self, W, b: float = 0.0):
        self.W = np.asarray(W, dtype=np.float64).reshape(-1)
        self.b = np.asarray(b, dtype=np.float64).reshape(())

    @property
    def dim(self) -> int:
        return self.W.shape[0]

    def logit(self, f) -> np.ndarray:
        f = np.asarray(f, dtype=np.float64)
        if f.shape[-1] != self.dim:
            raise ShapeMismatch(f"head expects {self.dim} features, got {f.shape[-1]}")
        return f @ self.W + self.b

    def forward(self, f):
        return sigmoid(self.logit(f))


def head_forward(head: LinearHead, f):
    return head.forward(f)


def init_head(dim: int, rng: np.random.Generator) -> LinearHead:
    bound = 1.0 / math.sqrt(dim)
    return LinearHead(_f32(rng.uniform(-bound, bound, size=dim)), _f32(rng.uniform(-bound, bound)))


@dataclass
class ModelConfig:
    rank: int = 8
    alpha: float = 16.0
    dropout: float = 0.1
    # projection dims; None keeps the input dim
    d_v: int | None = None
    d_a: int | None = None


HEADS = ("v", "a", "va")


class ModelBundle:
    def __init__(self, realign_v: RealignLayer, realign_a: RealignLayer,
                 head_v: LinearHead, head_a: LinearHead, head_va: LinearHead):
        self.realign_v = realign_v
        self.realign_a = realign_a
        self.head_v = head_v
        self.head_a = head_a
        self.head_va = head_va
        if head_v.dim != realign_v.d or head_a.dim != realign_a.d:
            raise ShapeMismatch("unimodal heads must match their projection dims")
        if head_va.dim != realign_v.d + realign_a.d:
            raise ShapeMismatch("fusion head input must be d_v + d_a")

    @property
    def d_v(self) -> int:
        return self.realign_v.d

    @property
    def d_a(self) -> int:
        return self.realign_a.d

    def tensors(self) -> dict[str, np.ndarray]:
        """Every parameter by checkpoint name, frozen ones included."""
        out = {}
        for m in ("v", "a"):
            layer = getattr(self, f"realign_{m}")
            out[f"realign_{m}.W0"] = layer.W0
            out[f"realign_{m}.phi_up"] = layer.phi_up
            out[f"realign_{m}.phi_down"] = layer.phi_down
        for h in HEADS:
            head = getattr(self, f"head_{h}")
            out[f"head_{h}.W"] = head.W
            out[f"head_{h}.b"] = head.b
        return out

    def trainable(self) -> dict[str, np.ndarray]:
        return {k: v for k, v in self.tensors().items() if not k.endswith(".W0")}

    def forward(self, xv, xa, training: bool = False, rng=None):
        """Batched forward. Returns ``(probs, cache)`` with probs of shape (..., 3)
        ordered visual, audio, fused."""
        f_v = pool(self.realign_v.forward(xv, training, rng))
        f_a = pool(self.realign_a.forward(xa, training, rng))
        f_va = np.concatenate([f_v, f_a], axis=-1)
        probs = np.stack(
            [self.head_v.forward(f_v), self.head_a.forward(f_a), self.head_va.forward(f_va)],
            axis=-1,
        )
        cache = {"f_v": f_v, "f_a": f_a, "f_va": f_va, "T_v": np.shape(xv)[-2], "T_a": np.shape(xa)[-2]}
        return probs, cache

    def backward(self, cache, dz) -> dict[str, np.ndarray]:
        """Parameter gradients given dL/dlogit for each head, shape (..., 3)."""
        dz = np.asarray(dz, dtype=np.float64)
        f_v, f_a, f_va = cache["f_v"], cache["f_a"], cache["f_va"]
        grads = {}
        for j, (h, f) in enumerate(zip(HEADS, (f_v, f_a, f_va))):
            g = dz[..., j]
            grads[f"head_{h}.W"] = g.reshape(-1) @ f.reshape(-1, f.shape[-1])
            grads[f"head_{h}.b"] = np.asarray(g.sum())
        df_v = dz[..., 0, None] * self.head_v.W + dz[..., 2, None] * self.head_va.W[: self.d_v]
        df_a = dz[..., 1, None] * self.head_a.W + dz[..., 2, None] * self.head_va.W[self.d_v :]
        for m, df, T in (("v", df_v, cache["T_v"]), ("a", df_a, cache["T_a"])):
            layer = getattr(self, f"realign_{m}")
            G = np.broadcast_to(df[..., None, :] / T, df.shape[:-1] + (T, layer.d))
            g = layer.backward(G)
            grads[f"realign_{m}.phi_up"] = g["phi_up"]
            grads[f"realign_{m}.phi_down"] = g["phi_down"]
        return grads

    def fused_features(self, xv, xa) -> np.ndarray:
        """Eval-mode concatenated pooled features, the fusion head's input."""
        f_v = pool(self.realign_v.forward(xv))
        f_a = pool(self.realign_a.forward(xa))
        self.realign_v._cache = self.realign_a._cache = None
        return np.concatenate([f_v, f_a], axis=-1)


def forward_token(bundle: ModelBundle, features: TokenFeatures, training: bool = False, rng=None):
    """Single padded token -> (p_v, p_a, p_va, cache)."""
    probs, cache = bundle.forward(features.visual, features.audio, training, rng)
    return float(probs[0]), float(probs[1]), float(probs[2]), cache


def init_bundle(k_v: int, k_a: int, cfg: ModelConfig | None = None, seed: int = 0) -> ModelBundle:
    cfg = cfg or ModelConfig()
    d_v = cfg.d_v or k_v
    d_a = cfg.d_a or k_a
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(2,)))
    rv = init_realign(k_v, d_v, cfg.rank, cfg.alpha, cfg.dropout, rng)
    ra = init_realign(k_a, d_a, cfg.rank, cfg.alpha, cfg.dropout, rng)
    return ModelBundle(rv, ra, init_head(d_v, rng), init_head(d_a, rng), init_head(d_v + d_a, rng))


def model_config_of(bundle: ModelBundle) -> dict:
    rv, ra = bundle.realign_v, bundle.realign_a
    return {
        "rank": rv.r,
        "rank_a": ra.r,
        "alpha": rv.alpha,
        "alpha_a": ra.alpha,
        "dropout": rv.dropout_rate,
        "dropout_a": ra.dropout_rate,
    }


# -- checkpoint ------------------------------------------------------------


def checkpoint_bytes(bundle: ModelBundle, config: dict | None = None) -> bytes:
    blob = dict(config or {})
    blob["layers"] = model_config_of(bundle)
    raw_cfg = json.dumps(blob, sort_keys=True).encode("utf-8")
    tensors = bundle.tensors()
    parts = [CHECKPOINT_MAGIC, _U32.pack(CHECKPOINT_VERSION), _U32.pack(len(tensors) + 1)]
    for name, arr in tensors.items():
        if name.endswith(".W") and name.startswith("head_"):
            arr = arr.reshape(1, -1)
        parts.append(_tensor_header(name, arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    parts.append(_tensor_header("config", (len(raw_cfg),)))
    parts.append(raw_cfg)
    return b"".join(parts)


def _tensor_header(name: str, shape) -> bytes:
    raw = name.encode("utf-8")
    return b"".join(
        [_U32.pack(len(raw)), raw, _U32.pack(len(shape))] + [_U32.pack(int(s)) for s in shape]
    )


def save_checkpoint(bundle: ModelBundle, path, config: dict | None = None) -> None:
    Path(path).write_bytes(checkpoint_bytes(bundle, config))


def parse_checkpoint(buf: bytes) -> tuple[dict[str, np.ndarray], dict]:
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(buf):
            raise FormatError("checkpoint truncated")
        out = buf[pos : pos + n]
        pos += n
        return out

    def u32():
        return _U32.unpack(take(4))[0]

    if take(len(CHECKPOINT_MAGIC)) != CHECKPOINT_MAGIC:
        raise FormatError("bad checkpoint magic")
    version = u32()
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    tensors, config = {}, None
    for _ in range(u32()):
        name = take(u32()).decode("utf-8")
        shape = tuple(u32() for _ in range(u32()))
        n = int(np.prod(shape)) if shape else 1
        if name == "config":
            try:
                config = json.loads(take(n).decode("utf-8"))
            except (UnicodeDecodeError, json.JSONDecodeError) as exc:
                raise FormatError(f"corrupt config blob: {exc}") from exc
        else:
            data = np.frombuffer(take(4 * n), dtype="<f4").reshape(shape)
            tensors[name] = data.astype(np.float64)
    if pos != len(buf):
        raise FormatError("trailing bytes after checkpoint")
    if config is None:
        raise FormatError("checkpoint has no config blob")
    return tensors, config


def load_checkpoint(path) -> tuple[ModelBundle, dict]:
    p = Path(path)
    if not p.is_file():
        raise FormatError(f"checkpoint not found: {p}")
    tensors, config = parse_checkpoint(p.read_bytes())
    layers = config.get("layers", {})
    try:
        rv = RealignLayer(tensors["realign_v.W0"], tensors["realign_v.phi_up"],
                          tensors["realign_v.phi_down"], layers["alpha"], layers["rank"],
                          layers["dropout"])
        ra = RealignLayer(tensors["realign_a.W0"], tensors["realign_a.phi_up"],
                          tensors["realign_a.phi_down"], layers["alpha_a"], layers["rank_a"],
                          layers["dropout_a"])
        heads = [LinearHead(tensors[f"head_{h}.W"], tensors[f"head_{h}.b"]) for h in HEADS]
    except KeyError as exc:
        raise FormatError(f"checkpoint missing {exc}") from exc
    return ModelBundle(rv, ra, *heads), config
