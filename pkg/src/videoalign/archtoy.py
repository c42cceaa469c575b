"""Small numpy versions of the point-map branch: normalization, patch embedding,
self-attention feature levels, zero-conv injection, the normalized regression
loss and the far-depth filter.

Nothing here is trained. Parameters are seeded so shapes, gradients and
invariances can be checked directly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import EmptySelectionError, ShapeMismatchError
from .geometry import AxisNormalization, DepthMap, Intrinsics, PointMap, axis_normalize, unproject

DEFAULT_CHANNELS = 64
DEFAULT_HEADS = 4
DEFAULT_LEVELS = 6
FAR_DEPTH_M = 400.0


@dataclass(frozen=True)
class NormalizedPointMap:
    points: PointMap
    denorm: AxisNormalization

    @property
    def grid(self) -> np.ndarray:
        return self.points.points

    @property
    def valid(self) -> np.ndarray:
        return self.points.valid

    def denormalize(self) -> PointMap:
        return self.denorm.denormalize(self.points)


@dataclass(frozen=True)
class TokenGrid:
    tokens: np.ndarray  # (H', W', C)
    patch_size: int

    @property
    def grid_shape(self) -> tuple[int, int]:
        return self.tokens.shape[:2]

    @property
    def channels(self) -> int:
        return self.tokens.shape[2]

    def flat(self) -> np.ndarray:
        return self.tokens.reshape(-1, self.channels)

    def with_tokens(self, flat: np.ndarray) -> "TokenGrid":
        return TokenGrid(flat.reshape(self.tokens.shape), self.patch_size)


@dataclass(frozen=True)
class FeatureStack:
    levels: tuple[np.ndarray, ...]

    def __post_init__(self):
        levels = tuple(np.asarray(x, dtype=np.float64) for x in self.levels)
        for i, x in enumerate(levels[1:], start=1):
            if x.shape != levels[0].shape:
                raise ShapeMismatchError(f"feature level {i}", levels[0].shape, x.shape)
        object.__setattr__(self, "levels", levels)

    def __len__(self) -> int:
        return len(self.levels)


@dataclass(frozen=True)
class DecoderFeatures:
    levels: tuple[np.ndarray, ...]

    def __len__(self) -> int:
        return len(self.levels)


# --------------------------------------------------------------------------
# parameters


def _uniform(rng: np.random.Generator, shape, channels: int) -> np.ndarray:
    b = 1.0 / math.sqrt(channels)
    return rng.uniform(-b, b, size=shape)


@dataclass(frozen=True)
class PatchEmbedParams:
    weight: np.ndarray  # (p*p*3, C)
    bias: np.ndarray  # (C,)
    position: np.ndarray  # (H', W', C)
    patch_size: int

    @classmethod
    def init(cls, patch_size: int, grid_shape: tuple[int, int], channels: int = DEFAULT_CHANNELS, seed=0):
        rng = np.random.default_rng(seed)
        d = patch_size * patch_size * 3
        return cls(
            _uniform(rng, (d, channels), channels),
            _uniform(rng, (channels,), channels),
            _uniform(rng, (*grid_shape, channels), channels),
            patch_size,
        )

    def to_arrays(self) -> dict[str, np.ndarray]:
        return {
            "weight": self.weight,
            "bias": self.bias,
            "position": self.position,
            "patch_size": np.array([self.patch_size], dtype=np.float64),
        }

    @classmethod
    def from_arrays(cls, a: dict[str, np.ndarray]) -> "PatchEmbedParams":
        return cls(a["weight"], a["bias"], a["position"], int(a["patch_size"][0]))


@dataclass(frozen=True)
class AttentionParams:
    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    heads: int

    @classmethod
    def init(cls, channels: int = DEFAULT_CHANNELS, heads: int = DEFAULT_HEADS, hidden: int | None = None, seed=0):
        if channels % heads:
            raise ValueError(f"channels {channels} not divisible by heads {heads}")
        hidden = hidden or 2 * channels
        rng = np.random.default_rng(seed)
        C = channels
        return cls(
            _uniform(rng, (C, C), C),
            _uniform(rng, (C, C), C),
            _uniform(rng, (C, C), C),
            _uniform(rng, (C, C), C),
            _uniform(rng, (C, hidden), C),
            _uniform(rng, (hidden,), C),
            _uniform(rng, (hidden, C), C),
            _uniform(rng, (C,), C),
            heads,
        )

    def to_arrays(self) -> dict[str, np.ndarray]:
        out = {k: getattr(self, k) for k in ("wq", "wk", "wv", "wo", "w1", "b1", "w2", "b2")}
        out["heads"] = np.array([self.heads], dtype=np.float64)
        return out

    @classmethod
    def from_arrays(cls, a: dict[str, np.ndarray]) -> "AttentionParams":
        return cls(*(a[k] for k in ("wq", "wk", "wv", "wo", "w1", "b1", "w2", "b2")), int(a["heads"][0]))


@dataclass(frozen=True)
class ZeroConvParams:
    """Per-level 1x1 convolutions: ``weights[l]`` is (C_in, C_out)."""

    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]

    @classmethod
    def zeros(cls, levels: int = DEFAULT_LEVELS, c_in: int = DEFAULT_CHANNELS, c_out: int | None = None):
        c_out = c_out or c_in
        return cls(
            tuple(np.zeros((c_in, c_out)) for _ in range(levels)),
            tuple(np.zeros(c_out) for _ in range(levels)),
        )

    def to_arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            out[f"weight{i}"] = w
            out[f"bias{i}"] = b
        return out

    @classmethod
    def from_arrays(cls, a: dict[str, np.ndarray]) -> "ZeroConvParams":
        n = sum(1 for k in a if k.startswith("weight"))
        return cls(tuple(a[f"weight{i}"] for i in range(n)), tuple(a[f"bias{i}"] for i in range(n)))


# --------------------------------------------------------------------------
# forward ops


def depth_to_normalized_points(depth: DepthMap, k: Intrinsics | None = None) -> NormalizedPointMap:
    """Unproject ``depth`` (fallback focal when ``k`` is None) and normalize each axis to [-1, 1]."""
    if not depth.valid.any():
        raise EmptySelectionError("depth map has no valid pixel")
    if k is None:
        H, W = depth.shape
        k = Intrinsics.fallback(W, H)
    pm, norm = axis_normalize(unproject(depth, k))
    return NormalizedPointMap(pm, norm)


def patchify(grid: np.ndarray, patch_size: int) -> np.ndarray:
    """(H, W, D) -> (H/p, W/p, p*p*D), row-major inside each patch."""
    H, W, D = grid.shape
    p = patch_size
    if H % p or W % p:
        raise ValueError(f"image size {H}x{W} not divisible by patch size {p}")
    x = grid.reshape(H // p, p, W // p, p, D).transpose(0, 2, 1, 3, 4)
    return x.reshape(H // p, W // p, p * p * D)


def patch_embed(pm: NormalizedPointMap | np.ndarray, params: PatchEmbedParams, with_position: bool = True) -> TokenGrid:
    """Linear embedding of non-overlapping patches plus a learned position term.

    Invalid pixels enter as zeros.
    """
    if isinstance(pm, NormalizedPointMap):
        grid = np.where(pm.valid[..., None], pm.grid, 0.0)
    else:
        grid = np.asarray(pm, dtype=np.float64)
    patches = patchify(grid, params.patch_size)
    if patches.shape[2] != params.weight.shape[0]:
        raise ShapeMismatchError("patch vector", (params.weight.shape[0],), (patches.shape[2],))
    tokens = patches @ params.weight + params.bias
    if with_position:
        if params.position.shape != tokens.shape:
            raise ShapeMismatchError("position term", tokens.shape, params.position.shape)
        tokens = tokens + params.position
    return TokenGrid(tokens, params.patch_size)


def _softmax(a: np.ndarray) -> np.ndarray:
    a = a - a.max(axis=-1, keepdims=True)
    e = np.exp(a)
    return e / e.sum(axis=-1, keepdims=True)


def self_attention(x: np.ndarray, params: AttentionParams) -> tuple[np.ndarray, np.ndarray]:
    """Multi-head attention over tokens ``x`` (T, C); returns (output, weights (h, T, T))."""
    T, C = x.shape
    h = params.heads
    if C % h:
        raise ValueError(f"channels {C} not divisible by heads {h}")
    d = C // h

    def split(m):
        return (x @ m).reshape(T, h, d).transpose(1, 0, 2)

    q, k, v = split(params.wq), split(params.wk), split(params.wv)
    w = _softmax(q @ k.transpose(0, 2, 1) / math.sqrt(d))
    out = (w @ v).transpose(1, 0, 2).reshape(T, C)
    return out @ params.wo, w


def attention_block(tokens: TokenGrid, params: AttentionParams) -> tuple[TokenGrid, np.ndarray]:
    """Self-attention and a two-layer ReLU feed-forward, each with a residual."""
    x = tokens.flat()
    a, w = self_attention(x, params)
    x = x + a
    x = x + np.maximum(x @ params.w1 + params.b1, 0.0) @ params.w2 + params.b2
    return tokens.with_tokens(x), w


def feature_stack(tokens: TokenGrid, blocks: list[AttentionParams]) -> FeatureStack:
    """Apply ``blocks`` in sequence and keep every block's output as one level."""
    levels = []
    for p in blocks:
        tokens, _ = attention_block(tokens, p)
        levels.append(tokens.tokens)
    return FeatureStack(tuple(levels))


def init_blocks(levels: int = DEFAULT_LEVELS, channels: int = DEFAULT_CHANNELS, heads: int = DEFAULT_HEADS, seed=0):
    seeds = np.random.SeedSequence(seed).spawn(levels)
    return [AttentionParams.init(channels, heads, seed=s) for s in seeds]


def zero_conv_inject(f: FeatureStack, e: DecoderFeatures, params: ZeroConvParams) -> DecoderFeatures:
    """Per level, add a 1x1 convolution of the point-map feature to the decoder feature."""
    if not (len(f) == len(e) == len(params.weights)):
        raise ValueError(f"level counts differ: features {len(f)}, decoder {len(e)}, params {len(params.weights)}")
    out = []
    for lvl, (fl, el, w, b) in enumerate(zip(f.levels, e.levels, params.weights, params.biases)):
        if fl.shape[:-1] != el.shape[:-1]:
            raise ShapeMismatchError(f"level {lvl} spatial grid", el.shape[:-1], fl.shape[:-1])
        if w.shape != (fl.shape[-1], el.shape[-1]):
            raise ShapeMismatchError(f"level {lvl} conv weight", (fl.shape[-1], el.shape[-1]), w.shape)
        out.append(fl @ w + b + el)
    return DecoderFeatures(tuple(out))


# --------------------------------------------------------------------------
# loss and filtering


def _loss_mask(pred: PointMap, gt: PointMap) -> np.ndarray:
    if pred.shape != gt.shape:
        raise ShapeMismatchError("point map", gt.shape, pred.shape)
    mask = pred.valid & gt.valid
    if not mask.any():
        raise EmptySelectionError("no pixel valid in both point maps")
    return mask


def regression_loss(pred: PointMap, gt: PointMap, with_grad: bool = False):
    """Mean over valid pixels of ||pred/z - gt/z_gt||, where z is the mean point norm.

    With ``with_grad`` returns ``(loss, grad)`` where grad has the shape of
    ``pred.points`` and is zero on excluded pixels.
    """
    mask = _loss_mask(pred, gt)
    x = pred.points[mask]
    y = gt.points[mask]
    N = len(x)
    nx = np.linalg.norm(x, axis=1)
    z = nx.mean()
    zg = np.linalg.norm(y, axis=1).mean()
    r = x / z - y / zg
    nr = np.linalg.norm(r, axis=1)
    loss = float(nr.mean())
    if not with_grad:
        return loss
    u = np.divide(r, nr[:, None], out=np.zeros_like(r), where=nr[:, None] > 0)
    ux = float(np.sum(u * x))
    dz = np.divide(x, (N * nx)[:, None], out=np.zeros_like(x), where=nx[:, None] > 0)
    g = (u / z - (ux / z**2) * dz) / N
    grad = np.zeros_like(pred.points)
    grad[mask] = g
    return loss, grad


def depth_filter_mask(depth: DepthMap, threshold_m: float = FAR_DEPTH_M) -> np.ndarray:
    """Valid where the pixel was valid and its depth is at most ``threshold_m``."""
    return depth.valid & (np.where(depth.valid, depth.values, np.inf) <= threshold_m)
