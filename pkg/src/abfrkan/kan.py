"""KAN layer variants and the MLP feed-forward baseline.

All layers map ``(..., in_dim) -> (..., out_dim)`` and differentiate through
:mod:`abfrkan.tensor`. Basis featurizers are fused ops with hand-written
derivatives; the learnable combination is always a matmul.
"""

from __future__ import annotations

import enum
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import tensor as T
from .tensor import Module, Tensor, custom_op, parameter


class KanVariant(str, enum.Enum):
    EFFICIENT = "efficientkan"
    FAST = "fastkan"
    FASTER = "fasterkan"
    WAV = "wavkan"
    CHEBY = "chebykan"
    MLP = "mlp"

    @classmethod
    def parse(cls, name: "str | KanVariant") -> "KanVariant":
        if isinstance(name, KanVariant):
            return name
        key = str(name).lower().replace("-", "").replace("_", "")
        for v in cls:
            if v.value == key:
                return v
        raise ValueError(f"unknown block variant {name!r}; valid: {', '.join(v.value for v in cls)}")


KAN_VARIANTS = [v for v in KanVariant if v is not KanVariant.MLP]


@dataclass
class KanLayerConfig:
    variant: KanVariant
    in_dim: int
    out_dim: int
    grid_size: int = 8
    spline_order: int = 3
    degree: int = 4
    input_range: tuple[float, float] = (-2.0, 2.0)
    base_activation: bool = True
    layer_norm: bool = True
    expansion: int = 2

    def __post_init__(self):
        self.variant = KanVariant.parse(self.variant)
        a, b = self.input_range
        if self.in_dim < 1 or self.out_dim < 1:
            raise ValueError("in_dim and out_dim must be >= 1")
        if self.grid_size < 2:
            raise ValueError("grid_size must be >= 2")
        if self.degree < 1:
            raise ValueError("degree must be >= 1")
        if self.spline_order < 0:
            raise ValueError("spline_order must be >= 0")
        if not a < b:
            raise ValueError("input_range needs a < b")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["variant"] = self.variant.value
        d["input_range"] = list(self.input_range)
        return d


# --- basis functions ------------------------------------------------------

def uniform_knots(grid_size: int, k: int, a: float, b: float) -> np.ndarray:
    """``grid_size`` points spanning [a, b], extended ``k`` steps each side."""
    h = (b - a) / (grid_size - 1)
    return a + h * np.arange(-k, grid_size + k, dtype=np.float64)


def _bspline_table(x: np.ndarray, knots: np.ndarray, k: int) -> list[np.ndarray]:
    """Cox-de Boor tables of orders 0..k at the flat points ``x``.

    Points outside [a, b] reuse the polynomial pieces of the nearest
    boundary interval (polynomial extrapolation).
    """
    h = knots[1] - knots[0]
    n_int = len(knots) - 1
    j = np.floor((x - knots[0]) / h).astype(np.int64)
    j = np.clip(j, k, n_int - k - 1)
    B = np.zeros((x.size, n_int))
    B[np.arange(x.size), j] = 1.0
    tables = [B]
    xc = x[:, None]
    for p in range(1, k + 1):
        n = n_int - p
        left = (xc - knots[:n]) / (p * h)
        right = (knots[p + 1:p + 1 + n] - xc) / (p * h)
        B = left * B[:, :n] + right * B[:, 1:n + 1]
        tables.append(B)
    return tables


def bspline_basis(x, knots: np.ndarray, k: int = 3) -> np.ndarray:
    """Order-``k`` B-spline basis values, shape ``x.shape + (len(knots)-k-1,)``."""
    x = np.asarray(x, dtype=np.float64)
    B = _bspline_table(x.reshape(-1), np.asarray(knots, dtype=np.float64), k)[-1]
    return B.reshape(x.shape + (B.shape[1],))


def bspline_features(x: Tensor, knots: np.ndarray, k: int) -> Tensor:
    """Differentiable basis expansion ``(..., in) -> (..., in, nb)``."""
    xd = x.data
    tables = _bspline_table(xd.reshape(-1), knots, k)
    B = tables[-1]
    nb = B.shape[1]
    out = B.reshape(xd.shape + (nb,))

    def vjp(g):
        if k == 0:
            return (np.zeros(xd.shape),)
        h = knots[1] - knots[0]
        Bm = tables[-2]
        dB = (Bm[:, :nb] - Bm[:, 1:nb + 1]) / h
        return ((g.reshape(-1, nb) * dB).sum(axis=1).reshape(xd.shape),)

    return custom_op(out, (x,), vjp)


def rbf(z) -> np.ndarray:
    return np.exp(-np.square(z))


def switch(z) -> np.ndarray:
    t = np.tanh(z)
    return 1.0 - t * t


def radial_features(x: Tensor, centers: np.ndarray, width: float, kind: str) -> Tensor:
    """``(..., in) -> (..., in, G)`` Gaussian (``"rbf"``) or sech^2
    (``"switch"``) bumps of the given width around each centre."""
    xd = x.data
    z = (xd[..., None] - centers) / width
    if kind == "rbf":
        phi = np.exp(-z * z)
        dphi = -2.0 * z * phi / width
    elif kind == "switch":
        t = np.tanh(z)
        phi = 1.0 - t * t
        dphi = -2.0 * t * phi / width
    else:
        raise ValueError(kind)
    return custom_op(phi, (x,), lambda g: ((g * dphi).sum(axis=-1),))


def chebyshev_table(z: np.ndarray, degree: int) -> tuple[np.ndarray, np.ndarray]:
    """T_0..T_d and their derivatives at ``z``, stacked on a new last axis."""
    Tk = [np.ones_like(z), z]
    dT = [np.zeros_like(z), np.ones_like(z)]
    for _ in range(1, degree):
        Tk.append(2.0 * z * Tk[-1] - Tk[-2])
        dT.append(2.0 * Tk[-2] + 2.0 * z * dT[-1] - dT[-2])
    return np.stack(Tk[:degree + 1], axis=-1), np.stack(dT[:degree + 1], axis=-1)


def chebyshev_features(z: Tensor, degree: int) -> Tensor:
    Tk, dT = chebyshev_table(z.data, degree)
    return custom_op(Tk, (z,), lambda g: ((g * dT).sum(axis=-1),))


MEXICAN_HAT_NORM = 2.0 / (math.sqrt(3.0) * math.pi**0.25)


def mexican_hat(z) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    return MEXICAN_HAT_NORM * (1.0 - z * z) * np.exp(-0.5 * z * z)


def wavelet_edges(x: Tensor, translation: Tensor, scale_raw: Tensor, weight: Tensor) -> Tensor:
    """out[..., o] = sum_i w[o, i] * psi((x[..., i] - t[o, i]) / softplus(s[o, i]))."""
    xd = x.data
    lead = xd.shape[:-1]
    xf = xd.reshape(-1, xd.shape[-1])
    t, sr, w = translation.data, scale_raw.data, weight.data
    s = np.logaddexp(0.0, sr)
    z = (xf[:, None, :] - t) / s
    e = np.exp(-0.5 * z * z)
    psi = MEXICAN_HAT_NORM * (1.0 - z * z) * e
    out = np.einsum("moi,oi->mo", psi, w)

    def vjp(g):
        gf = g.reshape(-1, w.shape[0])
        dpsi = MEXICAN_HAT_NORM * z * (z * z - 3.0) * e
        gz = gf[:, :, None] * w * dpsi
        gx = (gz / s).sum(axis=1).reshape(xd.shape)
        gt = -(gz / s).sum(axis=0)
        gs = -(gz * z / s).sum(axis=0) * (0.5 * (1.0 + np.tanh(0.5 * sr)))
        gw = np.einsum("mo,moi->oi", gf, psi)
        return gx, gt, gs, gw

    return custom_op(out.reshape(lead + (w.shape[0],)), (x, translation, scale_raw, weight), vjp)


# --- layers ----------------------------------------------------------------

def _flatten_last2(t: Tensor) -> Tensor:
    s = t.shape
    return T.reshape(t, s[:-2] + (s[-2] * s[-1],))


class Linear(Module):
    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator, bias: bool = True,
                 zero: bool = False):
        bound = 1.0 / math.sqrt(in_dim)
        w = np.zeros((in_dim, out_dim)) if zero else rng.uniform(-bound, bound, (in_dim, out_dim))
        self.weight = parameter(w)
        self.bias = parameter(np.zeros(out_dim)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        y = T.matmul(x, self.weight)
        return y + self.bias if self.bias is not None else y


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5):
        self.gamma = parameter(np.ones(dim))
        self.beta = parameter(np.zeros(dim))
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.gamma, self.beta, self.eps)


class EfficientKANLayer(Module):
    """silu base branch plus B-spline branch, both as matmuls."""

    def __init__(self, cfg: KanLayerConfig, rng: np.random.Generator):
        self.cfg = cfg
        k = cfg.spline_order
        self.knots = uniform_knots(cfg.grid_size, k, *cfg.input_range)
        nb = cfg.grid_size + k - 1
        bound = 1.0 / math.sqrt(cfg.in_dim)
        self.base_weight = parameter(rng.uniform(-bound, bound, (cfg.out_dim, cfg.in_dim))) if cfg.base_activation else None
        self.spline_weight = parameter(rng.normal(0.0, 0.1 / math.sqrt(cfg.in_dim), (cfg.out_dim, cfg.in_dim, nb)))

    def __call__(self, x: Tensor) -> Tensor:
        cfg = self.cfg
        basis = _flatten_last2(bspline_features(x, self.knots, cfg.spline_order))
        w = T.swap_last(T.reshape(self.spline_weight, (cfg.out_dim, -1)))
        y = T.matmul(basis, w)
        if self.base_weight is not None:
            y = y + T.matmul(T.silu(x), T.swap_last(self.base_weight))
        return y


class _RadialKANLayer(Module):
    kind = "rbf"

    def __init__(self, cfg: KanLayerConfig, rng: np.random.Generator):
        self.cfg = cfg
        a, b = cfg.input_range
        self.centers = np.linspace(a, b, cfg.grid_size)
        self.width = (b - a) / (cfg.grid_size - 1)
        self.norm = LayerNorm(cfg.in_dim) if cfg.layer_norm else None
        std = 1.0 / math.sqrt(cfg.in_dim * 2.0)
        self.weight = parameter(rng.normal(0.0, std, (cfg.out_dim, cfg.in_dim * cfg.grid_size)))

    def features(self, x: Tensor) -> Tensor:
        if self.norm is not None:
            x = self.norm(x)
        return _flatten_last2(radial_features(x, self.centers, self.width, self.kind))

    def __call__(self, x: Tensor) -> Tensor:
        return T.matmul(self.features(x), T.swap_last(self.weight))


class FastKANLayer(_RadialKANLayer):
    """Gaussian RBF basis on layer-normalized inputs."""

    kind = "rbf"


class FasterKANLayer(_RadialKANLayer):
    """Reflectional switch basis 1 - tanh^2((x - c) / h)."""

    kind = "switch"


class WavKANLayer(Module):
    """Mexican-hat wavelet per edge with trainable translation, scale, weight."""

    def __init__(self, cfg: KanLayerConfig, rng: np.random.Generator):
        self.cfg = cfg
        shape = (cfg.out_dim, cfg.in_dim)
        bound = 1.0 / math.sqrt(cfg.in_dim)
        self.translation = parameter(rng.uniform(-1.0, 1.0, shape))
        # softplus(0.5413) == 1
        self.scale = parameter(np.full(shape, 0.5413248546129181))
        self.weight = parameter(rng.uniform(-bound, bound, shape))

    def __call__(self, x: Tensor) -> Tensor:
        return wavelet_edges(x, self.translation, self.scale, self.weight)


class ChebyKANLayer(Module):
    """Chebyshev expansion of tanh-squashed inputs."""

    def __init__(self, cfg: KanLayerConfig, rng: np.random.Generator):
        self.cfg = cfg
        std = 1.0 / math.sqrt(cfg.in_dim * (cfg.degree + 1))
        self.coeffs = parameter(rng.normal(0.0, std, (cfg.out_dim, cfg.in_dim, cfg.degree + 1)))

    def __call__(self, x: Tensor) -> Tensor:
        cfg = self.cfg
        feats = _flatten_last2(chebyshev_features(T.tanh(x), cfg.degree))
        return T.matmul(feats, T.swap_last(T.reshape(self.coeffs, (cfg.out_dim, -1))))


class MLPBlock(Module):
    """linear -> GELU -> linear with hidden width ``expansion * in_dim``."""

    def __init__(self, cfg: KanLayerConfig, rng: np.random.Generator):
        self.cfg = cfg
        hidden = cfg.expansion * cfg.in_dim
        self.fc1 = Linear(cfg.in_dim, hidden, rng)
        self.fc2 = Linear(hidden, cfg.out_dim, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(T.gelu(self.fc1(x)))


_LAYERS = {
    KanVariant.EFFICIENT: EfficientKANLayer,
    KanVariant.FAST: FastKANLayer,
    KanVariant.FASTER: FasterKANLayer,
    KanVariant.WAV: WavKANLayer,
    KanVariant.CHEBY: ChebyKANLayer,
    KanVariant.MLP: MLPBlock,
}


def make_layer(cfg: KanLayerConfig, rng: np.random.Generator) -> Module:
    return _LAYERS[cfg.variant](cfg, rng)


class KANBlock(Module):
    """Two stacked KAN layers ``in -> expansion*in -> out``; the KAN
    counterpart of :class:`MLPBlock` inside the encoder."""

    def __init__(self, cfg: KanLayerConfig, rng: np.random.Generator):
        hidden = cfg.expansion * cfg.in_dim
        first = KanLayerConfig(**{**cfg.to_dict(), "out_dim": hidden})
        second = KanLayerConfig(**{**cfg.to_dict(), "in_dim": hidden})
        self.layers = [make_layer(first, rng), make_layer(second, rng)]

    def __call__(self, x: Tensor) -> Tensor:
        for layer in self.layers:
            x = layer(x)
        return x


def make_block(cfg: KanLayerConfig, rng: np.random.Generator) -> Module:
    """Feed-forward block: the MLP baseline or a two-layer KAN."""
    if cfg.variant is KanVariant.MLP:
        return MLPBlock(cfg, rng)
    return KANBlock(cfg, rng)


def param_count(cfg: KanLayerConfig) -> int:
    """Trainable scalars of ``make_layer(cfg)`` computed from the shapes."""
    i, o, v = cfg.in_dim, cfg.out_dim, cfg.variant
    if v is KanVariant.MLP:
        h = cfg.expansion * i
        return i * h + h + h * o + o
    if v is KanVariant.EFFICIENT:
        nb = cfg.grid_size + cfg.spline_order - 1
        return o * i * nb + (o * i if cfg.base_activation else 0)
    if v in (KanVariant.FAST, KanVariant.FASTER):
        return o * i * cfg.grid_size + (2 * i if cfg.layer_norm else 0)
    if v is KanVariant.WAV:
        return 3 * o * i
    if v is KanVariant.CHEBY:
        return o * i * (cfg.degree + 1)
    raise ValueError(v)


def block_param_count(cfg: KanLayerConfig) -> int:
    if cfg.variant is KanVariant.MLP:
        return param_count(cfg)
    h = cfg.expansion * cfg.in_dim
    d = cfg.to_dict()
    return param_count(KanLayerConfig(**{**d, "out_dim": h})) + param_count(KanLayerConfig(**{**d, "in_dim": h}))
