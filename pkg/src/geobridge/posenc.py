"""Sinusoidal encoding of latitude/longitude and the learnable head on top of it."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nn import INFER, Block, Dense, Layer, ShapeError, Sigmoid


@dataclass(frozen=True)
class PosEncConfig:
    dim: int = 64  # per-coordinate length d; the full encoding has 2*d entries
    base: float = 1e4
    coord_scale: float = 1.0

    def __post_init__(self):
        if self.dim < 2 or self.dim % 2:
            raise ValueError(f"per-coordinate dim must be even and >= 2, got {self.dim}")
        if not self.base > 1:
            raise ValueError(f"base must exceed 1, got {self.base}")

    @property
    def width(self) -> int:
        return 2 * self.dim


def validate_coords(lat, lon) -> None:
    lat = np.asarray(lat, dtype=np.float64)
    lon = np.asarray(lon, dtype=np.float64)
    if not (np.all(np.isfinite(lat)) and np.all(np.isfinite(lon))):
        raise ValueError("coordinates must be finite")
    if np.any(np.abs(lat) > 90):
        raise ValueError(f"latitude outside [-90, 90]: {lat[np.abs(lat) > 90][:5]}")
    if np.any(np.abs(lon) > 180):
        raise ValueError(f"longitude outside [-180, 180]: {lon[np.abs(lon) > 180][:5]}")


def frequencies(cfg: PosEncConfig) -> np.ndarray:
    """``base**(-2i/d)`` for ``i = 0 .. d/2-1``."""
    i = np.arange(cfg.dim // 2)
    return cfg.base ** (-2.0 * i / cfg.dim)


def _encode_1d(deg: np.ndarray, cfg: PosEncConfig) -> np.ndarray:
    arg = cfg.coord_scale * deg[:, None] * frequencies(cfg)[None, :]
    out = np.empty((deg.shape[0], cfg.dim))
    out[:, 0::2] = np.sin(arg)
    out[:, 1::2] = np.cos(arg)
    return out


def fixed_encode(lat, lon, cfg: PosEncConfig = PosEncConfig()) -> np.ndarray:
    """Encode degrees into ``[p_lat || p_lon]``.

    Scalars give a vector of length ``2*dim``; arrays give an ``(N, 2*dim)`` matrix.
    Degrees go into sin/cos as-is (times ``coord_scale``), no radian conversion.
    """
    validate_coords(lat, lon)
    scalar = np.ndim(lat) == 0
    lat = np.atleast_1d(np.asarray(lat, dtype=np.float64))
    lon = np.atleast_1d(np.asarray(lon, dtype=np.float64))
    enc = np.concatenate([_encode_1d(lat, cfg), _encode_1d(lon, cfg)], axis=1)
    return enc[0] if scalar else enc


class LearnedPositionalEncoder(Layer):
    """2d -> hidden (BN, ReLU, dropout) -> 2d, sigmoid output."""

    def __init__(self, width: int, hidden: int, rng, dropout=0.5, bn_eps=1e-5, bn_momentum=0.1):
        super().__init__()
        self.width = width
        self.hidden_block = Block(width, hidden, rng, dropout, bn_eps, bn_momentum)
        self.out = Dense(hidden, width, rng, init="xavier")
        self.act = Sigmoid()

    def layers(self):
        return {
            "hidden.dense": self.hidden_block.dense,
            "hidden.bn": self.hidden_block.bn,
            "out": self.out,
        }

    def forward(self, enc: np.ndarray, mode: str = INFER, rng=None, frozen_bn=False) -> np.ndarray:
        if enc.ndim != 2 or enc.shape[1] != self.width:
            raise ShapeError(f"positional head expects width {self.width}, got {enc.shape}")
        self.calls += 1
        h = self.hidden_block.forward(enc, mode, rng, frozen_bn)
        return self.act.forward(self.out.forward(h, mode), mode)

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        g = self.act.backward(grad_out)
        g = self.out.backward(g)
        return self.hidden_block.backward(g)


def learned_encode(enc, head: LearnedPositionalEncoder, mode=INFER, rng=None):
    enc = np.asarray(enc, dtype=np.float64)
    if enc.ndim == 1:
        return head.forward(enc[None, :], mode, rng)[0]
    return head.forward(enc, mode, rng)


def concat_features(x: np.ndarray, p: np.ndarray | None) -> np.ndarray:
    """``[x || p]`` along the last axis; ``p`` may be None or empty."""
    if p is None or np.shape(p)[-1] == 0:
        return np.asarray(x, dtype=np.float64)
    return np.concatenate([x, p], axis=-1)
