"""Exponentially weighted (soft) pooling of 2D feature maps.

Each kernel region R is reduced to ``sum_i w_i c_i`` with
``w_i = exp(c_i) / sum_v exp(c_v)``. Weights are computed after subtracting the
region maximum so large activations cannot overflow.

The batched kernels come from a compiled extension when it was built, and
from a numpy implementation otherwise. Set ``PROTOBFT_PURE_PYTHON=1`` before
import to force the numpy path.
"""
from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from . import _softpool_py
from .errors import ShapeError

if os.environ.get("PROTOBFT_PURE_PYTHON", "") not in ("", "0"):
    _kernels = _softpool_py
    BACKEND = "python"
else:
    try:
        from . import _softpool_ext as _kernels

        BACKEND = "compiled"
    except ImportError:
        _kernels = _softpool_py
        BACKEND = "python"


@dataclass(frozen=True)
class KernelSpec:
    k_hat: int = 2
    stride: int | None = None

    def __post_init__(self) -> None:
        if self.k_hat < 1:
            raise ValueError("k_hat must be >= 1")
        if self.stride is None:
            object.__setattr__(self, "stride", self.k_hat)
        if self.stride < 1:
            raise ValueError("stride must be >= 1")

    def output_shape(self, rows: int, cols: int) -> tuple[int, int]:
        if self.k_hat > min(rows, cols):
            raise ShapeError(f"kernel {self.k_hat} does not fit a {rows}x{cols} map")
        return ((rows - self.k_hat) // self.stride + 1, (cols - self.k_hat) // self.stride + 1)


def region_weights(region) -> np.ndarray:
    c = np.asarray(region, dtype=np.float64)
    e = np.exp(c - c.max())
    return e / e.sum()


def pool_region(region) -> float:
    c = np.asarray(region, dtype=np.float64)
    return float((region_weights(c) * c).sum())


def _as_batch(maps) -> np.ndarray:
    maps = np.ascontiguousarray(maps, dtype=np.float64)
    if maps.ndim != 3:
        raise ShapeError(f"expected (B, rows, cols) maps, got shape {maps.shape}")
    return maps


def softpool_batch(maps, spec: KernelSpec, kernels=None) -> np.ndarray:
    maps = _as_batch(maps)
    spec.output_shape(maps.shape[1], maps.shape[2])
    return (kernels or _kernels).pool_forward(maps, spec.k_hat, spec.stride)


def softpool_backward_batch(maps, spec: KernelSpec, upstream, kernels=None) -> np.ndarray:
    maps = _as_batch(maps)
    expected = (maps.shape[0],) + spec.output_shape(maps.shape[1], maps.shape[2])
    upstream = np.ascontiguousarray(upstream, dtype=np.float64)
    if upstream.shape != expected:
        raise ShapeError(f"upstream has shape {upstream.shape}, expected {expected}")
    return (kernels or _kernels).pool_backward(maps, spec.k_hat, spec.stride, upstream)


def softpool(feature_map, spec: KernelSpec) -> np.ndarray:
    feature_map = np.asarray(feature_map, dtype=np.float64)
    if feature_map.ndim != 2:
        raise ShapeError(f"expected a 2D map, got shape {feature_map.shape}")
    return softpool_batch(feature_map[None], spec)[0]


def softpool_backward(feature_map, spec: KernelSpec, upstream) -> np.ndarray:
    """Gradient of ``sum(upstream * softpool(feature_map))`` with respect to the map."""
    feature_map = np.asarray(feature_map, dtype=np.float64)
    if feature_map.ndim != 2:
        raise ShapeError(f"expected a 2D map, got shape {feature_map.shape}")
    return softpool_backward_batch(feature_map[None], spec, np.asarray(upstream)[None])[0]


def lipschitz_constant(spec: KernelSpec) -> float:
    """Bound on |pool(R) - pool(R')| per unit of max_i |R_i - R'_i|."""
    return float(spec.k_hat**2 - 1)
