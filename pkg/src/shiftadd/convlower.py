"""Convolution layers as collections of matrix-vector products.

Two lowerings of a stride-1, valid-padding convolution (cross-correlation
convention, no kernel flip):

* full kernel (``fk``): per input map k, a matrix of shape (N, O*O) whose rows
  are the flattened kernels; one matvec per output position.
* partial kernel (``pk``): per input map k, a taller matrix of shape (N*O, O)
  whose row n*O + t is column t of kernel (n, k); the O partial outputs per
  convolution are then summed.  Taller matrices favor the shift-add
  factorization at the price of extra partial-sum additions.

Both lowerings are exactly equivalent to direct convolution.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

__all__ = [
    "ConvSpec",
    "LoweredConv",
    "fk_matrices",
    "pk_matrices",
    "lower_conv",
    "conv_forward",
    "conv_group_matrix",
    "conv_addition_cost",
]


@dataclass(frozen=True)
class ConvSpec:
    """K input maps of size Z x Z, N output maps, square O x O kernels, stride 1, no padding."""

    in_maps: int
    out_maps: int
    kernel: int
    image: int

    def __post_init__(self) -> None:
        if min(self.in_maps, self.out_maps, self.kernel, self.image) < 1:
            raise ValueError("all convolution dimensions must be >= 1")
        if self.kernel > self.image:
            raise ValueError("kernel cannot exceed the input size")

    @property
    def out_size(self) -> int:
        return self.image - self.kernel + 1


@dataclass
class LoweredConv:
    method: str  # "fk" | "pk"
    spec: ConvSpec
    matrices: list[np.ndarray]  # one per input map


def _check_kernels(kernels: np.ndarray) -> np.ndarray:
    kernels = np.asarray(kernels, dtype=float)
    if kernels.ndim != 4 or kernels.shape[2] != kernels.shape[3]:
        raise ValueError("kernels must be shaped (N, K, O, O)")
    return kernels


def fk_matrices(kernels: np.ndarray) -> list[np.ndarray]:
    """Per input map, the (N, O*O) matrix of row-major flattened kernels."""
    kernels = _check_kernels(kernels)
    N, K, O, _ = kernels.shape
    return [kernels[:, k].reshape(N, O * O).copy() for k in range(K)]


def pk_matrices(kernels: np.ndarray) -> list[np.ndarray]:
    """Per input map, the (N*O, O) matrix whose row n*O + t is kernel column t."""
    kernels = _check_kernels(kernels)
    N, K, O, _ = kernels.shape
    return [kernels[:, k].transpose(0, 2, 1).reshape(N * O, O).copy() for k in range(K)]


def lower_conv(kernels: np.ndarray, method: str, image: int) -> LoweredConv:
    kernels = _check_kernels(kernels)
    N, K, O, _ = kernels.shape
    spec = ConvSpec(in_maps=K, out_maps=N, kernel=O, image=image)
    if method == "fk":
        return LoweredConv("fk", spec, fk_matrices(kernels))
    if method == "pk":
        return LoweredConv("pk", spec, pk_matrices(kernels))
    raise ValueError(f"unknown lowering method {method!r}")


def conv_forward(x: np.ndarray, lowered: LoweredConv) -> np.ndarray:
    """Run the lowered convolution on one input (K, Z, Z) -> (N, P, P)."""
    spec = lowered.spec
    x = np.asarray(x, dtype=float)
    if x.shape != (spec.in_maps, spec.image, spec.image):
        raise ValueError(f"expected input {(spec.in_maps, spec.image, spec.image)}, got {x.shape}")
    K, N, O, P = spec.in_maps, spec.out_maps, spec.kernel, spec.out_size
    W = np.stack(lowered.matrices)
    if lowered.method == "fk":
        # receptive fields: (K, P, P, O*O)
        patches = sliding_window_view(x, (O, O), axis=(1, 2)).reshape(K, P, P, O * O)
        return np.einsum("krcq,knq->nrc", patches, W)
    # pk: column segments x[k, r:r+O, c'] for every (r, c'), partials summed over t
    colsegs = sliding_window_view(x, O, axis=1)  # (K, P, Z, O)
    partial = np.einsum("krcu,kmu->krcm", colsegs, W).reshape(K, P, spec.image, N, O)
    y = np.zeros((N, P, P))
    for t in range(O):
        y += partial[:, :, t : t + P, :, t].sum(axis=0).transpose(2, 0, 1)
    return y


def conv_group_matrix(lowered: LoweredConv) -> np.ndarray:
    """Vertical stack of the per-map matrices; rows are the prunable groups."""
    return np.vstack(lowered.matrices)


def conv_addition_cost(lowered: LoweredConv, per_matrix_adds) -> int:
    """Total additions for the layer at the spec's spatial size.

    Per-position matvec costs (CSD or factorized, supplied per input map) are
    multiplied by the number of positions each matvec runs at, then the
    cross-map accumulation (K - 1 per output element) and, for pk, the partial
    sums (O - 1 per output element) are added.  Zero contributions are not
    elided; the accumulation terms depend only on the shape.
    """
    spec = lowered.spec
    adds = [int(a) for a in per_matrix_adds]
    if len(adds) != spec.in_maps:
        raise ValueError("need one matvec cost per input map")
    K, N, O, P = spec.in_maps, spec.out_maps, spec.kernel, spec.out_size
    if lowered.method == "fk":
        return P * P * sum(adds) + (K - 1) * N * P * P
    positions = P * spec.image  # every (row window, column) pair
    return positions * sum(adds) + (O - 1) * N * P * P + (K - 1) * N * P * P
