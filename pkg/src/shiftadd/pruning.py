"""Group-lasso regularized training primitives.

A layer's weights are reshaped so that every row of the group matrix is one
prunable unit: input columns for dense layers, whole flattened kernels for the
full-kernel conv lowering, single kernel columns for the partial-kernel one.
The penalty is the sum of row 2-norms; its proximal operator is row-wise block
soft thresholding, which drives entire groups to exactly zero during training.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "GroupStructure",
    "RegConfig",
    "group_lasso_penalty",
    "block_soft_threshold",
    "proximal_step",
    "compact_pruned",
]


@dataclass(frozen=True)
class GroupStructure:
    """Bijective reshaping between a layer's weight tensor and its group matrix.

    ``kind`` is one of ``dense`` (weights N x K, groups = input columns),
    ``conv_fk`` (kernels N x K x O x O, groups = flattened kernels), or
    ``conv_pk`` (same kernels, groups = kernel columns).
    """

    kind: str
    shape: tuple[int, ...]

    def __post_init__(self) -> None:
        if self.kind == "dense":
            if len(self.shape) != 2:
                raise ValueError("dense layers take a 2-D weight shape")
        elif self.kind in ("conv_fk", "conv_pk"):
            if len(self.shape) != 4 or self.shape[2] != self.shape[3]:
                raise ValueError("conv layers take kernels shaped (N, K, O, O)")
        else:
            raise ValueError(f"unknown layer kind {self.kind!r}")

    def to_groups(self, W: np.ndarray) -> np.ndarray:
        """Reshape weights into the group matrix (one group per row)."""
        W = np.asarray(W, dtype=float)
        if tuple(W.shape) != self.shape:
            raise ValueError(f"expected shape {self.shape}, got {W.shape}")
        if self.kind == "dense":
            return W.T.copy()
        N, K, O, _ = self.shape
        if self.kind == "conv_fk":
            return W.transpose(1, 0, 2, 3).reshape(K * N, O * O).copy()
        return W.transpose(1, 0, 3, 2).reshape(K * N * O, O).copy()

    def from_groups(self, Wt: np.ndarray) -> np.ndarray:
        """Inverse of :meth:`to_groups`."""
        Wt = np.asarray(Wt, dtype=float)
        if self.kind == "dense":
            return Wt.T.copy()
        N, K, O, _ = self.shape
        if self.kind == "conv_fk":
            return Wt.reshape(K, N, O, O).transpose(1, 0, 2, 3).copy()
        return Wt.reshape(K, N, O, O).transpose(1, 0, 3, 2).copy()

    @property
    def n_groups(self) -> int:
        if self.kind == "dense":
            return self.shape[1]
        N, K, O, _ = self.shape
        return K * N if self.kind == "conv_fk" else K * N * O


@dataclass(frozen=True)
class RegConfig:
    """Per-layer regularization strength and step size; ``lam = 0`` disables pruning."""

    lam: float
    lr: float

    def __post_init__(self) -> None:
        if not (self.lam >= 0.0 and np.isfinite(self.lam)):
            raise ValueError("lam must be finite and >= 0")
        if not (self.lr > 0.0):
            raise ValueError("lr must be > 0")


def group_lasso_penalty(Wt: np.ndarray, lam: float) -> float:
    """Penalty value ``lam * sum_i ||row_i||_2`` of a group matrix."""
    if lam < 0:
        raise ValueError("lam must be >= 0")
    return float(lam * np.linalg.norm(np.atleast_2d(Wt), axis=1).sum())


def block_soft_threshold(Wt: np.ndarray, t: float) -> np.ndarray:
    """Proximal operator of ``t * sum_i ||row_i||_2``: shrink rows, clamp small ones to 0."""
    if t < 0:
        raise ValueError("threshold must be >= 0")
    Wt = np.atleast_2d(np.asarray(Wt, dtype=float))
    norms = np.linalg.norm(Wt, axis=1)
    scale = np.zeros_like(norms)
    nz = norms > 0
    scale[nz] = np.maximum(1.0 - t / norms[nz], 0.0)
    return Wt * scale[:, None]


def proximal_step(
    W: np.ndarray,
    b: np.ndarray | None,
    grad_W: np.ndarray,
    grad_b: np.ndarray | None,
    cfg: RegConfig,
    gs: GroupStructure,
) -> tuple[np.ndarray, np.ndarray | None]:
    """One proximal gradient update of a layer.

    Weights take a gradient step and are then thresholded group-wise in the
    group domain; biases take a plain gradient step (they are never penalized).
    With ``lam = 0`` this is exactly a plain gradient step.
    """
    W = np.asarray(W, dtype=float)
    grad_W = np.asarray(grad_W, dtype=float)
    if W.shape != grad_W.shape:
        raise ValueError(f"gradient shape {grad_W.shape} does not match weights {W.shape}")
    stepped = W - cfg.lr * grad_W
    if cfg.lam > 0.0:
        Wt = gs.to_groups(stepped)
        stepped = gs.from_groups(block_soft_threshold(Wt, cfg.lr * cfg.lam))
    new_b = b
    if b is not None:
        if grad_b is None or np.shape(b) != np.shape(grad_b):
            raise ValueError("bias gradient shape mismatch")
        new_b = np.asarray(b, dtype=float) - cfg.lr * np.asarray(grad_b, dtype=float)
    return stepped, new_b


def compact_pruned(
    W: np.ndarray, gs: GroupStructure, tol: float = 1e-12
) -> tuple[np.ndarray, np.ndarray]:
    """Drop groups with norm <= tol.

    For dense layers the result is the column-reduced weight matrix (gather the
    retained input entries before the matvec); for conv kinds it is the
    row-reduced group matrix.  Returns (reduced, retained group indices).
    """
    if tol < 0:
        raise ValueError("tol must be >= 0")
    Wt = gs.to_groups(W)
    norms = np.linalg.norm(Wt, axis=1)
    retained = np.flatnonzero(norms > tol)
    if retained.size == 0:
        raise ValueError("all groups pruned: layer is degenerate")
    if gs.kind == "dense":
        return np.asarray(W, dtype=float)[:, retained].copy(), retained
    return Wt[retained].copy(), retained
