"""Weight sharing: cluster similar weight columns and retrain them as tied centroids.

Clusters come from affinity propagation on negative squared column distances
(message passing, no preset cluster count).  During retraining one vector is
stored per cluster and every member column is reconstructed from it, so
member-centroid equality is structural rather than enforced by
synchronization; the centroid gradient is the mean of its members' gradients.
After retraining the layer collapses to a centroid matrix applied to pooled
inputs: column groups of the input are summed first, which costs one addition
per extra member and shrinks the matrix the factorization has to cover.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import CostReport, FixedPointConfig, csd_matrix_cost
from .nncore import (
    Dataset,
    ModelParams,
    TrainConfig,
    backward,
    lr_at_epoch,
    minibatch_indices,
    sgd_momentum_step,
)

__all__ = [
    "Cluster",
    "ClusterModel",
    "SharedLayer",
    "APResult",
    "column_similarity",
    "affinity_propagation",
    "cluster_columns",
    "centroid_gradient",
    "retrain_shared",
    "build_equivalent",
    "pooling_additions",
    "shared_cost",
]


@dataclass
class Cluster:
    centroid: np.ndarray  # length N
    members: np.ndarray  # column indices, ascending


@dataclass
class ClusterModel:
    """Partition of a layer's columns into clusters with centroids."""

    clusters: list[Cluster]

    @property
    def n_columns(self) -> int:
        return sum(len(c.members) for c in self.clusters)

    def member_map(self) -> np.ndarray:
        """cluster index per column."""
        out = np.empty(self.n_columns, dtype=int)
        for ci, c in enumerate(self.clusters):
            out[c.members] = ci
        return out

    def validate(self, n_columns: int) -> None:
        seen = np.concatenate([c.members for c in self.clusters]) if self.clusters else np.array([])
        if sorted(seen.tolist()) != list(range(n_columns)):
            raise ValueError("cluster members must partition the column range")


@dataclass
class SharedLayer:
    """Centroid matrix G (N x C) plus the member index set of every centroid column."""

    G: np.ndarray
    index_sets: list[np.ndarray]

    def pooled_input(self, x: np.ndarray) -> np.ndarray:
        return np.stack([x[idx].sum(axis=0) for idx in self.index_sets])

    def matvec(self, x: np.ndarray) -> np.ndarray:
        return self.G @ self.pooled_input(np.asarray(x, dtype=float))


@dataclass
class APResult:
    exemplars: np.ndarray  # sorted exemplar point indices
    labels: np.ndarray  # exemplar point index per point
    converged: bool
    n_iter: int


def column_similarity(W: np.ndarray, normalize: bool = False) -> np.ndarray:
    """Pairwise similarity of columns: negative squared euclidean distance.

    ``normalize`` rescales columns to unit norm first (zero columns are left
    untouched), for clustering by direction rather than magnitude.
    """
    W = np.atleast_2d(np.asarray(W, dtype=float))
    if normalize:
        norms = np.linalg.norm(W, axis=0)
        W = W / np.where(norms > 0, norms, 1.0)
    sq = np.einsum("ij,ij->j", W, W)
    S = -(sq[:, None] + sq[None, :] - 2.0 * W.T @ W)
    np.fill_diagonal(S, 0.0)
    return np.minimum(S, 0.0)  # clip the tiny positive float noise


def affinity_propagation(
    S: np.ndarray,
    damping: float = 0.5,
    max_iter: int = 200,
    convergence_iter: int = 15,
    preference: float | np.ndarray | None = None,
    noise_seed: int = 0,
) -> APResult:
    """Exemplar clustering by responsibility/availability message passing.

    ``S`` is a square similarity matrix without preferences; the preference
    (default: an epsilon below the median off-diagonal similarity, so a fully
    degenerate all-equal instance collapses to one cluster) is written onto
    the diagonal here, then a tiny seeded symmetric noise breaks remaining
    ties.  If the exemplar set fails to stay stable for ``convergence_iter``
    iterations the last assignment is returned with ``converged=False``.
    """
    if not (0.5 <= damping < 1.0):
        raise ValueError("damping must be in [0.5, 1)")
    S = np.array(S, dtype=float)
    n = S.shape[0]
    if S.shape != (n, n):
        raise ValueError("similarity matrix must be square")
    if n == 1:
        return APResult(np.array([0]), np.array([0]), True, 0)

    if preference is None:
        off = S[~np.eye(n, dtype=bool)]
        med = float(np.median(off))
        preference = med - 1e-9 * (1.0 + abs(med))
    np.fill_diagonal(S, preference)
    rng = np.random.default_rng(noise_seed)
    E = rng.standard_normal((n, n))
    S = S + 1e-12 * (E + E.T) / 2.0

    A = np.zeros((n, n))
    R = np.zeros((n, n))
    idx = np.arange(n)
    stable = 0
    last_ind: np.ndarray | None = None
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        # responsibilities
        AS = A + S
        top = AS.argmax(axis=1)
        Y = AS[idx, top]
        AS[idx, top] = -np.inf
        Y2 = AS.max(axis=1)
        Rnew = S - Y[:, None]
        Rnew[idx, top] = S[idx, top] - Y2
        R = damping * R + (1.0 - damping) * Rnew
        # availabilities
        Rp = np.maximum(R, 0.0)
        Rp[idx, idx] = R[idx, idx]
        Anew = Rp.sum(axis=0)[None, :] - Rp
        dA = Anew[idx, idx].copy()
        Anew = np.minimum(Anew, 0.0)
        Anew[idx, idx] = dA
        A = damping * A + (1.0 - damping) * Anew

        ind = (np.diag(A) + np.diag(R)) > 0
        if last_ind is not None and np.array_equal(ind, last_ind):
            stable += 1
            if stable >= convergence_iter and ind.any():
                converged = True
                break
        else:
            stable = 0
        last_ind = ind

    evidence = np.diag(A) + np.diag(R)
    exemplars = np.flatnonzero(evidence > 0)
    if exemplars.size == 0:
        exemplars = np.array([int(np.argmax(evidence))])
        converged = False
    # refine each cluster's representative to the member with the highest
    # intra-cluster similarity mass, then reassign (as the reference package does)
    c = np.argmax(S[:, exemplars], axis=1)
    c[exemplars] = np.arange(exemplars.size)
    for k in range(exemplars.size):
        members = np.flatnonzero(c == k)
        best = members[np.argmax(S[np.ix_(members, members)].sum(axis=0))]
        exemplars[k] = best
    exemplars = np.unique(exemplars)
    labels = exemplars[np.argmax(S[:, exemplars], axis=1)]
    labels[exemplars] = exemplars
    return APResult(np.sort(exemplars), labels, converged, it)


def cluster_columns(
    W: np.ndarray,
    damping: float = 0.5,
    max_iter: int = 200,
    convergence_iter: int = 15,
    preference: float | None = None,
    normalize: bool = False,
) -> ClusterModel:
    """Cluster the columns of ``W``; centroids are initialized to member means."""
    W = np.atleast_2d(np.asarray(W, dtype=float))
    S = column_similarity(W, normalize=normalize)
    ap = affinity_propagation(
        S, damping=damping, max_iter=max_iter, convergence_iter=convergence_iter, preference=preference
    )
    clusters = []
    for e in ap.exemplars:
        members = np.flatnonzero(ap.labels == e)
        clusters.append(Cluster(W[:, members].mean(axis=1), members))
    cm = ClusterModel(clusters)
    cm.validate(W.shape[1])
    return cm


def centroid_gradient(member_grads) -> np.ndarray:
    """Mean of the member-column gradients; the centroid update direction."""
    grads = [np.asarray(g, dtype=float) for g in member_grads]
    if not grads:
        raise ValueError("empty cluster has no gradient")
    if any(g.shape != grads[0].shape for g in grads):
        raise ValueError("member gradients must share a shape")
    return np.mean(grads, axis=0)


def _expand(G: np.ndarray, member_map: np.ndarray) -> np.ndarray:
    return G[:, member_map]


def retrain_shared(
    model: ModelParams,
    layer_index: int,
    clusters: ClusterModel,
    data: Dataset,
    cfg: TrainConfig,
) -> tuple[ModelParams, ClusterModel]:
    """Retrain with the given layer's columns tied to their cluster centroids.

    Only centroids are stored and updated (columns are expanded from them every
    step, so members stay bit-identical); the tied layer's centroid gradient is
    the member mean, everything else trains as usual.  No regularization is
    applied during retraining.  Returns the updated model (columns expanded)
    and the final centroids.
    """
    model = model.copy()
    layer = model.layers[layer_index]
    if layer.kind != "dense":
        raise ValueError("weight sharing is defined for dense layers")
    clusters.validate(layer.W.shape[1])
    member_map = clusters.member_map()
    G = np.stack([c.centroid for c in clusters.clusters], axis=1)
    layer.W = _expand(G, member_map)

    rng = np.random.default_rng(cfg.seed)
    vel = [{"W": None, "b": np.zeros_like(l.b)} for l in model.layers]
    for li, l in enumerate(model.layers):
        vel[li]["W"] = np.zeros_like(G) if li == layer_index else np.zeros_like(l.W)

    for epoch in range(cfg.epochs):
        lr_now = lr_at_epoch(cfg, epoch)
        for batch in minibatch_indices(rng, data.n, cfg.batch_size):
            grads, loss = backward(model, data.x[batch], data.y[batch])
            if not np.isfinite(loss):
                raise RuntimeError(f"retraining diverged at epoch {epoch} (loss={loss})")
            for li, (l, (dW, db)) in enumerate(zip(model.layers, grads)):
                if li == layer_index:
                    dG = np.stack(
                        [
                            centroid_gradient([dW[:, j] for j in c.members])
                            for c in clusters.clusters
                        ],
                        axis=1,
                    )
                    G, vel[li]["W"] = sgd_momentum_step(G, dG, vel[li]["W"], lr_now, cfg.momentum)
                    l.W = _expand(G, member_map)
                else:
                    l.W, vel[li]["W"] = sgd_momentum_step(l.W, dW, vel[li]["W"], lr_now, cfg.momentum)
                l.b, vel[li]["b"] = sgd_momentum_step(l.b, db, vel[li]["b"], lr_now, cfg.momentum)

    final = ClusterModel(
        [Cluster(G[:, ci].copy(), c.members.copy()) for ci, c in enumerate(clusters.clusters)]
    )
    return model, final


def build_equivalent(W: np.ndarray, clusters: ClusterModel, tol: float = 1e-9) -> SharedLayer:
    """Collapse a retrained layer to its centroid matrix and pooling index sets.

    Every member column must match its centroid within ``tol`` (they are
    bit-identical after :func:`retrain_shared`).
    """
    W = np.atleast_2d(np.asarray(W, dtype=float))
    clusters.validate(W.shape[1])
    for ci, c in enumerate(clusters.clusters):
        dev = np.max(np.abs(W[:, c.members] - c.centroid[:, None])) if len(c.members) else 0.0
        if dev > tol:
            raise ValueError(f"cluster {ci} members deviate from centroid by {dev:.3e} > {tol:.0e}")
    G = np.stack([c.centroid for c in clusters.clusters], axis=1)
    return SharedLayer(G, [c.members.copy() for c in clusters.clusters])


def pooling_additions(layer: SharedLayer) -> int:
    """Adds needed to sum the input entries of every cluster: |I_i| - 1 each."""
    return sum(max(0, len(idx) - 1) for idx in layer.index_sets)


def shared_cost(layer: SharedLayer, cfg: FixedPointConfig = FixedPointConfig()) -> CostReport:
    """Pooling additions plus the CSD cost of the centroid matrix."""
    base = csd_matrix_cost(layer.G, cfg)
    return CostReport(adds=base.adds + pooling_additions(layer), shifts=base.shifts)
