"""End-to-end compression: regularized training, sharing, factorization, reporting.

Stage order: train the unregularized baseline (the cost reference), train the
regularized model and compact its pruned input columns, cluster and retrain
the shared layers, then factorize every layer's deployed matrix and compile
adder programs.  Accuracy after the factorization stage is measured by
executing the compiled programs, so the report reflects the computation that
would actually ship.  Addition counts exclude biases and activations
throughout.

Checkpoint container (all little-endian): the line ``SHIFTADD-CKPT v1``, a
u32 manifest length, a JSON manifest (sorted keys), float32 parameter blobs in
manifest order, and a trailing u32 CRC32 of everything after the header line.
"""

from __future__ import annotations

import dataclasses
import json
import math
import os
import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from . import convlower
from .lcc import (
    AdderProgram,
    LccConfig,
    count_additions,
    decompose,
    execute_program,
    save_decomposition,
    to_adder_program,
)
from .nncore import (
    Dataset,
    ModelParams,
    TrainConfig,
    Layer,
    load_mnist_idx,
    synthetic_dataset,
    top1_accuracy,
    train,
)
from .numerics import FixedPointConfig, csd_matrix_cost, sqnr_db
from .pruning import compact_pruned
from .sharing import (
    ClusterModel,
    Cluster,
    SharedLayer,
    build_equivalent,
    cluster_columns,
    pooling_additions,
    retrain_shared,
)

__all__ = [
    "PipelineConfig",
    "LayerReport",
    "CompressionReport",
    "StageError",
    "compression_ratio",
    "resolve_dataset",
    "run_pipeline",
    "run_sweep",
    "save_checkpoint",
    "load_checkpoint",
    "Checkpoint",
    "emit_report",
]

DATA_ENV_VAR = "SHIFTADD_DATA"


class StageError(RuntimeError):
    """A pipeline stage failed; ``stage`` names it, partial artifacts stay on disk."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass
class PipelineConfig:
    """Everything one compression run needs; JSON-serializable."""

    arch: list[int] = field(default_factory=lambda: [784, 300, 10])
    conv: dict | None = None  # {"in_maps","image","out_maps","kernel","classes","method"}
    train: TrainConfig = field(default_factory=TrainConfig)
    lam: tuple[float, ...] = ()
    share: bool = False
    share_layers: tuple[int, ...] = (0,)
    retrain_epochs: int = 20
    lcc: LccConfig | None = field(default_factory=LccConfig)  # None disables the stage
    baseline: FixedPointConfig = field(default_factory=FixedPointConfig)
    out_dir: str | None = None
    seed: int = 0
    dataset: str = "synthetic"  # "synthetic" | "mnist" | directory with IDX files
    train_limit: int | None = 10000
    test_limit: int | None = None

    def n_layers(self) -> int:
        return 2 if self.conv is not None else len(self.arch) - 1

    def lam_tuple(self) -> tuple[float, ...]:
        lam = self.lam if self.lam else (0.0,) * self.n_layers()
        if len(lam) != self.n_layers():
            raise ValueError("lam must have one entry per layer")
        return tuple(float(v) for v in lam)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["train"] = dataclasses.asdict(self.train)
        d["baseline"] = dataclasses.asdict(self.baseline)
        if self.lcc is not None:
            d["lcc"] = dataclasses.asdict(self.lcc)
            d["lcc"]["baseline"] = dataclasses.asdict(self.lcc.baseline)
        return d

    @staticmethod
    def from_dict(d: dict) -> "PipelineConfig":
        d = dict(d)
        if "train" in d and isinstance(d["train"], dict):
            d["train"] = TrainConfig(**{**d["train"], "lam": tuple(d["train"].get("lam", ()))})
        if "baseline" in d and isinstance(d["baseline"], dict):
            d["baseline"] = FixedPointConfig(**d["baseline"])
        if d.get("lcc") is not None and isinstance(d["lcc"], dict):
            lcc = dict(d["lcc"])
            if isinstance(lcc.get("baseline"), dict):
                lcc["baseline"] = FixedPointConfig(**lcc["baseline"])
            d["lcc"] = LccConfig(**lcc)
        if "lam" in d:
            d["lam"] = tuple(d["lam"])
        if "share_layers" in d:
            d["share_layers"] = tuple(d["share_layers"])
        return PipelineConfig(**d)


@dataclass
class LayerReport:
    layer: int
    kind: str
    baseline_shape: tuple[int, ...]
    baseline_adds: int
    pruned_shape: tuple[int, ...]
    pruned_groups: int
    unique_columns: int | None
    pooling_adds: int
    lcc_adds: int | None
    lcc_sqnr: float | None
    compressed_adds: int
    ratio: float


@dataclass
class CompressionReport:
    layers: list[LayerReport]
    accuracy: dict[str, float]
    total_baseline_adds: int
    total_compressed_adds: int
    total_ratio: float
    ratio_overflow: bool
    config: dict

    def to_dict(self) -> dict:
        return {
            "layers": [dataclasses.asdict(l) for l in self.layers],
            "accuracy": self.accuracy,
            "total_baseline_adds": self.total_baseline_adds,
            "total_compressed_adds": self.total_compressed_adds,
            "total_ratio": self.total_ratio,
            "ratio_overflow": self.ratio_overflow,
            "config": self.config,
        }


def compression_ratio(baseline_adds: int, compressed_adds: int) -> float:
    """Baseline over compressed additions; ``inf`` when the compressed count is zero."""
    if baseline_adds < 0 or compressed_adds < 0:
        raise ValueError("addition counts must be >= 0")
    if compressed_adds == 0:
        return math.inf
    return baseline_adds / compressed_adds


# ---------------------------------------------------------------------------
# datasets
# ---------------------------------------------------------------------------

_MNIST_FILES = (
    ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
)


def resolve_dataset(cfg: PipelineConfig) -> tuple[Dataset, Dataset]:
    """Locate the train/test datasets for a run.

    ``synthetic`` generates the deterministic digit corpus; ``mnist`` reads IDX
    files from $SHIFTADD_DATA; any other value is a directory of IDX files.
    """
    if cfg.dataset == "synthetic":
        n_test = cfg.test_limit or 2000
        n_train = cfg.train_limit or 10000
        return synthetic_dataset(n_train, n_test, seed=cfg.seed)
    root = os.environ.get(DATA_ENV_VAR, "") if cfg.dataset == "mnist" else cfg.dataset
    if not root or not os.path.isdir(root):
        raise FileNotFoundError(
            f"dataset directory {root!r} not found (set ${DATA_ENV_VAR} or pass a path)"
        )
    (ti, tl), (si, sl) = _MNIST_FILES
    train_set = load_mnist_idx(os.path.join(root, ti), os.path.join(root, tl), cfg.train_limit)
    test_set = load_mnist_idx(os.path.join(root, si), os.path.join(root, sl), cfg.test_limit)
    return train_set, test_set


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

_CKPT_HEADER = b"SHIFTADD-CKPT v1\n"


@dataclass
class Checkpoint:
    stage: str
    seed: int
    model: ModelParams
    clusters: dict[int, ClusterModel]
    retained: dict[int, np.ndarray]


def save_checkpoint(
    model: ModelParams,
    path,
    stage: str = "trained",
    seed: int = 0,
    clusters: dict[int, ClusterModel] | None = None,
    retained: dict[int, np.ndarray] | None = None,
) -> None:
    """Write the versioned checkpoint container documented in the module docstring."""
    clusters = clusters or {}
    retained = retained or {}
    layers_meta = []
    blobs: list[bytes] = []
    for layer in model.layers:
        layers_meta.append(
            {
                "kind": layer.kind,
                "activation": layer.activation,
                "w_shape": list(layer.W.shape),
                "b_shape": list(layer.b.shape),
            }
        )
        blobs.append(np.asarray(layer.W, dtype="<f4").tobytes())
        blobs.append(np.asarray(layer.b, dtype="<f4").tobytes())
    cluster_meta = {}
    for li, cm in sorted(clusters.items()):
        cluster_meta[str(li)] = {
            "members": [c.members.tolist() for c in cm.clusters],
            "centroid_dim": int(len(cm.clusters[0].centroid)) if cm.clusters else 0,
        }
        for c in cm.clusters:
            blobs.append(np.asarray(c.centroid, dtype="<f4").tobytes())
    manifest = {
        "version": 1,
        "stage": stage,
        "seed": seed,
        "layers": layers_meta,
        "clusters": cluster_meta,
        "retained": {str(k): np.asarray(v).tolist() for k, v in sorted(retained.items())},
    }
    mbytes = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode()
    body = struct.pack("<I", len(mbytes)) + mbytes + b"".join(blobs)
    with open(path, "wb") as fh:
        fh.write(_CKPT_HEADER)
        fh.write(body)
        fh.write(struct.pack("<I", zlib.crc32(body)))


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        raw = fh.read()
    if not raw.startswith(_CKPT_HEADER):
        raise ValueError("not a checkpoint file (bad header)")
    body, tail = raw[len(_CKPT_HEADER) : -4], raw[-4:]
    if len(raw) < len(_CKPT_HEADER) + 8:
        raise ValueError("checkpoint truncated")
    (crc,) = struct.unpack("<I", tail)
    if zlib.crc32(body) != crc:
        raise ValueError("checkpoint checksum mismatch (file corrupt or truncated)")
    (mlen,) = struct.unpack_from("<I", body, 0)
    manifest = json.loads(body[4 : 4 + mlen].decode())
    if manifest["version"] != 1:
        raise ValueError(f"unsupported checkpoint version {manifest['version']}")
    off = 4 + mlen
    layers = []
    for meta in manifest["layers"]:
        wn = int(np.prod(meta["w_shape"])) * 4
        W = np.frombuffer(body[off : off + wn], dtype="<f4").astype(float).reshape(meta["w_shape"])
        off += wn
        bn = int(np.prod(meta["b_shape"])) * 4
        b = np.frombuffer(body[off : off + bn], dtype="<f4").astype(float).reshape(meta["b_shape"])
        off += bn
        layers.append(Layer(W, b, meta["kind"], meta["activation"]))
    clusters: dict[int, ClusterModel] = {}
    for li_str, meta in sorted(manifest["clusters"].items(), key=lambda kv: int(kv[0])):
        cl = []
        for members in meta["members"]:
            cn = meta["centroid_dim"] * 4
            centroid = np.frombuffer(body[off : off + cn], dtype="<f4").astype(float)
            off += cn
            cl.append(Cluster(centroid, np.asarray(members, dtype=int)))
        clusters[int(li_str)] = ClusterModel(cl)
    retained = {int(k): np.asarray(v, dtype=int) for k, v in manifest["retained"].items()}
    return Checkpoint(manifest["stage"], manifest["seed"], ModelParams(layers), clusters, retained)


# ---------------------------------------------------------------------------
# deployed evaluation (adder programs)
# ---------------------------------------------------------------------------


@dataclass
class DeployedDense:
    gather: np.ndarray | None
    pools: list[np.ndarray] | None
    program: AdderProgram
    bias: np.ndarray
    activation: str


def _deployed_logits(stages: list[DeployedDense], x: np.ndarray) -> np.ndarray:
    a = np.asarray(x, dtype=float)
    for st in stages:
        v = a.T
        if st.gather is not None:
            v = v[st.gather]
        if st.pools is not None:
            v = np.stack([v[idx].sum(axis=0) for idx in st.pools])
        y = execute_program(st.program, v)
        z = y.T + st.bias
        a = np.maximum(z, 0.0) if st.activation == "relu" else z
    return a


def _deployed_accuracy(stages: list[DeployedDense], data: Dataset, batch: int = 1024) -> float:
    hits = 0
    for i in range(0, data.n, batch):
        logits = _deployed_logits(stages, data.x[i : i + batch])
        hits += int(np.sum(np.argmax(logits, axis=1) == data.y[i : i + batch]))
    return hits / data.n


# ---------------------------------------------------------------------------
# the pipeline
# ---------------------------------------------------------------------------


def _build_model(cfg: PipelineConfig) -> ModelParams:
    from .nncore import init_conv_net, init_mlp

    if cfg.conv is not None:
        c = cfg.conv
        return init_conv_net(
            c["in_maps"], c["image"], c["out_maps"], c["kernel"], c["classes"],
            seed=cfg.seed, method=c.get("method", "fk"),
        )
    return init_mlp(cfg.arch, seed=cfg.seed)


def _train_cfg(cfg: PipelineConfig, lam: tuple[float, ...]) -> TrainConfig:
    return dataclasses.replace(cfg.train, lam=lam, seed=cfg.seed)


def run_pipeline(
    cfg: PipelineConfig, data: tuple[Dataset, Dataset] | None = None
) -> CompressionReport:
    """Run the staged compression and return (and optionally persist) the report."""
    out_dir = cfg.out_dir
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)

    def _ckpt(name, model, **kw):
        if out_dir:
            save_checkpoint(model, os.path.join(out_dir, f"{name}.ckpt"), stage=name, seed=cfg.seed, **kw)

    try:
        train_set, test_set = data if data is not None else resolve_dataset(cfg)
    except Exception as e:  # noqa: BLE001
        raise StageError("dataset", e) from e

    lam = cfg.lam_tuple()
    accuracy: dict[str, float] = {}

    # --- baseline: unregularized reference ---------------------------------
    try:
        init = _build_model(cfg)
        base_model, _ = train(init, train_set, _train_cfg(cfg, (0.0,) * len(lam)))
        accuracy["baseline"] = top1_accuracy(base_model, test_set)
        _ckpt("baseline", base_model)
    except StageError:
        raise
    except Exception as e:  # noqa: BLE001
        raise StageError("baseline", e) from e

    baseline_adds: list[int] = []
    baseline_shapes: list[tuple[int, ...]] = []
    for layer in base_model.layers:
        baseline_shapes.append(tuple(layer.W.shape))
        if layer.kind == "dense":
            baseline_adds.append(csd_matrix_cost(layer.W, cfg.baseline).adds)
        else:
            lowered = convlower.lower_conv(layer.W, layer.kind.removeprefix("conv_"), cfg.conv["image"])
            per_k = [csd_matrix_cost(M, cfg.baseline).adds for M in lowered.matrices]
            baseline_adds.append(convlower.conv_addition_cost(lowered, per_k))

    # --- pruned -------------------------------------------------------------
    pruning_on = any(v > 0 for v in lam)
    retained: dict[int, np.ndarray] = {}
    try:
        if pruning_on:
            model, _ = train(init, train_set, _train_cfg(cfg, lam))
        else:
            model = base_model.copy()
        # compact the input layer's pruned columns (dense models only)
        if pruning_on and model.layers[0].kind == "dense" and lam[0] > 0:
            gs = model.layers[0].group_structure()
            reduced, kept = compact_pruned(model.layers[0].W, gs)
            model.layers[0].W = reduced
            retained[0] = kept
        gathered_train = _gather(train_set, retained.get(0))
        gathered_test = _gather(test_set, retained.get(0))
        if pruning_on:
            accuracy["pruned"] = top1_accuracy(model, gathered_test)
            _ckpt("pruned", model, retained=retained)
    except StageError:
        raise
    except Exception as e:  # noqa: BLE001
        raise StageError("pruned", e) from e

    pruned_shapes = [tuple(l.W.shape) for l in model.layers]
    pruned_groups = [
        int(np.sum(np.linalg.norm(l.group_structure().to_groups(l.W), axis=1) <= 1e-12))
        for l in model.layers
    ]
    if 0 in retained:
        pruned_groups[0] += baseline_shapes[0][1] - len(retained[0])

    # --- shared --------------------------------------------------------------
    shared: dict[int, SharedLayer] = {}
    clusters: dict[int, ClusterModel] = {}
    try:
        if cfg.share:
            for li in cfg.share_layers:
                if model.layers[li].kind != "dense":
                    raise ValueError(f"sharing requested on non-dense layer {li}")
                cm = cluster_columns(model.layers[li].W)
                rcfg = dataclasses.replace(
                    _train_cfg(cfg, (0.0,) * len(lam)), epochs=cfg.retrain_epochs
                )
                model, cm = retrain_shared(model, li, cm, gathered_train, rcfg)
                clusters[li] = cm
            for li, cm in clusters.items():
                shared[li] = build_equivalent(model.layers[li].W, cm)
            accuracy["shared"] = top1_accuracy(model, gathered_test)
            _ckpt("shared", model, clusters=clusters, retained=retained)
    except StageError:
        raise
    except Exception as e:  # noqa: BLE001
        raise StageError("shared", e) from e

    # --- lcc ------------------------------------------------------------------
    decomposition_info: dict[int, tuple[int, float]] = {}  # layer -> (adds, sqnr)
    try:
        if cfg.lcc is not None:
            stages: list[DeployedDense] = []
            for li, layer in enumerate(model.layers):
                if layer.kind == "dense":
                    M = shared[li].G if li in shared else layer.W
                    d = decompose(M, cfg.lcc)
                    if out_dir:
                        save_decomposition(d, os.path.join(out_dir, f"layer{li}.lccd"))
                    program = to_adder_program(d)
                    decomposition_info[li] = (count_additions(d), d.achieved_sqnr)
                    stages.append(
                        DeployedDense(
                            gather=retained.get(li) if li == 0 and li in retained else None,
                            pools=shared[li].index_sets if li in shared else None,
                            program=program,
                            bias=layer.b,
                            activation=layer.activation,
                        )
                    )
                else:
                    adds, sqnr = _decompose_conv(cfg, out_dir, li, layer)
                    decomposition_info[li] = (adds, sqnr)
            if all(l.kind == "dense" for l in model.layers):
                accuracy["lcc"] = _deployed_accuracy(stages, _gather(test_set, None))
            else:
                accuracy["lcc"] = _conv_program_accuracy(cfg, model, test_set)
    except StageError:
        raise
    except Exception as e:  # noqa: BLE001
        raise StageError("lcc", e) from e

    # --- report -----------------------------------------------------------------
    layer_reports = []
    total_base, total_comp = 0, 0
    for li, layer in enumerate(model.layers):
        pool = pooling_additions(shared[li]) if li in shared else 0
        if cfg.lcc is not None:
            lcc_adds, lcc_sqnr = decomposition_info[li]
            comp = pool + lcc_adds
        else:
            lcc_adds, lcc_sqnr = None, None
            if layer.kind == "dense":
                M = shared[li].G if li in shared else layer.W
                comp = pool + csd_matrix_cost(M, cfg.baseline).adds
            else:
                lowered = convlower.lower_conv(
                    layer.W, layer.kind.removeprefix("conv_"), cfg.conv["image"]
                )
                per_k = [csd_matrix_cost(Mk, cfg.baseline).adds for Mk in lowered.matrices]
                comp = convlower.conv_addition_cost(lowered, per_k)
        layer_reports.append(
            LayerReport(
                layer=li,
                kind=layer.kind,
                baseline_shape=baseline_shapes[li],
                baseline_adds=baseline_adds[li],
                pruned_shape=pruned_shapes[li],
                pruned_groups=pruned_groups[li],
                unique_columns=shared[li].G.shape[1] if li in shared else None,
                pooling_adds=pool,
                lcc_adds=lcc_adds,
                lcc_sqnr=lcc_sqnr,
                compressed_adds=comp,
                ratio=compression_ratio(baseline_adds[li], comp) if comp else math.inf,
            )
        )
        total_base += baseline_adds[li]
        total_comp += layer_reports[-1].compressed_adds

    report = CompressionReport(
        layers=layer_reports,
        accuracy=accuracy,
        total_baseline_adds=total_base,
        total_compressed_adds=total_comp,
        total_ratio=compression_ratio(total_base, total_comp),
        ratio_overflow=total_comp == 0,
        config=cfg.to_dict(),
    )
    if out_dir:
        emit_report(report, out_dir)
    return report


def _gather(data: Dataset, retained: np.ndarray | None) -> Dataset:
    if retained is None:
        return data
    return Dataset(data.x[:, retained], data.y)


def _decompose_conv(cfg: PipelineConfig, out_dir, li: int, layer) -> tuple[int, float]:
    """Factor each per-map matrix of a conv layer; returns (layer adds, worst map SQNR)."""
    method = layer.kind.removeprefix("conv_")
    lowered = convlower.lower_conv(layer.W, method, cfg.conv["image"])
    per_k_adds = []
    worst = math.inf
    for k, M in enumerate(lowered.matrices):
        d = decompose(M, cfg.lcc)
        if out_dir:
            save_decomposition(d, os.path.join(out_dir, f"layer{li}_map{k}.lccd"))
        per_k_adds.append(count_additions(d))
        worst = min(worst, d.achieved_sqnr)
    return convlower.conv_addition_cost(lowered, per_k_adds), worst


def _conv_program_accuracy(cfg: PipelineConfig, model: ModelParams, test_set: Dataset) -> float:
    """Accuracy of a conv-then-dense model with every matvec run as an adder program."""
    conv_layer, dense_layer = model.layers
    method = conv_layer.kind.removeprefix("conv_")
    lowered = convlower.lower_conv(conv_layer.W, method, cfg.conv["image"])
    programs = [to_adder_program(decompose(M, cfg.lcc)) for M in lowered.matrices]
    dense_prog = to_adder_program(decompose(dense_layer.W, cfg.lcc))
    spec = lowered.spec
    K, N, O, P = spec.in_maps, spec.out_maps, spec.kernel, spec.out_size
    hits = 0
    for i in range(0, test_set.n, 256):
        xb = test_set.x[i : i + 256]
        B = len(xb)
        imgs = xb.reshape(B, K, spec.image, spec.image)
        y = np.zeros((B, N, P, P))
        for r in range(P):
            for c in range(P):
                if method == "fk":
                    for k in range(K):
                        patch = imgs[:, k, r : r + O, c : c + O].reshape(B, O * O).T
                        y[:, :, r, c] += execute_program(programs[k], patch).T
                else:
                    for k in range(K):
                        for t in range(O):
                            seg = imgs[:, k, r : r + O, c + t].T
                            out = execute_program(programs[k], seg)  # (N*O, B)
                            y[:, :, r, c] += out.reshape(N, O, B)[:, t, :].T
        z = y + conv_layer.b[None, :, None, None]
        a = np.maximum(z, 0.0).reshape(B, -1)
        logits = execute_program(dense_prog, a.T).T + dense_layer.b
        hits += int(np.sum(np.argmax(logits, axis=1) == test_set.y[i : i + 256]))
    return hits / test_set.n


def run_sweep(
    cfg: PipelineConfig,
    lam_values,
    layer: int = 0,
    data: tuple[Dataset, Dataset] | None = None,
) -> list[tuple[float, CompressionReport]]:
    """Independent seeded runs over regularization strengths for one layer.

    Each run writes into ``out_dir/lam_<value>/``; report filenames embed the
    value.
    """
    results = []
    for lv in lam_values:
        lam = list(cfg.lam_tuple())
        lam[layer] = float(lv)
        sub = dataclasses.replace(
            cfg,
            lam=tuple(lam),
            out_dir=os.path.join(cfg.out_dir, f"lam_{lv:g}") if cfg.out_dir else None,
        )
        report = run_pipeline(sub, data=data)
        if sub.out_dir:
            emit_report(report, sub.out_dir, tag=f"lam_{lv:g}")
        results.append((float(lv), report))
    return results


# ---------------------------------------------------------------------------
# report emission
# ---------------------------------------------------------------------------

_CSV_COLUMNS = [
    "layer",
    "stage",
    "kind",
    "shape",
    "adds",
    "pooling_adds",
    "sqnr_db",
    "accuracy",
    "unique_columns",
    "ratio",
]


def emit_report(report: CompressionReport, out_dir, formats=("json", "csv"), tag="report"):
    """Write the report as JSON and/or CSV (one CSV row per layer and stage)."""
    os.makedirs(out_dir, exist_ok=True)
    written = []
    if "json" in formats:
        path = os.path.join(out_dir, f"{tag}.json")
        with open(path, "w") as fh:
            json.dump(report.to_dict(), fh, indent=2, sort_keys=True, default=_json_default)
            fh.write("\n")
        written.append(path)
    if "csv" in formats:
        path = os.path.join(out_dir, f"{tag}.csv")
        with open(path, "w") as fh:
            fh.write(",".join(_CSV_COLUMNS) + "\n")
            for lr in report.layers:
                rows = {
                    "baseline": (lr.baseline_shape, lr.baseline_adds, 0, None),
                    "pruned": (lr.pruned_shape, None, 0, None),
                    "shared": (
                        (lr.baseline_shape[0], lr.unique_columns) if lr.unique_columns else None,
                        None,
                        lr.pooling_adds,
                        None,
                    ),
                    "lcc": (None, lr.lcc_adds, lr.pooling_adds, lr.lcc_sqnr),
                }
                for stage, (shape, adds, pool, sqnr) in rows.items():
                    if stage != "baseline" and stage not in report.accuracy:
                        continue
                    fh.write(
                        ",".join(
                            str(v) if v is not None else ""
                            for v in [
                                lr.layer,
                                stage,
                                lr.kind,
                                "x".join(map(str, shape)) if shape else "",
                                adds,
                                pool,
                                f"{sqnr:.6f}" if isinstance(sqnr, float) and math.isfinite(sqnr) else sqnr,
                                report.accuracy.get(stage),
                                lr.unique_columns if stage in ("shared", "lcc") else "",
                                f"{lr.ratio:.6f}" if stage == "lcc" and math.isfinite(lr.ratio) else "",
                            ]
                        )
                        + "\n"
                    )
        written.append(path)
    return written


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, float) and not math.isfinite(o):
        return repr(o)
    raise TypeError(f"cannot serialize {type(o)}")
