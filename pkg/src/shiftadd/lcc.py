"""Shift-add factorization of real matrices and compilation to adder programs.

A matrix is vertically sliced into tall submatrices; each slice is expressed as
a product of sparse factors whose nonzero entries are signed powers of two.
Two greedy builders are provided:

* ``decompose_fp`` -- fully parallel: a chain of stages, each row of a stage
  combining at most ``S`` codebook vectors (previous-stage outputs plus
  passed-through raw inputs), so every output costs at most ``S - 1`` additions
  per stage and rows of one stage are mutually independent.
* ``decompose_fs`` -- fully sequential: a single growing codebook, one new
  codeword (= one addition) per step, each output finally a free power-of-two
  scaling of one codeword.

The result compiles to an :class:`AdderProgram`, a DAG of binary shift-add
nodes whose node count is the deployed addition cost.

Serialized decomposition layout (version 1, all integers little-endian)::

    magic        4 bytes  b"LCCD"
    version      u16      = 1
    algorithm    u8       0 = fp, 1 = fs
    converged    u8       0 / 1
    rows N       u32
    cols K       u32
    slice_width  u32
    s_terms      u16      (0 for fs)
    reserved     u16      = 0
    clamped      u32      count of exponent clamps during the build
    sqnr_db      f64      achieved SQNR (IEEE 754, +inf allowed)
    n_slices     u32
    per slice:   col_start u32, col_stop u32, n_factors u32
      per factor: out_dim u32, in_dim u32
        per row:  n_terms u16, then per term: source u32, exponent i16, sign i8
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .numerics import FixedPointConfig, quantize_fixed, sqnr_db

__all__ = [
    "EXP_MIN",
    "EXP_MAX",
    "PowTerm",
    "FactorMatrix",
    "LccSlice",
    "LccDecomposition",
    "AdderNode",
    "AdderProgram",
    "LccConfig",
    "slice_matrix",
    "default_slice_width",
    "decompose_fp",
    "decompose_fs",
    "decompose",
    "reconstruct",
    "to_adder_program",
    "execute_program",
    "count_additions",
    "save_decomposition",
    "load_decomposition",
]

# Signed power-of-two exponents are clamped to this range; wide enough for a
# 10-fractional-bit baseline with headroom.
EXP_MIN = -16
EXP_MAX = 15


@dataclass(frozen=True)
class PowTerm:
    """One signed power-of-two tap: ``sign * 2**exponent * value[source]``."""

    source: int
    exponent: int
    sign: int

    def coeff(self) -> float:
        return self.sign * 2.0**self.exponent


@dataclass
class FactorMatrix:
    """Sparse stage matrix; ``rows[i]`` lists the signed power-of-two taps of output i."""

    out_dim: int
    in_dim: int
    rows: list[list[PowTerm]]

    def to_dense(self) -> np.ndarray:
        D = np.zeros((self.out_dim, self.in_dim))
        for i, row in enumerate(self.rows):
            for t in row:
                D[i, t.source] += t.coeff()
        return D


@dataclass
class LccSlice:
    col_start: int
    col_stop: int
    factors: list[FactorMatrix]


@dataclass
class LccDecomposition:
    """Factor chains for every vertical slice of the original matrix."""

    original_shape: tuple[int, int]
    slice_width: int
    algorithm: str  # "fp" | "fs"
    s_terms: int  # FP row sparsity; 0 for FS
    slices: list[LccSlice]
    achieved_sqnr: float
    converged: bool = True
    clamped_exponents: int = 0


@dataclass
class AdderNode:
    left: PowTerm
    right: PowTerm | None


@dataclass
class AdderProgram:
    """Topologically ordered shift-add DAG.

    Sources ``0 .. n_inputs-1`` are inputs; source ``n_inputs + j`` is node j.
    An output of ``None`` is the constant 0.  Composed reference exponents may
    leave the factor range [EXP_MIN, EXP_MAX]; execution is unaffected.
    """

    n_inputs: int
    nodes: list[AdderNode]
    outputs: list[PowTerm | None]


class _Diag:
    """Mutable counters threaded through a build."""

    __slots__ = ("clamped",)

    def __init__(self) -> None:
        self.clamped = 0


def _round_pow2(c: float) -> tuple[int, int, bool] | None:
    """Round a coefficient to the nearest signed power of two in the log2 domain.

    Ties go toward the smaller exponent.  Returns (sign, exponent, clamped) or
    None for zero; out-of-range exponents clamp to [EXP_MIN, EXP_MAX].
    """
    if c == 0.0 or not math.isfinite(c):
        return None
    sign = 1 if c > 0 else -1
    e = math.log2(abs(c))
    f = math.floor(e)
    exp = f if (e - f) <= 0.5 else f + 1
    clamped = exp < EXP_MIN or exp > EXP_MAX
    return sign, min(max(exp, EXP_MIN), EXP_MAX), clamped


def _pow2_floor_ceil(c: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized floor/ceil power-of-two candidates of coefficients (0 stays 0).

    Returns (floor coeffs, ceil coeffs, clamped mask).
    """
    a = np.abs(c)
    nz = a > 0
    f = np.zeros_like(a)
    with np.errstate(divide="ignore"):
        f[nz] = np.floor(np.log2(a[nz]))
    lo = np.clip(f, EXP_MIN, EXP_MAX)
    hi = np.clip(f + 1, EXP_MIN, EXP_MAX)
    clamped = nz & ((f < EXP_MIN) | (f + 1 > EXP_MAX))
    s = np.sign(c)
    return s * np.power(2.0, lo) * nz, s * np.power(2.0, hi) * nz, clamped


# ---------------------------------------------------------------------------
# slicing
# ---------------------------------------------------------------------------


def slice_matrix(W: np.ndarray, width: int) -> list[tuple[tuple[int, int], np.ndarray]]:
    """Cut ``W`` into ceil(K / width) vertical slices; the last may be narrower."""
    if width < 1:
        raise ValueError("slice width must be >= 1")
    W = np.atleast_2d(np.asarray(W, dtype=float))
    K = W.shape[1]
    return [((c, min(c + width, K)), W[:, c : min(c + width, K)]) for c in range(0, K, width)]


def default_slice_width(N: int) -> int:
    """Slice width max(1, floor(log2 N)): tall slices suit the factorization."""
    if N < 1:
        raise ValueError("N must be >= 1")
    return max(1, int(math.floor(math.log2(N)))) if N > 1 else 1


# ---------------------------------------------------------------------------
# FP: staged matching pursuit with shared per-stage codebook
# ---------------------------------------------------------------------------


def _mp_row(
    w: np.ndarray,
    codebook: np.ndarray,
    norms2: np.ndarray,
    S: int,
    diag: _Diag,
) -> tuple[list[PowTerm], np.ndarray]:
    """Greedy <= S-term approximation of ``w`` over codebook rows.

    Each round selects the row with the largest normalized correlation to the
    residual, takes the least-squares scalar rounded to a signed power of two,
    and is skipped (terminating the row) if it fails to reduce the residual.
    A source is used at most once per row.
    """
    r = w.copy()
    approx = np.zeros_like(w)
    terms: list[PowTerm] = []
    blocked = norms2 <= 0.0
    for _ in range(S):
        res2 = float(r @ r)
        if res2 == 0.0:
            break
        corr = codebook @ r
        score = np.where(blocked, -1.0, corr * corr / np.where(blocked, 1.0, norms2))
        j = int(np.argmax(score))
        if score[j] <= 0.0:
            break
        rounded = _round_pow2(corr[j] / norms2[j])
        if rounded is None:
            break
        sign, exp, clamped = rounded
        step = sign * 2.0**exp * codebook[j]
        new_r = r - step
        if float(new_r @ new_r) >= res2:
            break
        diag.clamped += clamped
        terms.append(PowTerm(j, exp, sign))
        approx = approx + step
        r = new_r
        blocked = blocked.copy()
        blocked[j] = True
    return terms, approx


def _passthrough_rows(k: int) -> list[list[PowTerm]]:
    return [[PowTerm(j, 0, 1)] for j in range(k)]


def _fp_factors(
    Ws: np.ndarray,
    S: int,
    max_factors: int | None,
    target_linear: float | None,
    hard_cap: int,
    diag: _Diag,
) -> tuple[list[FactorMatrix], bool]:
    """Run FP stages on one slice; returns the factor chain and a convergence flag."""
    N, k = Ws.shape
    identity = FactorMatrix(k, k, _passthrough_rows(k))
    signal = float(np.sum(Ws * Ws))
    if signal == 0.0:
        return [identity, FactorMatrix(N, k, [[] for _ in range(N)])], True

    cap = max_factors if max_factors is not None else hard_cap
    approx = np.zeros_like(Ws)
    stage_rows: list[list[list[PowTerm]]] = []
    converged = max_factors is not None  # fixed-stage runs always "converge"
    prev_noise = signal
    for p in range(cap):
        codebook = np.eye(k) if p == 0 else np.vstack([np.eye(k), approx])
        norms2 = np.einsum("ij,ij->i", codebook, codebook)
        rows: list[list[PowTerm]] = []
        new_approx = np.empty_like(approx)
        for i in range(N):
            terms, vec = _mp_row(Ws[i], codebook, norms2, S, diag)
            if p > 0:
                prev_res = Ws[i] - approx[i]
                new_res = Ws[i] - vec
                # a stage may never make a row worse: fall back to passthrough
                if float(new_res @ new_res) > float(prev_res @ prev_res):
                    terms, vec = [PowTerm(k + i, 0, 1)], approx[i].copy()
            rows.append(terms)
            new_approx[i] = vec
        approx = new_approx
        stage_rows.append(rows)
        noise = float(np.sum((Ws - approx) ** 2))
        if target_linear is not None:
            if noise == 0.0 or (math.isfinite(target_linear) and signal >= target_linear * noise):
                converged = True
                break
            if noise >= prev_noise:  # plateau: further stages cannot help
                break
        prev_noise = noise

    factors = [identity]
    n_stages = len(stage_rows)
    for p, rows in enumerate(stage_rows):
        in_dim = k if p == 0 else k + N
        if p == n_stages - 1:
            factors.append(FactorMatrix(N, in_dim, rows))
        else:
            factors.append(FactorMatrix(k + N, in_dim, _passthrough_rows(k) + rows))
    _prune_dead_rows(factors)
    return factors, converged


def _prune_dead_rows(factors: list[FactorMatrix]) -> None:
    """Drop intermediate-factor rows never referenced downstream (in place).

    The seed identity factor and the final factor are kept intact; sources in
    the following factor are renumbered to the surviving rows.
    """
    for p in range(len(factors) - 2, 0, -1):
        consumer = factors[p + 1]
        used = sorted({t.source for row in consumer.rows for t in row})
        if len(used) == factors[p].out_dim:
            continue
        remap = {old: new for new, old in enumerate(used)}
        factors[p] = FactorMatrix(len(used), factors[p].in_dim, [factors[p].rows[o] for o in used])
        consumer.rows = [
            [PowTerm(remap[t.source], t.exponent, t.sign) for t in row] for row in consumer.rows
        ]
        consumer.in_dim = len(used)


# ---------------------------------------------------------------------------
# FS: growing shared codebook, one addition per step
# ---------------------------------------------------------------------------


@dataclass
class _Codeword:
    vector: np.ndarray
    parents: tuple[PowTerm, PowTerm] | None  # None for basis vectors


def _best_single_scale(w: np.ndarray, u: np.ndarray, u2: float):
    """Best approximation of ``w`` by sign*2**e * u.

    Tries the floor and ceil log2 roundings of the least-squares scale and
    returns (residual^2, sign, exp, clamped).
    """
    lam = float(w @ u) / u2
    if lam == 0.0 or not math.isfinite(lam):
        return float(w @ w), 0, 0, False
    best = (math.inf, 0, 0, False)
    sign = 1 if lam > 0 else -1
    f = math.floor(math.log2(abs(lam)))
    for exp in (f, f + 1):
        cl = min(max(exp, EXP_MIN), EXP_MAX)
        c = sign * 2.0**cl
        d = w - c * u
        r2 = float(d @ d)
        if r2 < best[0]:
            best = (r2, sign, cl, cl != exp)
    return best


def _fs_candidate(
    w: np.ndarray,
    C: np.ndarray,
    norms2: np.ndarray,
    residual: np.ndarray,
    search_cap: int,
):
    """Best one-addition codeword for ``w``: u = a*C[i] + b*C[j] with power-of-two a, b.

    Pairs are drawn from the codewords most correlated with the row and with
    its current residual; coefficients come from the pairwise least-squares
    solution, with both floor/ceil power-of-two roundings tried per
    coefficient.  Returns (residual^2 of w - u, i, j, coeff_i, coeff_j,
    n_clamped) or None.
    """
    m = C.shape[0]
    valid = norms2 > 0.0
    if not np.any(valid):
        return None
    half = max(1, search_cap // 2)

    def top(v: np.ndarray) -> np.ndarray:
        score = np.where(valid, (C @ v) ** 2 / np.where(valid, norms2, 1.0), -1.0)
        n = min(half, m)
        idx = np.argpartition(score, m - n)[m - n :]
        return idx[score[idx] > 0.0]

    T = np.unique(np.concatenate([top(w), top(residual)]))
    if T.size < 2:
        return None
    Ct = C[T]
    G = Ct @ Ct.T
    b = Ct @ w
    diagG = np.diag(G).copy()
    det = np.outer(diagG, diagG) - G * G
    ok = det > 1e-12 * np.outer(diagG, diagG)
    np.fill_diagonal(ok, False)
    with np.errstate(divide="ignore", invalid="ignore"):
        alpha = np.where(ok, (diagG[None, :] * b[:, None] - G * b[None, :]) / det, 0.0)
        beta = np.where(ok, (diagG[:, None] * b[None, :] - G * b[:, None]) / det, 0.0)
    w2 = float(w @ w)
    best = None
    a_lo, a_hi, a_cl = _pow2_floor_ceil(alpha)
    b_lo, b_hi, b_cl = _pow2_floor_ceil(beta)
    for a_cand in (a_lo, a_hi):
        for b_cand in (b_lo, b_hi):
            r2 = (
                w2
                - 2.0 * a_cand * b[:, None]
                - 2.0 * b_cand * b[None, :]
                + a_cand**2 * diagG[:, None]
                + b_cand**2 * diagG[None, :]
                + 2.0 * a_cand * b_cand * G
            )
            r2 = np.where(ok & (a_cand != 0.0) & (b_cand != 0.0), r2, np.inf)
            flat = int(np.argmin(r2))
            i, j = divmod(flat, r2.shape[1])
            val = float(r2[i, j])
            if math.isfinite(val) and (best is None or val < best[0]):
                clamps = int(a_cl[i, j]) + int(b_cl[i, j])
                best = (val, int(T[i]), int(T[j]), float(a_cand[i, j]), float(b_cand[i, j]), clamps)
    return best


def _fs_build(
    Ws: np.ndarray,
    target_linear: float | None,
    budget: int,
    search_cap: int,
    diag: _Diag,
) -> tuple[list[FactorMatrix], bool]:
    """Run the sequential builder on one slice; returns factor chain + convergence."""
    N, k = Ws.shape
    words: list[_Codeword] = [_Codeword(np.eye(k)[j], None) for j in range(k)]
    C = np.eye(k)
    norms2 = np.ones(k)

    row_norm2 = np.einsum("ij,ij->i", Ws, Ws)
    assign: list[tuple[int, int, int] | None] = [None] * N  # (codeword, sign, exp)
    res2 = row_norm2.copy()

    def allowance(i: int) -> float:
        if target_linear is None:
            return 0.0  # budget-driven: rows are never "satisfied"
        if math.isinf(target_linear):
            return 0.0
        return row_norm2[i] / target_linear

    def satisfied(i: int) -> bool:
        if row_norm2[i] == 0.0:
            return True
        if target_linear is None:
            return False
        return res2[i] <= allowance(i)

    def try_improve(i: int, c_idx: int) -> bool:
        r2, sign, exp, clamped = _best_single_scale(Ws[i], C[c_idx], norms2[c_idx])
        if r2 < res2[i]:
            res2[i] = r2
            assign[i] = (c_idx, sign, exp)
            diag.clamped += clamped
            return True
        return False

    for i in range(N):
        if row_norm2[i] == 0.0:
            continue
        for j in range(k):
            try_improve(i, j)

    stuck: set[int] = set()
    steps = 0
    while steps < budget:
        pending = [i for i in range(N) if not satisfied(i) and i not in stuck]
        if not pending:
            break
        worst = max(pending, key=lambda i: res2[i] / row_norm2[i])
        residual = Ws[worst] - (
            assign[worst][1] * 2.0 ** assign[worst][2] * C[assign[worst][0]]
            if assign[worst] is not None
            else 0.0
        )
        cand = _fs_candidate(Ws[worst], C, norms2, residual, search_cap)
        appended = False
        if cand is not None:
            _, ia, ib, ca, cb, cand_clamps = cand
            u = ca * C[ia] + cb * C[ib]
            u2 = float(u @ u)
            if u2 > 0.0:
                r2, sign, exp, _cl = _best_single_scale(Ws[worst], u, u2)
                if r2 < res2[worst]:
                    diag.clamped += cand_clamps
                    sa, ea = 1 if ca > 0 else -1, int(round(math.log2(abs(ca))))
                    sb, eb = 1 if cb > 0 else -1, int(round(math.log2(abs(cb))))
                    words.append(_Codeword(u, (PowTerm(ia, ea, sa), PowTerm(ib, eb, sb))))
                    C = np.vstack([C, u])
                    norms2 = np.append(norms2, u2)
                    steps += 1
                    appended = True
                    new_idx = len(words) - 1
                    for i in range(N):
                        if row_norm2[i] == 0.0 or satisfied(i):
                            continue
                        if try_improve(i, new_idx) and i in stuck:
                            stuck.discard(i)
        if not appended:
            stuck.add(worst)

    converged = all(satisfied(i) for i in range(N)) if target_linear is not None else True
    return _fs_assemble(k, N, words, assign, row_norm2), converged


def _fs_assemble(
    k: int,
    N: int,
    words: list[_Codeword],
    assign: list[tuple[int, int, int] | None],
    row_norm2: np.ndarray,
) -> list[FactorMatrix]:
    """Layer live codewords by dependency depth into a factor chain."""
    live: set[int] = set()
    stack = [a[0] for i, a in enumerate(assign) if a is not None and row_norm2[i] > 0.0]
    while stack:
        c = stack.pop()
        if c < k or c in live:
            continue
        live.add(c)
        for t in words[c].parents:
            stack.append(t.source)

    depth = {j: 0 for j in range(k)}
    for c in sorted(live):
        depth[c] = 1 + max(depth[t.source] for t in words[c].parents)
    D = max(depth.values(), default=0)

    # need_until[s]: last level at which signal s must still be present
    need_until = {j: 0 for j in range(k)}
    for i, a in enumerate(assign):
        if a is not None and row_norm2[i] > 0.0:
            need_until[a[0]] = D
    for c in sorted(live, reverse=True):
        for t in words[c].parents:
            need_until[t.source] = max(need_until.get(t.source, 0), depth[c] - 1)

    factors = [FactorMatrix(k, k, _passthrough_rows(k))]
    level_index = {j: j for j in range(k)}  # signal id -> row index at current level
    for p in range(1, D + 1):
        members = [s for s in sorted(depth) if depth[s] <= p and need_until.get(s, -1) >= p]
        rows: list[list[PowTerm]] = []
        new_index: dict[int, int] = {}
        for s in members:
            new_index[s] = len(rows)
            if depth[s] == p:
                rows.append(
                    [PowTerm(level_index[t.source], t.exponent, t.sign) for t in words[s].parents]
                )
            else:
                rows.append([PowTerm(level_index[s], 0, 1)])
        in_dim = factors[-1].out_dim
        factors.append(FactorMatrix(len(rows), in_dim, rows))
        level_index = new_index

    out_rows: list[list[PowTerm]] = []
    for i in range(N):
        a = assign[i]
        if a is None or row_norm2[i] == 0.0:
            out_rows.append([])
        else:
            out_rows.append([PowTerm(level_index[a[0]], a[2], a[1])])
    factors.append(FactorMatrix(N, factors[-1].out_dim, out_rows))
    return factors


# ---------------------------------------------------------------------------
# public decomposition API
# ---------------------------------------------------------------------------


@dataclass
class LccConfig:
    """Knobs for :func:`decompose`.

    ``policy`` selects the stopping rule: ``match_baseline`` targets each
    slice's own quantization SQNR on the ``baseline`` grid, ``fixed_db``
    targets ``target_db``, and ``fixed_factors`` runs exactly ``max_factors``
    FP stages (for FS it becomes an addition budget of ``max_factors * N``).
    """

    algorithm: str = "fs"
    s_terms: int = 2
    slice_width: int | None = None
    policy: str = "match_baseline"
    target_db: float = 40.0
    max_factors: int = 8
    baseline: FixedPointConfig = field(default_factory=FixedPointConfig)
    hard_cap: int = 32
    budget: int | None = None
    search_cap: int = 64


def _default_fs_budget(N: int) -> int:
    return 256 + 48 * N


def _slice_target_linear(Ws: np.ndarray, cfg: LccConfig) -> float | None:
    if cfg.policy == "fixed_db":
        return 10.0 ** (cfg.target_db / 10.0)
    if cfg.policy == "match_baseline":
        t = sqnr_db(Ws, quantize_fixed(Ws, cfg.baseline))
        return math.inf if math.isinf(t) else 10.0 ** (t / 10.0)
    if cfg.policy == "fixed_factors":
        return None
    raise ValueError(f"unknown policy {cfg.policy!r}")


def decompose(W: np.ndarray, cfg: LccConfig | None = None) -> LccDecomposition:
    """Slice ``W`` and decompose every slice with the configured algorithm."""
    cfg = cfg or LccConfig()
    if cfg.algorithm == "fp" and cfg.s_terms < 2:
        raise ValueError("FP needs s_terms >= 2")
    if cfg.policy == "fixed_factors" and cfg.max_factors < 1:
        raise ValueError("fixed_factors needs max_factors >= 1")
    W = np.atleast_2d(np.asarray(W, dtype=float))
    N, K = W.shape
    width = cfg.slice_width if cfg.slice_width is not None else default_slice_width(N)
    diag = _Diag()
    slices: list[LccSlice] = []
    converged = True
    for (c0, c1), Ws in slice_matrix(W, width):
        if not np.any(Ws):
            k = Ws.shape[1]
            factors = [
                FactorMatrix(k, k, _passthrough_rows(k)),
                FactorMatrix(N, k, [[] for _ in range(N)]),
            ]
            ok = True
        elif cfg.algorithm == "fp":
            if cfg.policy == "fixed_factors":
                factors, ok = _fp_factors(Ws, cfg.s_terms, cfg.max_factors, None, cfg.hard_cap, diag)
            else:
                factors, ok = _fp_factors(
                    Ws, cfg.s_terms, None, _slice_target_linear(Ws, cfg), cfg.hard_cap, diag
                )
        elif cfg.algorithm == "fs":
            if cfg.policy == "fixed_factors":
                target, budget = None, cfg.max_factors * N
            else:
                target = _slice_target_linear(Ws, cfg)
                budget = cfg.budget if cfg.budget is not None else _default_fs_budget(N)
            factors, ok = _fs_build(Ws, target, budget, cfg.search_cap, diag)
        else:
            raise ValueError(f"unknown algorithm {cfg.algorithm!r}")
        slices.append(LccSlice(c0, c1, factors))
        converged &= ok

    d = LccDecomposition(
        original_shape=(N, K),
        slice_width=width,
        algorithm=cfg.algorithm,
        s_terms=cfg.s_terms if cfg.algorithm == "fp" else 0,
        slices=slices,
        achieved_sqnr=0.0,
        converged=converged,
        clamped_exponents=diag.clamped,
    )
    d.achieved_sqnr = math.inf if not np.any(W) else sqnr_db(W, reconstruct(d))
    return d


def decompose_fp(
    W: np.ndarray,
    s_terms: int = 2,
    *,
    max_factors: int | None = None,
    target_db: float | None = None,
    hard_cap: int = 32,
) -> LccDecomposition:
    """FP-decompose a single (already tall) matrix as one slice.

    Exactly one stopping rule must be given: a fixed number of stages or a
    target SQNR in dB (``math.inf`` demands exact reconstruction).
    """
    if s_terms < 2:
        raise ValueError("s_terms must be >= 2")
    if (max_factors is None) == (target_db is None):
        raise ValueError("specify exactly one of max_factors / target_db")
    W = np.atleast_2d(np.asarray(W, dtype=float))
    cfg = LccConfig(
        algorithm="fp",
        s_terms=s_terms,
        slice_width=W.shape[1],
        policy="fixed_factors" if max_factors is not None else "fixed_db",
        target_db=target_db if target_db is not None else 0.0,
        max_factors=max_factors if max_factors is not None else 0,
        hard_cap=hard_cap,
    )
    return decompose(W, cfg)


def decompose_fs(
    W: np.ndarray,
    *,
    target_db: float,
    budget: int | None = None,
    search_cap: int = 64,
) -> LccDecomposition:
    """FS-decompose a single (already tall) matrix as one slice.

    Stops once every row reaches ``target_db`` (``math.inf`` demands exact
    rows) or when the addition budget runs out, whichever comes first; the
    convergence flag reports which.
    """
    W = np.atleast_2d(np.asarray(W, dtype=float))
    cfg = LccConfig(
        algorithm="fs",
        slice_width=W.shape[1],
        policy="fixed_db",
        target_db=target_db,
        budget=budget,
        search_cap=search_cap,
    )
    return decompose(W, cfg)


# ---------------------------------------------------------------------------
# reconstruction, compilation, execution, counting
# ---------------------------------------------------------------------------


def reconstruct(d: LccDecomposition) -> np.ndarray:
    """Dense matrix equal to the factor products, slices concatenated horizontally."""
    N, K = d.original_shape
    out = np.zeros((N, K))
    for sl in d.slices:
        M: np.ndarray | None = None
        for F in sl.factors:
            Fd = F.to_dense()
            M = Fd if M is None else Fd @ M
        out[:, sl.col_start : sl.col_stop] = M
    return out


def _compose(base: PowTerm | None, t: PowTerm) -> PowTerm | None:
    if base is None:
        return None
    return PowTerm(base.source, base.exponent + t.exponent, base.sign * t.sign)


def to_adder_program(d: LccDecomposition) -> AdderProgram:
    """Compile a decomposition into a shift-add DAG.

    Single-tap rows become references (no node); multi-tap rows become chains
    of binary adders; slice outputs are summed per matrix row.  The program's
    node count equals :func:`count_additions` of the decomposition.
    """
    N, K = d.original_shape
    nodes: list[AdderNode] = []

    def emit(taps: list[PowTerm]) -> PowTerm | None:
        if not taps:
            return None
        acc = taps[0]
        for t in taps[1:]:
            nodes.append(AdderNode(acc, t))
            acc = PowTerm(K + len(nodes) - 1, 0, 1)
        return acc

    per_slice: list[list[PowTerm | None]] = []
    for sl in d.slices:
        refs: list[PowTerm | None] = [
            PowTerm(sl.col_start + j, 0, 1) for j in range(sl.factors[0].in_dim)
        ]
        for F in sl.factors:
            cur: list[PowTerm | None] = []
            for row in F.rows:
                taps = [c for c in (_compose(refs[t.source], t) for t in row) if c is not None]
                cur.append(taps[0] if len(taps) == 1 else emit(taps))
            refs = cur
        per_slice.append(refs)

    outputs: list[PowTerm | None] = []
    for i in range(N):
        taps = [refs[i] for refs in per_slice if refs[i] is not None]
        outputs.append(taps[0] if len(taps) == 1 else emit(taps))
    return AdderProgram(n_inputs=K, nodes=nodes, outputs=outputs)


def execute_program(p: AdderProgram, x) -> np.ndarray:
    """Evaluate the DAG on ``x`` (length n_inputs, or an (n_inputs, batch) array)."""
    x = np.asarray(x, dtype=float)
    if x.shape[0] != p.n_inputs:
        raise ValueError(f"expected {p.n_inputs} inputs, got {x.shape[0]}")
    zero = np.zeros(x.shape[1:])
    vals: list[np.ndarray] = [x[j] for j in range(p.n_inputs)]

    def read(t: PowTerm) -> np.ndarray:
        return t.sign * 2.0**t.exponent * vals[t.source]

    for node in p.nodes:
        v = read(node.left)
        if node.right is not None:
            v = v + read(node.right)
        vals.append(v)
    return np.stack([zero if t is None else read(t) for t in p.outputs])


def count_additions(obj) -> int:
    """Addition count of a decomposition or compiled program.

    For a program: nodes with two operands.  For a decomposition: per-row
    effective taps minus one (taps feeding from all-zero rows do not count)
    plus the adds needed to sum slice contributions per output.  Both counters
    agree for any decomposition.
    """
    if isinstance(obj, AdderProgram):
        return sum(1 for n in obj.nodes if n.right is not None)
    d: LccDecomposition = obj
    N, _ = d.original_shape
    total = 0
    slice_zero: list[list[bool]] = []
    for sl in d.slices:
        zero = [False] * sl.factors[0].in_dim
        for F in sl.factors:
            cur = []
            for row in F.rows:
                eff = sum(1 for t in row if not zero[t.source])
                total += max(0, eff - 1)
                cur.append(eff == 0)
            zero = cur
        slice_zero.append(zero)
    for i in range(N):
        contribs = sum(1 for zero in slice_zero if not zero[i])
        total += max(0, contribs - 1)
    return total


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

_MAGIC = b"LCCD"
_VERSION = 1
_ALGO_CODE = {"fp": 0, "fs": 1}
_ALGO_NAME = {v: k for k, v in _ALGO_CODE.items()}


def save_decomposition(d: LccDecomposition, path) -> None:
    """Write the versioned little-endian layout documented in the module docstring."""
    out = bytearray()
    out += _MAGIC
    out += struct.pack(
        "<HBBIIIHHId",
        _VERSION,
        _ALGO_CODE[d.algorithm],
        1 if d.converged else 0,
        d.original_shape[0],
        d.original_shape[1],
        d.slice_width,
        d.s_terms,
        0,
        d.clamped_exponents,
        d.achieved_sqnr,
    )
    out += struct.pack("<I", len(d.slices))
    for sl in d.slices:
        out += struct.pack("<III", sl.col_start, sl.col_stop, len(sl.factors))
        for F in sl.factors:
            out += struct.pack("<II", F.out_dim, F.in_dim)
            for row in F.rows:
                out += struct.pack("<H", len(row))
                for t in row:
                    out += struct.pack("<IhB", t.source, t.exponent, t.sign & 0xFF)
    with open(path, "wb") as fh:
        fh.write(bytes(out))


def load_decomposition(path) -> LccDecomposition:
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:4] != _MAGIC:
        raise ValueError("not a decomposition file (bad magic)")
    off = 4
    (version, algo, conv, N, K, width, s_terms, _res, clamped, sqnr) = struct.unpack_from(
        "<HBBIIIHHId", buf, off
    )
    if version != _VERSION:
        raise ValueError(f"unsupported decomposition version {version}")
    off += struct.calcsize("<HBBIIIHHId")
    (n_slices,) = struct.unpack_from("<I", buf, off)
    off += 4
    slices = []
    for _ in range(n_slices):
        c0, c1, n_factors = struct.unpack_from("<III", buf, off)
        off += 12
        factors = []
        for _ in range(n_factors):
            out_dim, in_dim = struct.unpack_from("<II", buf, off)
            off += 8
            rows = []
            for _ in range(out_dim):
                (n_terms,) = struct.unpack_from("<H", buf, off)
                off += 2
                row = []
                for _ in range(n_terms):
                    src, exp, sgn = struct.unpack_from("<IhB", buf, off)
                    off += 7
                    row.append(PowTerm(src, exp, 1 if sgn == 1 else -1))
                rows.append(row)
            factors.append(FactorMatrix(out_dim, in_dim, rows))
        slices.append(LccSlice(c0, c1, factors))
    if off != len(buf):
        raise ValueError("trailing bytes in decomposition file")
    return LccDecomposition(
        original_shape=(N, K),
        slice_width=width,
        algorithm=_ALGO_NAME[algo],
        s_terms=s_terms,
        slices=slices,
        achieved_sqnr=sqnr,
        converged=bool(conv),
        clamped_exponents=clamped,
    )
