"""Transfer matrices of 1-D maps and their unitarizations.

The truncated matrix V has entries

    V[a, b] = integral over the domain of sqrt(|X'(x)|) e_a*(X(x)) e_b(x) dx

restricted to basis indices 1..N; image points falling outside the domain are
dropped. V is generally not unitary. Three routes produce a unitary
propagator from it: a global polar decomposition, a per-block polar
decomposition after threshold filtering, and the leading-order Hermitian
generator for near-identity matrices.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import basis as basis_mod
from . import maps as maps_mod
from .basis import SPATIAL, BasisSpec
from .errors import (
    DomainError,
    InsufficientZeroRowsError,
    KindError,
    NotNearIdentityError,
    QuadratureError,
    StageError,
)
from .maps import MapSpec

TRUNCATED = "truncated"
FILTERED = "filtered"
UNITARIZED = "unitarized"

_MAX_SUBINTERVALS = 2**16
_RANK_TOL = 1e-8


@dataclass(frozen=True)
class PropagatorMatrix:
    """An N x N matrix tagged with its pipeline stage and provenance."""

    entries: np.ndarray
    stage: str
    basis: BasisSpec
    map_name: str
    epsilon: Optional[float] = None
    method: Optional[str] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        e = np.array(self.entries)  # private copy, frozen below
        if e.ndim != 2 or e.shape[0] != e.shape[1] or e.shape[0] != self.basis.N:
            raise ValueError(f"entries must be {self.basis.N} x {self.basis.N}")
        e.setflags(write=False)
        object.__setattr__(self, "entries", e)
        if self.stage not in (TRUNCATED, FILTERED, UNITARIZED):
            raise StageError(f"unknown stage {self.stage!r}")

    @property
    def N(self) -> int:
        return self.basis.N

    def stage_label(self) -> str:
        if self.stage == FILTERED:
            return f"filtered({self.epsilon:g})"
        if self.stage == UNITARIZED:
            return f"unitarized({self.method})"
        return self.stage


@dataclass(frozen=True)
class Block:
    """One orthogonal block: its nonzero rows and its columns (1-based)."""

    rows: tuple[int, ...]
    cols: tuple[int, ...]


@dataclass(frozen=True)
class BlockPartition:
    blocks: tuple[Block, ...]
    zero_rows: tuple[int, ...]


@dataclass(frozen=True)
class SparsityStats:
    nnz: int
    max_row_nnz: int
    max_col_nnz: int
    block_sizes: tuple[tuple[int, int], ...]
    epsilon: Optional[float]
    predicted_block_width: Optional[float]  # O(1/eps) heuristic, informational
    predicted_block_count: Optional[float]  # O(eps N) heuristic, informational


# ---------------------------------------------------------------------------
# construction

def compute_truncated_matrix(map_spec: MapSpec, basis: BasisSpec,
                             quad_order: int = 16, workers: int = 1) -> PropagatorMatrix:
    """Build the truncated transfer matrix of a monotone map.

    Spatial basis: each column b is integrated over cell b, split at the
    preimages of every cell edge the image crosses, with Gauss-Legendre of
    order `quad_order` on each smooth piece. Entries that receive no
    contribution stay exactly zero. Fourier basis: one composite
    Gauss-Legendre rule fine enough for the highest mode (including the
    local frequency boost by |X'|) is shared by all entries.

    Columns are independent, so `workers` may split them across threads;
    the result is bitwise identical for any worker count.
    """
    if quad_order < 8:
        raise ValueError("quad_order must be at least 8")
    maps_mod.monotone_sign(map_spec)  # rejects maps whose Jacobian changes sign
    if basis.kind == SPATIAL:
        entries = _build_spatial(map_spec, basis, quad_order, workers)
    else:
        entries = _build_fourier(map_spec, basis, quad_order)
    return PropagatorMatrix(entries=entries, stage=TRUNCATED, basis=basis,
                            map_name=map_spec.name,
                            meta={"quad_order": quad_order})


def _spatial_column(map_spec: MapSpec, basis: BasisSpec, b: int,
                    gl_u: np.ndarray, gl_w: np.ndarray) -> list[tuple[int, float]]:
    lo_d, hi_d = basis.domain
    dx = basis.dx
    N = basis.N
    cell_edges = basis_mod.edges(basis)
    lo, hi = cell_edges[b - 1], cell_edges[b]
    ya, yb = float(map_spec.forward(lo)), float(map_spec.forward(hi))
    ylo, yhi = (ya, yb) if ya <= yb else (yb, ya)

    # preimages of the cell edges strictly inside the image of this cell
    j_first = int(np.floor((ylo - lo_d) / dx)) + 1
    j_last = int(np.ceil((yhi - lo_d) / dx)) - 1
    targets = [lo_d + j * dx for j in range(j_first, j_last + 1)
               if ylo < lo_d + j * dx < yhi]
    if len(targets) + 1 > _MAX_SUBINTERVALS:
        raise QuadratureError(
            f"column {b}: {len(targets) + 1} sub-intervals exceed {_MAX_SUBINTERVALS}"
        )
    if targets:
        if map_spec.inverse is not None:
            pre = np.asarray(map_spec.inverse(np.asarray(targets)), dtype=float)
        else:
            pre = maps_mod._invert_batch(map_spec, np.asarray(targets), tol=1e-13)
        # keep strictly interior split points; edge-grazing images contribute
        # slivers below 1e-9 dx which are dropped to keep the zero pattern exact
        pre = pre[(pre > lo + 1e-9 * dx) & (pre < hi - 1e-9 * dx)]
        pts = np.concatenate(([lo], np.sort(pre), [hi]))
    else:
        pts = np.array([lo, hi])

    out: list[tuple[int, float]] = []
    acc: dict[int, float] = {}
    for p, q in zip(pts[:-1], pts[1:]):
        if q - p < 1e-12 * dx:
            continue
        mid = 0.5 * (p + q)
        ymid = float(map_spec.forward(mid))
        if not (lo_d < ymid < hi_d):
            continue  # truncated: image outside the represented interval
        a = min(max(int(np.ceil((ymid - lo_d) / dx)), 1), N)
        half = 0.5 * (q - p)
        nodes = mid + half * gl_u
        integral = half * float(
            np.dot(gl_w, np.sqrt(np.abs(np.asarray(map_spec.jacobian(nodes), dtype=float))))
        )
        acc[a] = acc.get(a, 0.0) + integral / dx
    out.extend(sorted(acc.items()))
    return out


def _build_spatial(map_spec: MapSpec, basis: BasisSpec,
                   quad_order: int, workers: int) -> np.ndarray:
    gl_u, gl_w = np.polynomial.legendre.leggauss(quad_order)
    N = basis.N
    cols = range(1, N + 1)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(
                lambda b: _spatial_column(map_spec, basis, b, gl_u, gl_w), cols))
    else:
        results = [_spatial_column(map_spec, basis, b, gl_u, gl_w) for b in cols]
    V = np.zeros((N, N))
    for b, col in zip(cols, results):
        for a, v in col:
            V[a - 1, b - 1] = v
    return V


def _build_fourier(map_spec: MapSpec, basis: BasisSpec, quad_order: int) -> np.ndarray:
    N = basis.N
    lo, hi = basis.domain
    xs_scan = np.linspace(lo, hi, 1001)
    jmax = float(np.max(np.abs(np.asarray(map_spec.jacobian(xs_scan), dtype=float))))
    # highest mode has wavelength 4/N; the image-side phase runs |X'| faster
    panels = int(np.ceil((hi - lo) / (4.0 / N) * max(1.0, jmax)))
    gl_u, gl_w = np.polynomial.legendre.leggauss(quad_order)
    panel_edges = np.linspace(lo, hi, panels + 1)
    half = 0.5 * np.diff(panel_edges)
    mid = 0.5 * (panel_edges[:-1] + panel_edges[1:])
    xs = (mid[:, None] + half[:, None] * gl_u[None, :]).ravel()
    ws = (half[:, None] * gl_w[None, :]).ravel()

    m = np.arange(1, N + 1) - N / 2.0
    img = np.asarray(map_spec.forward(xs), dtype=float)
    weight = ws * np.sqrt(np.abs(np.asarray(map_spec.jacobian(xs), dtype=float)))
    Ea = np.exp(-1j * np.pi * np.outer(m, img)) / np.sqrt(2.0)
    Eb = np.exp(1j * np.pi * np.outer(xs, m)) / np.sqrt(2.0)
    return (Ea * weight[None, :]) @ Eb


# ---------------------------------------------------------------------------
# unitarization

def _polar_unitary(M: np.ndarray) -> tuple[np.ndarray, np.ndarray, float]:
    """Return (U, P, s_min) of the polar decomposition M = U P via SVD."""
    W, s, Qh = np.linalg.svd(M)
    U = W @ Qh
    P = Qh.conj().T @ (s[:, None] * Qh)
    return U, P, float(s.min()) if len(s) else 0.0


def unitarize_polar_global(V: PropagatorMatrix) -> PropagatorMatrix:
    """Replace V by the unitary factor of its polar decomposition V = U P.

    P = (V^dag V)^(1/2) is kept in the metadata together with the deviation
    max|P - I|, a direct measure of how much truncation distorted the map.
    A rank warning is flagged when the smallest singular value is below 1e-8
    (U on the null directions then depends on the SVD convention only).
    """
    U, P, s_min = _polar_unitary(V.entries)
    meta = {
        "polar_p": P,
        "polar_defect": float(np.max(np.abs(P - np.eye(V.N)))),
        "min_singular_value": s_min,
        "rank_warning": s_min < _RANK_TOL,
    }
    return PropagatorMatrix(entries=U, stage=UNITARIZED, basis=V.basis,
                            map_name=V.map_name, epsilon=V.epsilon,
                            method="global_polar", meta=meta)


def unitarize_generator(V: PropagatorMatrix, require_near_identity: bool = True) -> PropagatorMatrix:
    """Unitarize through the leading-order Hermitian generator.

    Forms H = (i/2)(V - V^dag), Hermitian by construction, and returns
    U = exp(-i H) through the eigendecomposition of H. The construction is
    a controlled approximation only when V is near the identity, so by
    default max|V - I| >= 0.5 raises NotNearIdentityError; pass
    require_near_identity=False to force the (still exactly unitary) output
    for an arbitrary matrix.
    """
    dev = float(np.max(np.abs(V.entries - np.eye(V.N))))
    if require_near_identity and dev >= 0.5:
        raise NotNearIdentityError(
            f"max|V - I| = {dev:.3g} >= 0.5; generator route needs a near-identity matrix"
        )
    H = 0.5j * (V.entries - V.entries.conj().T)
    w, S = np.linalg.eigh(H)
    U = (S * np.exp(-1j * w)[None, :]) @ S.conj().T
    if not np.iscomplexobj(V.entries) and np.max(np.abs(U.imag)) < 1e-12:
        U = U.real  # antisymmetric real generator exponentiates to a real rotation
    meta = {"generator": H,
            "near_identity_deviation": dev,
            "generator_norm": float(np.max(np.abs(H)))}
    return PropagatorMatrix(entries=U, stage=UNITARIZED, basis=V.basis,
                            map_name=V.map_name, epsilon=V.epsilon,
                            method="generator", meta=meta)


def filter_threshold(V: PropagatorMatrix, epsilon: float) -> PropagatorMatrix:
    """Zero out every entry with modulus below epsilon."""
    if epsilon < 0:
        raise ValueError("epsilon must be nonnegative")
    e = np.where(np.abs(V.entries) < epsilon, 0.0, V.entries)
    return PropagatorMatrix(entries=e, stage=FILTERED, basis=V.basis,
                            map_name=V.map_name, epsilon=epsilon,
                            meta=dict(V.meta))


def detect_blocks(Vf: PropagatorMatrix) -> BlockPartition:
    """Partition a filtered matrix into orthogonal blocks.

    Rows and columns are nodes of a bipartite graph with an edge per nonzero
    entry; blocks are its connected components (union-find). Columns with no
    nonzero entry become 1-column blocks of their own, rows with no nonzero
    entry are returned as the zero-row pool.
    """
    if Vf.stage != FILTERED:
        raise StageError("detect_blocks expects a filtered matrix")
    N = Vf.N
    parent = list(range(2 * N))

    def find(i: int) -> int:
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    rows, cols = np.nonzero(Vf.entries)
    for r, c in zip(rows.tolist(), cols.tolist()):
        ri, rj = find(r), find(N + c)
        if ri != rj:
            parent[rj] = ri

    groups: dict[int, tuple[list[int], list[int]]] = {}
    for i in range(2 * N):
        root = find(i)
        rs, cs = groups.setdefault(root, ([], []))
        (rs if i < N else cs).append(i % N + 1 if i >= N else i + 1)
    blocks = []
    zero_rows: list[int] = []
    for rs, cs in groups.values():
        if cs:
            blocks.append(Block(rows=tuple(sorted(rs)), cols=tuple(sorted(cs))))
        else:
            zero_rows.extend(rs)
    blocks.sort(key=lambda blk: blk.cols[0])
    return BlockPartition(blocks=tuple(blocks), zero_rows=tuple(sorted(zero_rows)))


def _interval_distance(i: int, lo: int, hi: int) -> int:
    return max(lo - i, i - hi, 0)


def unitarize_blocks(Vf: PropagatorMatrix, partition: BlockPartition,
                     merge_tall: bool = True) -> PropagatorMatrix:
    """Unitarize each orthogonal block independently.

    Every block must end up square before its polar decomposition. A block
    with more columns than rows borrows rows from the zero-row pool,
    nearest to its own row range first, and the borrowed rows receive the
    extra unitary content. A block with more rows than columns cannot be
    squared that way; with merge_tall=True it is first combined with the
    nearest block (by column distance) that has spare columns, which always
    succeeds because the pool globally balances the surplus. With
    merge_tall=False such a block raises InsufficientZeroRowsError.

    The sparsity of the result is bounded by the largest squared group.
    """
    if Vf.stage != FILTERED:
        raise StageError("unitarize_blocks expects a filtered matrix")
    N = Vf.N
    col_union = sorted(c for blk in partition.blocks for c in blk.cols)
    if col_union != list(range(1, N + 1)):
        raise ValueError("partition columns do not cover 1..N exactly once")

    groups = [(list(blk.rows), list(blk.cols)) for blk in partition.blocks]
    tall_deficit = sum(max(0, len(r) - len(c)) for r, c in groups)
    if tall_deficit and not merge_tall:
        raise InsufficientZeroRowsError(
            f"{tall_deficit} block row(s) in excess of columns; zero rows cannot "
            f"square these blocks (epsilon too small or domain too tight)",
            deficit=tall_deficit,
        )
    while True:
        tall_idx = next((i for i, (r, c) in enumerate(groups) if len(r) > len(c)), None)
        if tall_idx is None:
            break
        g = groups[tall_idx]
        wide = [(max(min(h[1]) - max(g[1]), min(g[1]) - max(h[1]), 0), min(h[1]), j)
                for j, h in enumerate(groups)
                if j != tall_idx and len(h[1]) > len(h[0])]
        if not wide:
            raise InsufficientZeroRowsError(
                "no block with spare columns available to absorb a tall block",
                deficit=tall_deficit,
            )
        _, _, j = min(wide)
        other = groups[j]
        merged = (sorted(g[0] + other[0]), sorted(g[1] + other[1]))
        groups = [h for k, h in enumerate(groups) if k not in (tall_idx, j)]
        groups.append(merged)
        groups.sort(key=lambda rc: min(rc[1]))

    pool = sorted(partition.zero_rows)
    U = np.zeros_like(Vf.entries)
    effective: list[tuple[tuple[int, ...], tuple[int, ...], tuple[int, ...]]] = []
    rank_warning = False
    for rows_, cols_ in groups:
        need = len(cols_) - len(rows_)
        if need > len(pool):
            raise InsufficientZeroRowsError(
                f"need {need} zero rows for a {len(rows_)}x{len(cols_)} block "
                f"but only {len(pool)} remain",
                deficit=need - len(pool),
            )
        anchor_lo = min(rows_) if rows_ else min(cols_)
        anchor_hi = max(rows_) if rows_ else max(cols_)
        donated: list[int] = []
        for _ in range(need):
            z = min(pool, key=lambda z: (_interval_distance(z, anchor_lo, anchor_hi), z))
            pool.remove(z)
            donated.append(z)
        full_rows = sorted(rows_) + sorted(donated)
        ridx = np.array(full_rows, dtype=int) - 1
        cidx = np.array(sorted(cols_), dtype=int) - 1
        Usub, _, s_min = _polar_unitary(Vf.entries[np.ix_(ridx, cidx)])
        rank_warning = rank_warning or s_min < _RANK_TOL
        U[np.ix_(ridx, cidx)] = Usub
        effective.append((tuple(sorted(rows_)), tuple(donated), tuple(sorted(cols_))))

    meta = {
        "groups": tuple(effective),
        "max_block_dim": max((len(g[2]) for g in effective), default=0),
        "rank_warning": rank_warning,
    }
    return PropagatorMatrix(entries=U, stage=UNITARIZED, basis=Vf.basis,
                            map_name=Vf.map_name, epsilon=Vf.epsilon,
                            method="block_polar", meta=meta)


# ---------------------------------------------------------------------------
# structure diagnostics

def block_boundary_fraction(map_spec: MapSpec, b: int, basis: BasisSpec) -> float:
    """Fractional misalignment of the image of cell edge b, in cell units.

    Zero exactly when X maps the edge x_min + b dx onto another cell edge,
    which is where orthogonal blocks can start. Values within 1e-9 of an
    integer are snapped to zero so grid-aligned maps report exact hits.
    """
    if basis.kind != SPATIAL:
        raise KindError("block boundaries are defined on the spatial grid")
    lo, hi = basis.domain
    edge = lo + b * basis.dx
    if not (lo <= edge <= hi):
        raise DomainError(f"edge {edge!r} outside basis domain {basis.domain}")
    v = (maps_mod.eval_forward(map_spec, edge) - lo) / basis.dx
    f = v - np.floor(v)
    if min(f, 1.0 - f) < 1e-9 * max(1.0, abs(v)):
        return 0.0
    return float(f)


def sparsity_stats(M: PropagatorMatrix, zero_tol: float = 1e-12,
                   partition: Optional[BlockPartition] = None) -> SparsityStats:
    """Count nonzero structure; block sizes are filled in when known."""
    mask = np.abs(M.entries) > zero_tol
    nnz = int(mask.sum())
    max_row = int(mask.sum(axis=1).max()) if nnz else 0
    max_col = int(mask.sum(axis=0).max()) if nnz else 0
    sizes: tuple[tuple[int, int], ...] = ()
    if partition is not None:
        sizes = tuple((len(b.rows), len(b.cols)) for b in partition.blocks)
    eps = M.epsilon
    return SparsityStats(
        nnz=nnz, max_row_nnz=max_row, max_col_nnz=max_col,
        block_sizes=sizes, epsilon=eps,
        predicted_block_width=(1.0 / eps) if eps else None,
        predicted_block_count=(eps * M.N) if eps else None,
    )


# ---------------------------------------------------------------------------
# dump format

def write_matrix_dump(M: PropagatorMatrix, path) -> None:
    """Write the text dump: header plus one `row col re im` line per nonzero.

    Indices are 1-based, values carry 17 significant digits, lines are sorted
    by (row, col). Entries that are exactly zero are omitted; readers must
    fill them in from N in the header.
    """
    header = (f"# unimap-matrix v1 N={M.N} stage={M.stage_label()} "
              f"map={M.map_name} basis={M.basis.kind}\n")
    e = M.entries
    rows, cols = np.nonzero(e)
    order = np.lexsort((cols, rows))
    with open(path, "w") as f:
        f.write(header)
        for k in order:
            r, c = int(rows[k]) + 1, int(cols[k]) + 1
            v = complex(e[rows[k], cols[k]])
            f.write(f"{r} {c} {v.real:.17g} {v.imag:.17g}\n")


def read_matrix_dump(path) -> tuple[np.ndarray, dict]:
    """Read a matrix dump back into a dense complex array plus its header fields."""
    with open(path) as f:
        header = f.readline().strip()
        if not header.startswith("# unimap-matrix v1 "):
            raise ValueError(f"{path}: not a unimap matrix dump")
        fields = dict(tok.split("=", 1) for tok in header.split()[3:])
        N = int(fields["N"])
        out = np.zeros((N, N), dtype=complex)
        for line in f:
            r, c, re, im = line.split()
            out[int(r) - 1, int(c) - 1] = float(re) + 1j * float(im)
    return out, fields
