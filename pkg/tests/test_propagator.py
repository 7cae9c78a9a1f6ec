import numpy as np
import pytest

import unimap as um
from unimap.errors import (
    InsufficientZeroRowsError,
    NonMonotoneError,
    NotNearIdentityError,
    StageError,
)

from conftest import unitarity_defect


def two_by_two(entries):
    return um.PropagatorMatrix(
        entries=np.asarray(entries, dtype=float),
        stage="truncated",
        basis=um.spatial_basis(2, (-1, 1)),
        map_name="synthetic",
    )


# ---------------------------------------------------------------------------
# truncated matrix construction

def test_identity_matrix_exact():
    b = um.spatial_basis(64, (-1, 1))
    V = um.compute_truncated_matrix(um.identity_map((-1, 1)), b)
    off = V.entries[~np.eye(64, dtype=bool)]
    assert np.all(off == 0.0)  # untouched entries stay exact zeros
    assert np.max(np.abs(np.diag(V.entries) - 1.0)) < 1e-13


def test_shift_map_is_permutation():
    b = um.spatial_basis(50, (-1, 1))
    k = 7
    m = um.linear_map(1.0, k * b.dx, domain=(-1, 1), name="shift")
    V = um.compute_truncated_matrix(m, b)
    expected = np.zeros((50, 50))
    for col in range(1, 50 - k + 1):
        expected[col + k - 1, col - 1] = 1.0
    assert np.max(np.abs(V.entries - expected)) < 1e-12


def test_sample_map_row_norms_and_band(sample_map, basis200, V_sample):
    norms = np.linalg.norm(V_sample.entries, axis=1)
    assert np.max(norms) <= 1 + 1e-8
    # banded support: each column's rows are contiguous and track the map graph
    cell_of, center_of = um.grid_coords(basis200)
    for col in (1, 57, 100, 157, 200):
        rows = np.nonzero(V_sample.entries[:, col - 1])[0] + 1
        assert len(rows) > 0
        assert np.all(np.diff(rows) == 1)
        image_cell = cell_of(um.eval_forward(sample_map, center_of(col)))
        assert rows.min() <= image_cell <= rows.max()


def test_sample_map_against_riemann_oracle(sample_map, basis200, V_sample):
    # brute-force midpoint rule, 10^4 points per cell, no edge inversion
    N, dx = basis200.N, basis200.dx
    P = 10000
    oracle = np.zeros((N, N))
    for col in range(1, N + 1):
        xs = -1.0 + (col - 1) * dx + (np.arange(P) + 0.5) * dx / P
        ys = np.asarray(sample_map.forward(xs))
        inside = (ys > -1.0) & (ys < 1.0)
        a = np.clip(np.ceil((ys[inside] + 1.0) / dx).astype(int), 1, N)
        w = np.sqrt(np.abs(np.asarray(sample_map.jacobian(xs[inside])))) / P
        np.add.at(oracle, (a - 1, col - 1), w)
    assert np.max(np.abs(V_sample.entries - oracle)) < 3e-4


def test_truncated_spatial_entries_real(V_sample):
    assert not np.iscomplexobj(V_sample.entries)


def test_workers_bitwise_identical(sample_map, basis200, V_sample):
    V4 = um.compute_truncated_matrix(sample_map, basis200, workers=4)
    assert np.array_equal(V4.entries, V_sample.entries)


def test_decreasing_map_antidiagonal():
    # X = -x swaps cells end-for-end; entries are exact by construction
    b = um.spatial_basis(16, (-1, 1))
    V = um.compute_truncated_matrix(um.linear_map(-1.0, 0.0, name="flip"), b)
    assert np.array_equal(V.entries != 0, np.fliplr(np.eye(16)) != 0)
    assert np.max(np.abs(V.entries - np.fliplr(np.eye(16)))) < 1e-13


def test_non_monotone_rejected():
    b = um.spatial_basis(32, (-1, 1))
    with pytest.raises(NonMonotoneError):
        um.compute_truncated_matrix(um.quadratic_map(1.0, 0.0, 0.0), b)


def test_quad_order_floor(sample_map, basis200):
    with pytest.raises(ValueError):
        um.compute_truncated_matrix(sample_map, basis200, quad_order=4)


def test_fourier_build(sample_map):
    fb = um.fourier_basis(64, (-1, 1))
    V = um.compute_truncated_matrix(sample_map, fb)
    assert np.iscomplexobj(V.entries)
    U = um.unitarize_polar_global(V)
    assert unitarity_defect(U) < 1e-10


# ---------------------------------------------------------------------------
# polar unitarization

def test_polar_identity():
    U = um.unitarize_polar_global(two_by_two(np.eye(2)))
    assert np.allclose(U.entries, np.eye(2), atol=1e-14)
    assert U.meta["polar_defect"] < 1e-14


def test_polar_positive_scaling():
    U = um.unitarize_polar_global(two_by_two(2 * np.eye(2)))
    assert np.allclose(U.entries, np.eye(2), atol=1e-14)
    assert np.allclose(U.meta["polar_p"], 2 * np.eye(2), atol=1e-14)


def test_polar_scaled_rotation():
    U = um.unitarize_polar_global(two_by_two([[0.0, -2.0], [2.0, 0.0]]))
    assert np.allclose(U.entries, [[0.0, -1.0], [1.0, 0.0]], atol=1e-14)
    assert np.allclose(U.meta["polar_p"], 2 * np.eye(2), atol=1e-14)


def test_polar_sample_map(U_global):
    assert unitarity_defect(U_global) <= 1e-10
    assert U_global.stage == "unitarized"
    assert U_global.method == "global_polar"


def test_polar_is_nearest_unitary():
    # against 20 random unitaries on 5 random matrices, Frobenius distance
    rng = np.random.Generator(np.random.Philox(key=23))
    basis8 = um.spatial_basis(8, (-1, 1))
    for _ in range(5):
        Vraw = rng.normal(size=(8, 8))
        V = um.PropagatorMatrix(entries=Vraw, stage="truncated",
                                basis=basis8, map_name="rand")
        U = um.unitarize_polar_global(V).entries
        d_polar = np.linalg.norm(U - Vraw)
        for _ in range(20):
            Q, _ = np.linalg.qr(rng.normal(size=(8, 8)))
            assert d_polar <= np.linalg.norm(Q - Vraw) + 1e-12


def test_polar_rank_warning():
    V = two_by_two([[1.0, 0.0], [0.0, 0.0]])
    U = um.unitarize_polar_global(V)
    assert U.meta["rank_warning"]
    assert unitarity_defect(U) < 1e-14


# ---------------------------------------------------------------------------
# generator unitarization

def test_generator_identity():
    U = um.unitarize_generator(two_by_two(np.eye(2)))
    assert np.allclose(U.entries, np.eye(2), atol=1e-14)


def test_generator_small_rotation():
    theta = 0.1
    U = um.unitarize_generator(two_by_two([[1.0, -theta], [theta, 1.0]]))
    expected = [[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]]
    assert np.allclose(U.entries, expected, atol=1e-12)


def test_generator_near_identity_guard(V_sample):
    with pytest.raises(NotNearIdentityError):
        um.unitarize_generator(V_sample)
    U = um.unitarize_generator(V_sample, require_near_identity=False)
    assert unitarity_defect(U) <= 1e-10


def test_generator_unitary_for_any_input():
    rng = np.random.Generator(np.random.Philox(key=31))
    basis8 = um.spatial_basis(8, (-1, 1))
    for _ in range(5):
        V = um.PropagatorMatrix(entries=rng.normal(size=(8, 8)), stage="truncated",
                                basis=basis8, map_name="rand")
        U = um.unitarize_generator(V, require_near_identity=False)
        assert unitarity_defect(U) < 1e-12
        H = U.meta["generator"]
        assert np.array_equal(H, H.conj().T)  # Hermitian by construction


# ---------------------------------------------------------------------------
# filtering and block structure

def test_filter_zero_threshold(V_sample):
    Vf = um.filter_threshold(V_sample, 0.0)
    assert np.array_equal(Vf.entries, V_sample.entries)
    assert Vf.stage == "filtered"
    assert Vf.epsilon == 0.0


def test_filter_everything(V_sample, basis200):
    eps = float(np.abs(V_sample.entries).max()) * 1.01
    Vf = um.filter_threshold(V_sample, eps)
    assert np.all(Vf.entries == 0.0)
    part = um.detect_blocks(Vf)
    assert len(part.zero_rows) == basis200.N
    assert all(len(b.rows) == 0 and len(b.cols) == 1 for b in part.blocks)


def test_filter_respects_threshold(Vf_sample):
    nz = Vf_sample.entries[Vf_sample.entries != 0]
    assert np.all(np.abs(nz) >= 0.1)


def test_filter_creates_blocks(V_sample, Vf_sample, part_sample):
    assert (Vf_sample.entries != 0).sum() < (V_sample.entries != 0).sum()
    assert len(part_sample.blocks) > 1
    spans = [max(b.cols) - min(b.cols) + 1 for b in part_sample.blocks]
    assert max(spans) < V_sample.N  # no block spans the whole index range


def test_detect_blocks_requires_filtered(V_sample):
    with pytest.raises(StageError):
        um.detect_blocks(V_sample)


def test_detect_blocks_block_diagonal():
    e = np.zeros((6, 6))
    e[:3, :3] = np.arange(1, 10).reshape(3, 3)
    e[3:, 3:] = np.arange(1, 10).reshape(3, 3)
    Vf = um.PropagatorMatrix(entries=e, stage="filtered", epsilon=0.0,
                             basis=um.spatial_basis(6, (-1, 1)), map_name="synth")
    part = um.detect_blocks(Vf)
    assert len(part.blocks) == 2
    assert part.blocks[0].rows == (1, 2, 3) and part.blocks[0].cols == (1, 2, 3)
    assert part.blocks[1].rows == (4, 5, 6) and part.blocks[1].cols == (4, 5, 6)
    assert part.zero_rows == ()


def test_detect_blocks_permutation():
    n = 8
    perm = np.roll(np.eye(n), 3, axis=0)
    Vf = um.PropagatorMatrix(entries=perm, stage="filtered", epsilon=0.0,
                             basis=um.spatial_basis(n, (-1, 1)), map_name="perm")
    part = um.detect_blocks(Vf)
    assert len(part.blocks) == n
    assert all(len(b.rows) == 1 and len(b.cols) == 1 for b in part.blocks)


def test_block_partition_invariants(Vf_sample, part_sample):
    cols = sorted(c for b in part_sample.blocks for c in b.cols)
    assert cols == list(range(1, Vf_sample.N + 1))
    rows = [r for b in part_sample.blocks for r in b.rows]
    assert len(rows) == len(set(rows))
    assert set(rows).isdisjoint(part_sample.zero_rows)
    # no nonzero entry couples two different blocks
    owner = {}
    for i, b in enumerate(part_sample.blocks):
        for c in b.cols:
            owner[c] = i
    for r, c in zip(*np.nonzero(Vf_sample.entries)):
        blk = part_sample.blocks[owner[c + 1]]
        assert r + 1 in blk.rows


def test_aligned_linear_map_blocks():
    # slope 2/3 on a grid starting at 0 maps every 3rd edge onto an edge
    b = um.spatial_basis(60, (0.0, 1.0))
    m = um.linear_map(2.0 / 3.0, 0.0, domain=(0.0, 1.0), name="twothirds")
    V = um.compute_truncated_matrix(m, b)
    part = um.detect_blocks(um.filter_threshold(V, 0.0))
    assert len(part.blocks) == 20
    assert all((len(blk.rows), len(blk.cols)) == (2, 3) for blk in part.blocks)


# ---------------------------------------------------------------------------
# block unitarization

def test_unitarize_blocks_identity():
    b = um.spatial_basis(16, (-1, 1))
    V = um.compute_truncated_matrix(um.identity_map((-1, 1)), b)
    Vf = um.filter_threshold(V, 1e-6)
    U = um.unitarize_blocks(Vf, um.detect_blocks(Vf))
    assert np.allclose(U.entries, np.eye(16), atol=1e-13)


def test_unitarize_blocks_equals_global_on_block_diagonal():
    rng = np.random.Generator(np.random.Philox(key=41))
    e = np.zeros((6, 6))
    e[:3, :3] = rng.normal(size=(3, 3))
    e[3:, 3:] = rng.normal(size=(3, 3))
    basis6 = um.spatial_basis(6, (-1, 1))
    Vf = um.PropagatorMatrix(entries=e, stage="filtered", epsilon=0.0,
                             basis=basis6, map_name="synth")
    U = um.unitarize_blocks(Vf, um.detect_blocks(Vf))
    V = um.PropagatorMatrix(entries=e, stage="truncated", basis=basis6, map_name="synth")
    Ug = um.unitarize_polar_global(V)
    assert np.allclose(U.entries, Ug.entries, atol=1e-12)


def test_unitarize_blocks_sample_map(U_block):
    assert unitarity_defect(U_block) <= 1e-10
    mask = np.abs(U_block.entries) > 1e-12
    assert mask.sum(axis=1).max() <= 40
    assert mask.sum(axis=0).max() <= 40
    # fill-in stays inside the bounding boxes of the squared groups
    allowed = np.zeros_like(mask)
    for rows, donated, cols in U_block.meta["groups"]:
        ridx = np.array(sorted(rows + donated)) - 1
        cidx = np.array(cols) - 1
        allowed[np.ix_(ridx, cidx)] = True
    assert not np.any(mask & ~allowed)


def test_unitarize_blocks_oscillating_fill(U_block):
    # donated rows carry sign-alternating entries
    donated = sorted(r for _, d, _ in U_block.meta["groups"] for r in d)
    assert donated
    changes = 0
    for r in donated:
        row = U_block.entries[r - 1]
        nz = row[np.abs(row) > 1e-12]
        if len(nz) > 1:
            changes += int(np.any(np.diff(np.sign(nz.real)) != 0))
    assert changes > 0


def test_unitarize_blocks_tall_blocks_merge():
    # slope 3/2 produces 3x2 blocks plus fully-filtered columns and no zero rows
    b = um.spatial_basis(60, (0.0, 1.0))
    m = um.linear_map(1.5, 0.0, domain=(0.0, 1.0), name="threehalves")
    V = um.compute_truncated_matrix(m, b)
    Vf = um.filter_threshold(V, 0.0)
    part = um.detect_blocks(Vf)
    shapes = {(len(blk.rows), len(blk.cols)) for blk in part.blocks}
    assert (3, 2) in shapes and (0, 1) in shapes
    U = um.unitarize_blocks(Vf, part)
    assert unitarity_defect(U) <= 1e-10
    with pytest.raises(InsufficientZeroRowsError) as err:
        um.unitarize_blocks(Vf, part, merge_tall=False)
    assert err.value.deficit == 20


def test_block_vs_global_action_on_smooth_state(U_block, U_global, basis200):
    psi = um.init_state(um.default_init(basis200, 0.5), basis200)
    gap = np.linalg.norm((U_block.entries - U_global.entries) @ psi.amplitudes)
    assert gap <= 0.05


# ---------------------------------------------------------------------------
# boundary diagnostics, stats, dumps

def test_block_boundary_fraction_identity(basis200):
    m = um.identity_map((-1, 1))
    for edge_index in (0, 3, 57, 200):
        assert um.block_boundary_fraction(m, edge_index, basis200) == 0.0


def test_block_boundary_fraction_aligned():
    b = um.spatial_basis(60, (0.0, 1.0))
    m = um.linear_map(2.0 / 3.0, 0.0, domain=(0.0, 1.0))
    for h in range(0, 21):
        assert um.block_boundary_fraction(m, 3 * h, b) == 0.0
    assert um.block_boundary_fraction(m, 1, b) != 0.0


def test_block_boundary_fraction_sample(sample_map, basis200):
    z = um.block_boundary_fraction(sample_map, 57, basis200)
    assert 0.0 < z < 1.0


def test_sparsity_stats_identity():
    b = um.spatial_basis(32, (-1, 1))
    V = um.compute_truncated_matrix(um.identity_map((-1, 1)), b)
    stats = um.sparsity_stats(V)
    assert stats.nnz == 32
    assert stats.max_row_nnz == 1
    assert stats.max_col_nnz == 1


def test_sparsity_stats_dense_unitary():
    rng = np.random.Generator(np.random.Philox(key=53))
    Q, _ = np.linalg.qr(rng.normal(size=(16, 16)))
    M = um.PropagatorMatrix(entries=Q, stage="unitarized", method="global_polar",
                            basis=um.spatial_basis(16, (-1, 1)), map_name="rand")
    assert um.sparsity_stats(M).nnz == 16 * 16


def test_sparsity_sweep_trend(V_sample):
    medians = []
    for eps in (0.05, 0.1, 0.2):
        Vf = um.filter_threshold(V_sample, eps)
        part = um.detect_blocks(Vf)
        stats = um.sparsity_stats(Vf, partition=part)
        assert stats.block_sizes == tuple((len(b.rows), len(b.cols))
                                          for b in part.blocks)
        assert stats.epsilon == eps
        assert stats.predicted_block_width == pytest.approx(1.0 / eps)
        medians.append(np.median([len(b.cols) for b in part.blocks]))
    assert medians[0] >= medians[1] >= medians[2]


def test_inverse_map_duality():
    # matrix of the inverse map is the transpose (conjugate) of the map's
    b = um.spatial_basis(40, (-1, 1))
    V_f = um.compute_truncated_matrix(um.linear_map(0.5, 0.1, name="half"), b)
    V_i = um.compute_truncated_matrix(um.linear_map(2.0, -0.2, name="double"), b)
    window = slice(5, 35)
    diff = V_i.entries.T[window, window] - V_f.entries[window, window]
    assert np.max(np.abs(diff)) < 1e-6


def test_dump_roundtrip(tmp_path, Vf_sample):
    path = tmp_path / "m.txt"
    um.write_matrix_dump(Vf_sample, path)
    entries, fields = um.read_matrix_dump(path)
    assert fields["N"] == "200"
    assert fields["stage"] == "filtered(0.1)"
    assert fields["map"] == "demo"
    assert fields["basis"] == "spatial"
    assert np.allclose(entries.real, Vf_sample.entries, atol=1e-15)
    lines = path.read_text().splitlines()[1:]
    keys = [tuple(map(int, ln.split()[:2])) for ln in lines]
    assert keys == sorted(keys)
    assert len(lines) == int((Vf_sample.entries != 0).sum())


def test_matrix_immutable(V_sample):
    with pytest.raises(ValueError):
        V_sample.entries[0, 0] = 5.0
