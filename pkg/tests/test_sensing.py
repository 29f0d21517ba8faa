import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import linprog

from radar_cs.allocator import uniform_plan
from radar_cs.geometry import BlockIndex, partition
from radar_cs.sensing import (ConvergenceError, MatrixKind, SensingError, SparsityBasis,
                              basis_pursuit, block_seed, build_matrix, compress_block,
                              compress_frame, dct2, idct2, measurement_count, quantize_frame,
                              read_measurements, reconstruct_block, reconstruct_frame,
                              write_measurements)

from .conftest import make_frame


# -- frozen values

def test_block_seed_frozen():
    assert block_seed(0, 1, BlockIndex(0, 0)) == 5836529245451711556
    assert block_seed(7, 21, BlockIndex(3, 5)) == 6732641868380910309


def test_bpd_rows_frozen():
    np.testing.assert_array_equal(build_matrix("bpd", 4, 10, 1).columns, [8, 4, 7, 0])


@pytest.mark.parametrize("rate,n,kind,m", [
    (0.2, 960, "bpd", 192), (0.0, 960, "bpd", 0), (1e-6, 960, "bpd", 1),
    (0.55, 960, "bpd", 528), (0.3, 10, "bpbd", 2), (0.3, 12, "bpbd", 4), (0.45, 12, "bpbd", 4),
    (1.0, 960, "gaussian", 960),
])
def test_measurement_count(rate, n, kind, m):
    assert measurement_count(rate, n, kind) == m


def test_measurement_count_rejects_bad_rate():
    with pytest.raises(SensingError):
        measurement_count(1.5, 10)


# -- matrices

@pytest.mark.parametrize("kind,m,n", [("bpd", 7, 20), ("bpbd", 5, 20), ("gaussian", 6, 20)])
def test_apply_adjoint_match_dense(kind, m, n):
    A = build_matrix(kind, m, n, 11)
    D = A.to_dense()
    x = np.random.default_rng(0).normal(size=n)
    y = np.random.default_rng(1).normal(size=m)
    np.testing.assert_allclose(A.apply(x), D @ x)
    np.testing.assert_allclose(A.adjoint(y), D.T @ y)


def test_binary_structure():
    bpd = build_matrix("bpd", 8, 32, 3).to_dense()
    assert (bpd.sum(axis=1) == 1).all() and bpd.sum(axis=0).max() == 1
    bpbd = build_matrix("bpbd", 8, 32, 3).to_dense()
    assert (bpbd.sum(axis=1) == 4).all() and (bpbd.sum(axis=0) == 1).all()
    with pytest.raises(SensingError, match="divide"):
        build_matrix("bpbd", 7, 32, 3)


def test_gaussian_variance():
    A = build_matrix("gaussian", 200, 300, 0).dense
    assert A.var() == pytest.approx(1 / 200, rel=0.05)


def test_matrix_determinism():
    a, b = build_matrix("bpbd", 4, 16, 9), build_matrix("bpbd", 4, 16, 9)
    np.testing.assert_array_equal(a.groups, b.groups)


# -- transform

@settings(max_examples=25, deadline=None)
@given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 999))
def test_dct_orthonormal(p, q, seed):
    x = np.random.default_rng(seed).normal(size=(p, q))
    c = dct2(x)
    assert np.sum(c * c) == pytest.approx(np.sum(x * x))
    np.testing.assert_allclose(idct2(c), x, atol=1e-12)


def test_basis_shape_check():
    with pytest.raises(SensingError):
        SparsityBasis(4, 4).forward(np.zeros((4, 5)))


# -- basis pursuit against an LP oracle

def _lp_oracle(A, p, q):
    """min ||c||_1 s.t. A idct2(c) = y, as an LP in (c+, c-)."""
    n = p * q
    Psi = np.stack([idct2(np.eye(n)[k].reshape(p, q)).ravel() for k in range(n)], axis=1)
    M = A.to_dense() @ Psi
    return M, n


@pytest.mark.parametrize("kind,seed", [("bpd", 0), ("bpd", 1), ("bpbd", 2), ("gaussian", 3),
                                        ("gaussian", 4), ("bpd", 5)])
def test_basis_pursuit_matches_lp(kind, seed):
    p, q, m = 3, 4, 6
    rng = np.random.default_rng(seed)
    x_true = rng.uniform(0, 10, size=(p, q))
    A = build_matrix(kind, m, p * q, seed)
    y = A.apply(x_true.ravel())
    M, n = _lp_oracle(A, p, q)
    res = linprog(np.ones(2 * n), A_eq=np.hstack([M, -M]), b_eq=y, bounds=(0, None),
                  method="highs")
    assert res.status == 0
    blocks, info = basis_pursuit([A], [y], (p, q), tol=1e-7, max_iter=200000)
    got = np.abs(dct2(blocks[0])).sum()
    assert info.all_converged
    assert got == pytest.approx(res.fun, rel=1e-5, abs=1e-7)
    np.testing.assert_allclose(A.apply(blocks[0].ravel()), y, atol=1e-9)


def test_exact_recovery_sparse():
    p, q = 16, 16
    rng = np.random.default_rng(7)
    c = np.zeros(p * q)
    c[rng.choice(p * q, 5, replace=False)] = rng.normal(0, 20, 5)
    x = idct2(c.reshape(p, q))
    A = build_matrix("bpd", 64, p * q, 7)
    blocks, info = basis_pursuit([A], [A.apply(x.ravel())], (p, q), tol=1e-9)
    assert np.abs(blocks[0] - x).max() < 1e-4


def test_zero_measurements_give_zero_block():
    blocks, info = basis_pursuit([None], [np.zeros(0)], (2, 3))
    np.testing.assert_array_equal(blocks, 0)
    assert info.all_converged


def test_strict_raises_on_iteration_cap():
    rng = np.random.default_rng(0)
    A = build_matrix("bpd", 40, 160, 0)
    y = A.apply(rng.uniform(0, 255, 160))
    with pytest.raises(ConvergenceError) as err:
        basis_pursuit([A], [y], (10, 16), tol=1e-12, max_iter=20)
    assert err.value.blocks.tolist() == [0]
    _, info = basis_pursuit([A], [y], (10, 16), tol=1e-12, max_iter=20, strict=False)
    assert not info.all_converged


def test_mixed_batch_rejected():
    a, b = build_matrix("bpd", 2, 4, 0), build_matrix("gaussian", 2, 4, 0)
    with pytest.raises(SensingError):
        basis_pursuit([a, b], [np.zeros(2), np.zeros(2)], (2, 2))


@settings(max_examples=15, deadline=None)
@given(st.sampled_from(["bpd", "bpbd", "gaussian"]), st.integers(0, 10_000),
       st.sampled_from([0.25, 0.5]))
def test_reconstruction_is_consistent(kind, seed, rate):
    """Whatever the convergence state, the estimate reproduces the measurements."""
    x = np.random.default_rng(seed).uniform(0, 255, size=(4, 6))
    m = measurement_count(rate, 24, kind)
    A = build_matrix(kind, m, 24, seed)
    y = A.apply(x.ravel())
    blocks, _ = basis_pursuit([A], [y], (4, 6), tol=1e-3, max_iter=500, strict=False)
    np.testing.assert_allclose(A.apply(blocks[0].ravel()), y, atol=1e-8 * max(1, abs(y).max()))


# -- frames

def test_full_rate_identity():
    f = make_frame((40, 32), seed=4)
    g = partition(f, 10, 8)
    sets = compress_frame(f, g, uniform_plan(g, 1.0))
    rec = reconstruct_frame(sets, g, frame_index=f.frame_index)
    assert np.abs(rec.data - f.data).max() <= 1e-8


def test_reconstruct_block_paths():
    x = np.arange(12.0).reshape(3, 4)
    A = build_matrix("bpd", 12, 12, 1)
    ms = compress_block(x, A, BlockIndex(2, 1))
    basis = SparsityBasis(3, 4)
    np.testing.assert_allclose(reconstruct_block(ms, basis=basis), x, atol=1e-9)
    with pytest.raises(SensingError):
        reconstruct_block(ms)
    with pytest.raises(SensingError):
        reconstruct_block(ms, build_matrix("bpd", 12, 12, 2), basis)


def test_compress_frame_plan_shape_checked(frame):
    g = partition(frame, 10, 8)
    other = partition(make_frame((40, 16)), 10, 8)
    with pytest.raises(SensingError):
        compress_frame(frame, g, uniform_plan(other, 0.5))


def test_frame_seeds_differ_per_block(frame):
    g = partition(frame, 10, 8)
    sets = compress_frame(frame, g, uniform_plan(g, 0.3))
    assert len({s.seed for s in sets}) == g.n_blocks


def test_measurement_file_round_trip(tmp_path, frame):
    g = partition(frame, 10, 8)
    plan = uniform_plan(g, 0.25)
    plan.rates[0, 0] = 0.0
    sets = compress_frame(frame, g, plan, "bpbd", base_seed=3)
    path = tmp_path / "m.rcs"
    write_measurements(path, sets, g, frame.frame_index)
    idx, shape, back = read_measurements(path)
    assert (idx, shape) == (1, (10, 8))
    assert [(s.block, s.m, s.n, s.seed, s.kind) for s in back] == \
        [(s.block, s.m, s.n, s.seed, s.kind) for s in sets]
    for a, b in zip(sets, back):
        np.testing.assert_allclose(a.y, b.y, rtol=1e-6)
    raw = path.read_bytes()
    assert raw[:4] == b"RCSF"
    path.write_bytes(raw + b"\0")
    with pytest.raises(SensingError, match="trailing"):
        read_measurements(path)


# -- quantisation

def test_quantize_error_bound_and_zero():
    f = make_frame((40, 32), seed=2)
    q = quantize_frame(f, 3)
    assert np.abs(q.data - f.data).max() <= 255 / 16
    assert len(np.unique(q.data)) <= 8
    z = quantize_frame(f.with_data(np.zeros((40, 32))), 3)
    assert np.all(z.data == 255 / 16)


def test_quantize_psnr_monotone():
    from radar_cs.evaluation import psnr
    f = make_frame((40, 32), seed=5)
    values = [psnr(quantize_frame(f, b), f) for b in range(1, 9)]
    assert all(b >= a for a, b in zip(values, values[1:]))
