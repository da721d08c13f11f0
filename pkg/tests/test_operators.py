import os
import subprocess
import sys
import tracemalloc

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hexbp.basis import QuadKind, build_basis
from hexbp.mesh import build_box_mesh
from hexbp.operators import (Backend, BPKind, OperatorHandle, OracleSizeError, assemble_oracle,
                             build_operator, cost_model, count_flops, with_backend)
from hexbp.verify import semidefinite_spectrum

KINDS = list(BPKind)


def _rel(a, b):
    return np.linalg.norm(a - b) / np.linalg.norm(b)


@pytest.mark.parametrize("backend", [Backend.FUSED, Backend.MULTIPASS, Backend.ORACLE])
@pytest.mark.parametrize("p", [1, 2, 3])
def test_mass_of_constant_is_volume(backend, p):
    op = build_operator(BPKind.BP1, build_box_mesh((1, 1, 1), p), backend)
    assert abs(op.apply(np.ones(op.lsize)).sum() - 1.0) <= 1e-13


@pytest.mark.parametrize("kind", [BPKind.BP3, BPKind.BP5])
@pytest.mark.parametrize("p", [1, 2, 3])
def test_stiffness_annihilates_constants(kind, p):
    op = build_operator(kind, build_box_mesh((2, 2, 1), p, deform=0.1), Backend.FUSED)
    A = with_backend(op, Backend.ORACLE).matrix
    norm = abs(A).sum(axis=1).max()
    assert np.abs(op.apply(np.ones(op.lsize))).max() <= 1e-12 * norm


@pytest.mark.parametrize("kind", KINDS)
def test_backends_agree_on_two_cubed_p2(kind):
    fused = build_operator(kind, build_box_mesh((2, 2, 2), 2, deform=0.1), Backend.FUSED)
    multi = with_backend(fused, Backend.MULTIPASS)
    oracle = with_backend(fused, Backend.ORACLE)
    rng = np.random.default_rng(3)
    for _ in range(5):
        u = rng.standard_normal(fused.lsize)
        ref = oracle.apply(u)
        assert _rel(fused.apply(u), ref) <= 1e-12
        assert _rel(multi.apply(u), ref) <= 1e-12
        np.testing.assert_array_equal(fused.apply(u), multi.apply(u))


@pytest.mark.parametrize("kind", KINDS)
def test_oracle_symmetric(kind):
    op = build_operator(kind, build_box_mesh((3, 2, 1), 2, deform=0.1), Backend.ORACLE)
    A = op.matrix
    assert abs(A - A.T).max() <= 1e-14 * abs(A).max()


def test_mass_diagonal_positive():
    op = build_operator(BPKind.BP1, build_box_mesh((2, 2, 2), 3, deform=0.1), Backend.ORACLE)
    assert np.all(op.matrix.diagonal() > 0)


@pytest.mark.parametrize("kind", [BPKind.BP3, BPKind.BP5])
@pytest.mark.parametrize("p,dims", [(1, (2, 2, 2)), (2, (2, 1, 1)), (3, (1, 1, 1))])
def test_stiffness_spectrum(kind, p, dims):
    op = build_operator(kind, build_box_mesh(dims, p, deform=0.1))
    assert op.lsize <= 200
    lam = semidefinite_spectrum(op)
    scale = lam[-1]
    assert lam[0] >= -1e-12 * scale
    # exactly one zero eigenvalue: the constants
    assert np.sum(lam <= 1e-10 * scale) == 1


@pytest.mark.parametrize("p", [1, 2])
def test_mass_spectrum_positive(p):
    op = build_operator(BPKind.BP1, build_box_mesh((2, 1, 1), p, deform=0.1))
    assert semidefinite_spectrum(op)[0] > 0


@pytest.mark.parametrize("kind", [BPKind.BP3, BPKind.BP5])
def test_stiffness_galerkin_scaling(kind):
    # stiffness scales as h^{d-2} = h under uniform dilation
    small = build_operator(kind, build_box_mesh((2, 2, 2), 2, extent=(0.5,) * 3), Backend.ORACLE)
    big = build_operator(kind, build_box_mesh((2, 2, 2), 2), Backend.ORACLE)
    np.testing.assert_allclose(small.matrix.toarray(), 0.5 * big.matrix.toarray(),
                               rtol=1e-12, atol=1e-14)
    mass_small = build_operator(BPKind.BP1, build_box_mesh((1, 1, 1), 2, extent=(0.5,) * 3),
                                Backend.ORACLE)
    mass_big = build_operator(BPKind.BP1, build_box_mesh((1, 1, 1), 2), Backend.ORACLE)
    np.testing.assert_allclose(mass_small.matrix.toarray(), mass_big.matrix.toarray() / 8,
                               rtol=1e-12, atol=1e-16)


def test_bp3_matches_bp5_on_affine_mesh_with_same_rule():
    mesh = build_box_mesh((2, 2, 1), 2)
    basis = build_basis(2, 3, QuadKind.GLL)
    a = build_operator(BPKind.BP3, mesh, basis=basis)
    b = build_operator(BPKind.BP5, mesh)
    u = np.random.default_rng(0).standard_normal(a.lsize)
    np.testing.assert_allclose(a.apply(u), b.apply(u), rtol=0, atol=1e-13)


@settings(max_examples=20, deadline=None)
@given(kind=st.sampled_from(KINDS), p=st.integers(1, 3),
       dims=st.tuples(st.integers(1, 2), st.integers(1, 2), st.integers(1, 2)),
       a=st.sampled_from([0.0, 0.05, 0.15]), seed=st.integers(0, 2**32 - 1))
def test_linearity_and_symmetry(kind, p, dims, a, seed):
    op = build_operator(kind, build_box_mesh(dims, p, deform=a))
    rng = np.random.default_rng(seed)
    u, v = rng.standard_normal((2, op.lsize))
    Au, Av = op.apply(u), op.apply(v)
    np.testing.assert_allclose(op.apply(2.0 * u - v), 2.0 * Au - Av, rtol=1e-12,
                               atol=1e-12 * np.abs(Au).max())
    assert abs(u @ Av - v @ Au) <= 1e-12 * np.linalg.norm(Au) * np.linalg.norm(v)


# cost model -----------------------------------------------------------------

def test_cost_model_examples():
    m = cost_model(3, True)
    assert (m.flops_per_elem, m.reads_per_elem) == (4032, 448)
    assert m.arithmetic_intensity == 9.0
    m1 = cost_model(1, True)
    assert (m1.flops_per_elem, m1.reads_per_elem) == (312, 56)
    assert cost_model(3, False).flops_per_elem == 7104
    assert cost_model(7).flops_per_elem == 56832
    with pytest.raises(ValueError):
        cost_model(0)


def test_arithmetic_intensity_linear_in_p():
    ai = [cost_model(p).arithmetic_intensity for p in range(1, 12)]
    np.testing.assert_allclose(np.diff(ai), 12 / 7, rtol=1e-14)


@pytest.mark.parametrize("p", range(1, 7))
def test_bp5_flop_count_matches_model(p):
    op = build_operator(BPKind.BP5, build_box_mesh((2, 1, 1), p))
    measured = count_flops(op)
    model = cost_model(p).flops_per_elem
    assert abs(measured - model) <= 0.25 * model
    assert measured == model


def test_flop_count_scaling_and_ordering():
    c3 = count_flops(build_operator(BPKind.BP5, build_box_mesh((1, 1, 1), 3)))
    c7 = count_flops(build_operator(BPKind.BP5, build_box_mesh((1, 1, 1), 7)))
    assert 11 <= c7 / c3 <= 17
    mesh = build_box_mesh((1, 1, 1), 3)
    assert count_flops(build_operator(BPKind.BP1, mesh)) < count_flops(build_operator(BPKind.BP3, mesh))


def test_flop_counts_backend_independent():
    op = build_operator(BPKind.BP3, build_box_mesh((2, 1, 1), 2))
    np.testing.assert_array_equal(op.element_flops(),
                                  with_backend(op, Backend.MULTIPASS).element_flops())
    with pytest.raises(ValueError):
        with_backend(op, Backend.ORACLE).element_flops()


# allocation accounting --------------------------------------------------------

def _allocs(op, u):
    seen = []
    op.apply(u, on_alloc=seen.append)
    return seen


@pytest.mark.parametrize("kind", KINDS)
def test_allocation_accounting(kind):
    fused = build_operator(kind, build_box_mesh((2, 2, 2), 3))
    multi = with_backend(fused, Backend.MULTIPASS)
    u = np.ones(fused.lsize)
    assert _allocs(fused, u) == []
    temps = _allocs(multi, u)
    qfields = sum(t.shape[0] if len(t.shape) == 5 else 1 for t in temps if t.qpoint_field)
    if kind is BPKind.BP1:
        assert qfields == 2
    else:
        assert qfields >= 3
    assert all(t.nbytes == 8 * np.prod(t.shape) for t in temps)


def test_fused_apply_does_not_allocate_large_buffers():
    op = build_operator(BPKind.BP3, build_box_mesh((6, 6, 6), 3))
    u = np.ones(op.lsize)
    out = np.empty(op.lsize)
    op.apply(u, out)
    multi = with_backend(op, Backend.MULTIPASS)
    multi.apply(u, out)
    tracemalloc.start()
    op.apply(u, out)
    fused_peak = tracemalloc.get_traced_memory()[1]
    tracemalloc.reset_peak()
    multi.apply(u, out)
    multi_peak = tracemalloc.get_traced_memory()[1]
    tracemalloc.stop()
    qfield = 8 * op.restriction.nelem * op.basis.q ** 3
    assert fused_peak < qfield / 4
    assert multi_peak >= 3 * qfield


def test_external_scratch_gives_same_result():
    op = build_operator(BPKind.BP1, build_box_mesh((2, 2, 1), 2))
    u = np.random.default_rng(5).standard_normal(op.lsize)
    np.testing.assert_array_equal(op.apply(u, scratch=op.new_scratch()), op.apply(u))


def test_apply_argument_errors():
    op = build_operator(BPKind.BP1, build_box_mesh((1, 1, 1), 1))
    with pytest.raises(ValueError):
        op.apply(np.zeros(op.lsize + 1))
    u = np.zeros(op.lsize)
    with pytest.raises(ValueError):
        op.apply(u, u)


def test_oracle_size_guard():
    op = build_operator(BPKind.BP5, build_box_mesh((14, 14, 14), 2), Backend.MULTIPASS)
    assert op.lsize > 20_000
    with pytest.raises(OracleSizeError):
        assemble_oracle(op.kind, op.basis, op.restriction, op.factors, op.lsize)
    with pytest.raises(OracleSizeError):
        with_backend(op, Backend.ORACLE)


def test_handle_validation():
    mesh = build_box_mesh((1, 1, 1), 2)
    op = build_operator(BPKind.BP1, mesh)
    with pytest.raises(ValueError):
        build_operator(BPKind.BP5, mesh, basis=build_basis(2, 4, QuadKind.GL))
    with pytest.raises(ValueError):
        OperatorHandle(BPKind.BP3, Backend.FUSED, op.basis, op.restriction, op.factors)


_THREAD_SCRIPT = """
import numpy as np, sys
from hexbp import build_box_mesh, build_operator
out = []
for kind in ("bp1", "bp3", "bp5"):
    op = build_operator(kind, build_box_mesh((5, 4, 3), 2, deform=0.1))
    u = np.random.default_rng(7).standard_normal(op.lsize)
    out.append(op.apply(u))
np.save(sys.argv[1], np.concatenate(out))
"""


@pytest.mark.slow
def test_results_independent_of_thread_count(tmp_path):
    results = []
    for threads in (1, 4):
        path = tmp_path / f"t{threads}.npy"
        env = dict(os.environ, NUMBA_NUM_THREADS=str(threads))
        subprocess.run([sys.executable, "-c", _THREAD_SCRIPT, str(path)], env=env, check=True)
        results.append(np.load(path))
    np.testing.assert_array_equal(results[0], results[1])
