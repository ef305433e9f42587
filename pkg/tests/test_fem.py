import math

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, strategies as st

from mmshape import fem
from mmshape.errors import SolverError
from mmshape.mesh import EXTERIOR, Mesh, gen_disk, gen_rect_grid


def ref_triangle():
    return Mesh([[0, 0], [1, 0], [0, 1]], [[0, 1, 2]], None, [[0, 1], [1, 2], [2, 0]], [EXTERIOR] * 3)


def test_element_stiffness_rows_vanish():
    m = ref_triangle()
    K = fem.assemble_laplace(m).tocsr(3).toarray()
    assert np.allclose(K.sum(axis=1), 0, atol=1e-15)
    assert np.allclose(K, [[1, -0.5, -0.5], [-0.5, 0.5, 0], [-0.5, 0, 0.5]])


def test_linear_is_discrete_harmonic():
    m = gen_rect_grid(0, 0, 1, 1, 5, 5)
    A = fem.assemble_laplace(m).tocsr(m.num_vertices)
    u = fem.interpolate(m, lambda x, y: 0.3 + 2 * x - 1.5 * y)
    interior = np.setdiff1d(np.arange(m.num_vertices), m.marker_vertices(EXTERIOR))
    assert np.max(np.abs((A @ u)[interior])) < 1e-13


def test_stiffness_symmetric_and_region_coeff():
    m = gen_disk((0, 0), 1.0, 24)
    A = fem.assemble_laplace(m, {0: 2.5}).tocsr(m.num_vertices)
    assert abs(A - A.T).max() == 0.0
    B = fem.assemble_laplace(m).tocsr(m.num_vertices)
    assert abs(A - 2.5 * B).max() < 1e-13


def test_nonpositive_conductivity():
    with pytest.raises(ValueError):
        fem.assemble_laplace(ref_triangle(), 0.0)


def test_mass_exact_entries_and_row_sums():
    m = Mesh([[0, 0], [2, 0], [0, 1.5]], [[0, 1, 2]])
    M = fem.assemble_mass(m).tocsr(3).toarray()
    area = 1.5
    assert M[0, 0] == pytest.approx(area / 6) and M[0, 1] == pytest.approx(area / 12)
    big = gen_rect_grid(0, 0, 1, 1, 3, 3)
    M = fem.assemble_mass(big, 0.04).tocsr(big.num_vertices)
    dual = np.zeros(big.num_vertices)
    np.add.at(dual, big.cells.ravel(), np.repeat(big.areas / 3, 3))
    assert np.allclose(M.sum(axis=1).A1, 0.04 * dual, rtol=1e-13)
    assert fem.assemble_mass(big, 0.0).tocsr(big.num_vertices).nnz == 0


def test_robin_edge_matrix():
    m = Mesh([[0, 0], [2, 0], [0, 1]], [[0, 1, 2]], None, [[0, 1]], [EXTERIOR])
    trip, b = fem.assemble_robin(m, EXTERIOR, 1.0, 0.0)
    R = trip.tocsr(3).toarray()
    L = 2.0
    assert np.allclose(R[:2, :2], [[L / 3, L / 6], [L / 6, L / 3]])
    assert np.all(b == 0)
    _, b = fem.assemble_robin(m, EXTERIOR, 1.0, 3.2)
    assert b[:2] == pytest.approx([3.2, 3.2])


def test_robin_limit_gives_ambient():
    m = gen_disk((0, 0), 1.0, 32)
    n = m.num_vertices
    trip, b = fem.assemble_robin(m, EXTERIOR, 1.0, 3.2)
    A = fem.assemble_laplace(m, 1e8).tocsr(n) + trip.tocsr(n)
    u = fem.solve_spd(fem.SparseSystem(A.tocsr(), b))
    assert np.allclose(u, 3.2, atol=1e-6)


def test_dirichlet_constant_and_linear():
    m = gen_rect_grid(0, 0, 1, 1, 4, 4)
    u = fem.solve_poisson(m, 0.0, 1.0)
    assert np.allclose(u, 1.0, atol=1e-12)
    u = fem.solve_poisson(m, 0.0, lambda x, y: x)
    assert np.max(np.abs(u - m.vertices[:, 0])) < 1e-10


def test_dirichlet_zero_rhs():
    m = gen_rect_grid(0, 0, 1, 1, 2, 2)
    n = m.num_vertices
    A = fem.assemble_laplace(m).tocsr(n)
    b = np.arange(n, dtype=float)
    dofs, vals = fem.dirichlet_dofs(m, EXTERIOR, 0.0)
    s = fem.apply_dirichlet(A, b, dofs, vals)
    free = np.setdiff1d(np.arange(n), dofs)
    assert np.array_equal(s.b[free], b[free]) and np.all(s.b[dofs] == 0)
    assert abs(s.A - s.A.T).max() == 0.0


def test_solve_small_systems():
    I = fem.SparseSystem(sp.identity(4, format="csr"), np.array([1.0, 2, 3, 4]))
    assert np.array_equal(fem.solve_spd(I), I.b)
    S = fem.SparseSystem(sp.csr_matrix([[2.0, 1.0], [1.0, 2.0]]), np.array([3.0, 3.0]))
    for method in ("direct", "cg"):
        assert fem.solve_spd(S, method=method) == pytest.approx([1.0, 1.0])


def test_cg_detects_indefinite():
    S = fem.SparseSystem(sp.csr_matrix([[1.0, 2.0], [2.0, 1.0]]), np.array([1.0, 0.0]))
    with pytest.raises(SolverError) as exc:
        fem.solve_spd(S, method="cg")
    assert exc.value.residual is not None


def test_direct_singular_is_error():
    S = fem.SparseSystem(sp.csr_matrix(np.zeros((2, 2))), np.array([1.0, 0.0]))
    with pytest.raises(SolverError):
        fem.solve_spd(S)


def test_solve_deterministic():
    m = gen_rect_grid(0, 0, 1, 1, 8, 8)
    a = fem.solve_poisson(m, lambda x, y: x * y, 0.0)
    b = fem.solve_poisson(m, lambda x, y: x * y, 0.0)
    assert np.array_equal(a, b)


def test_backward_error_definition():
    A = sp.csr_matrix([[2.0, 0.0], [0.0, 4.0]])
    u = np.array([1.0, 1.0])
    b = np.array([2.0, 3.0])
    assert fem.backward_error(A, u, b) == pytest.approx(1.0 / (4.0 * 1.0 + 3.0))


def test_eval_and_gradient():
    m = gen_rect_grid(0, 0, 1, 1, 3, 3)
    u = fem.interpolate(m, lambda x, y: x + 2 * y)
    assert np.allclose(fem.cell_gradient(m, u), [1, 2])
    assert fem.cell_gradient(m, u, 4) == pytest.approx([1, 2])
    assert fem.eval_field(m, u, m.vertices[7]) == pytest.approx(u[7])
    c = m.cell_coords([5])[0].mean(axis=0)
    assert fem.eval_field(m, u, c) == pytest.approx(u[m.cells[5]].mean())
    assert fem.eval_field(m, u, (2.0, 2.0)) is None


def test_l2_error_cases():
    m = gen_rect_grid(0, 0, 1, 1, 3, 3)
    u = fem.interpolate(m, lambda x, y: 1 - x + y)
    assert fem.l2_error(m, u, lambda x, y: 1 - x + y) < 1e-12
    assert fem.l2_error(m, np.zeros(m.num_vertices), lambda x, y: 1.0) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        fem.l2_error(m, u, lambda x, y: x, degree=1)


def test_manufactured_rate():
    errs = []
    for n in (16, 32, 64, 128):
        m = gen_rect_grid(0, 0, 1, 1, n, n)
        f = lambda x, y: 2 * math.pi**2 * np.sin(math.pi * x) * np.sin(math.pi * y)
        u = fem.solve_poisson(m, f, 0.0)
        errs.append(fem.l2_error(m, u, lambda x, y: np.sin(math.pi * x) * np.sin(math.pi * y)))
    rates = np.log2(np.array(errs[:-1]) / errs[1:])
    assert np.all(np.abs(rates - 2) < 0.15)


def test_boundary_flux_recovers_normal_derivative():
    # u = x^2 + y^2 on the unit disk: du/dn = 2 on the circle, -Lap u = -4
    worst, mean = [], []
    for N in (64, 128, 256):
        m = gen_disk((0, 0), 1.0, N)
        n = m.num_vertices
        u = fem.interpolate(m, lambda x, y: x**2 + y**2)
        r = fem.assemble_laplace(m).tocsr(n) @ u - fem.assemble_load(m, -4.0 * np.ones(m.num_cells))
        q = fem.boundary_flux(m, r, EXTERIOR)
        vv = m.marker_vertices(EXTERIOR)
        assert np.all(q[np.setdiff1d(np.arange(n), vv)] == 0)
        worst.append(np.max(np.abs(q[vv] - 2.0)))
        mean.append(abs(np.mean(q[vv]) - 2.0))
    assert worst[-1] < 0.03
    assert np.all(np.log2(np.array(worst[:-1]) / worst[1:]) > 0.9)
    assert np.all(np.log2(np.array(mean[:-1]) / mean[1:]) > 1.8)


@given(st.integers(0, 2**32 - 1))
def test_triplet_order_independent(seed):
    rng = np.random.default_rng(seed)
    r = rng.integers(0, 6, 40)
    c = rng.integers(0, 6, 40)
    v = rng.normal(size=40)
    a = fem.Triplets()
    a.add(r, c, v)
    perm = rng.permutation(40)
    b = fem.Triplets()
    b.add(r[perm], c[perm], v[perm])
    assert abs(a.tocsr(6) - b.tocsr(6)).max() <= 1e-14
