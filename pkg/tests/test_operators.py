import numpy as np
import pytest

from setd.grid import Boundary, EdgeBC, Layout, build_grid, l2_inner
from setd.operators import (VelocityField, assemble_diffusion,
                            darcy_solve, load_permeability_csv, peclet_number,
                            permeability_streaks, upwind_advection)
from setd.phi import gershgorin_interval


def dense_assembly_oracle(op):
    """Assemble the operator densely by applying it to basis vectors."""
    n = op.n
    out = np.zeros((n, n))
    for k in range(n):
        e = np.zeros(n)
        e[k] = 1.0
        out[:, k] = op.apply(e)
    return out


# ---------------------------------------------------------------------------
# diffusion

@pytest.mark.parametrize("layout", [Layout.NODE_CENTERED, Layout.CELL_CENTERED])
def test_neumann_row_sums_zero(layout):
    g = build_grid(3, 2, 1.0, 1.0, layout)
    op, b = assemble_diffusion(g, 2.0)
    assert np.abs(op.apply(np.ones(g.size))).max() < 1e-12
    assert np.all(b.values == 0.0)


def test_checkerboard_cell_centered():
    # 2x2 cells with unit spacing: stencil applies -4 to the checkerboard
    g = build_grid(2, 2, 2.0, 2.0, Layout.CELL_CENTERED)
    op, _ = assemble_diffusion(g, 1.0)
    f = np.array([1.0, -1.0, -1.0, 1.0])
    np.testing.assert_allclose(op.apply(f), -4.0 * f, atol=1e-14)
    np.testing.assert_allclose(dense_assembly_oracle(op) @ f, -4.0 * f,
                               atol=1e-14)


def test_smallest_nonzero_eigenvalue_near_pi_squared():
    g = build_grid(20, 20, 1.0, 1.0)
    op, _ = assemble_diffusion(g, 1.0)
    eig = np.sort(np.linalg.eigvals(op.to_dense()).real)
    nonzero = eig[np.abs(eig) > 1e-8]
    assert -nonzero[-1] == pytest.approx(np.pi ** 2, rel=0.03)


@pytest.mark.parametrize("layout", [Layout.NODE_CENTERED, Layout.CELL_CENTERED])
def test_neumann_operator_selfadjoint_nsd(layout):
    g = build_grid(9, 7, 1.0, 2.0, layout)
    op, _ = assemble_diffusion(g, 0.8)
    rng = np.random.default_rng(0)
    for _ in range(5):
        v = rng.standard_normal(g.size)
        w = rng.standard_normal(g.size)
        assert l2_inner(g, op.apply(v), w) == pytest.approx(
            l2_inner(g, v, op.apply(w)), rel=1e-12, abs=1e-12)
        assert l2_inner(g, op.apply(v), v) <= 1e-12
    eig = np.linalg.eigvals(op.to_dense())
    assert np.max(eig.real) < 1e-10
    assert np.max(np.abs(eig.imag)) < 1e-10


def test_dirichlet_operator_negative_definite_and_source():
    bc = Boundary(left=EdgeBC.dirichlet(2.0), right=EdgeBC.dirichlet(0.0))
    g = build_grid(6, 5, 1.0, 1.0, Layout.CELL_CENTERED, bc)
    op, b = assemble_diffusion(g, 1.0)
    eig = np.linalg.eigvals(op.to_dense()).real
    assert np.max(eig) < -1e-8
    src = b.values.reshape(6, 5)
    assert np.all(src[0, :] == pytest.approx(2.0 * 2.0 / g.dx ** 2))
    assert np.all(src[1:, :] == 0.0)


def test_dirichlet_on_node_centered_unsupported():
    bc = Boundary(left=EdgeBC.dirichlet(1.0))
    g = build_grid(5, 5, 1.0, 1.0, Layout.NODE_CENTERED, bc)
    with pytest.raises(NotImplementedError):
        assemble_diffusion(g, 1.0)


def test_gershgorin_from_handle_encloses_dense_eigenvalues():
    g = build_grid(12, 9, 1.0, 1.5, Layout.CELL_CENTERED)
    op, _ = assemble_diffusion(g, 1.3)
    lo, hi = gershgorin_interval(op)
    eig = np.linalg.eigvals(op.to_dense()).real
    assert eig.min() >= lo - 1e-9 and eig.max() <= hi + 1e-9


def test_sparse_matches_apply():
    g = build_grid(7, 6, 1.0, 1.0, Layout.CELL_CENTERED)
    op, _ = assemble_diffusion(g, 1.0)
    v = np.random.default_rng(1).standard_normal(g.size)
    np.testing.assert_allclose(op.as_sparse() @ v, op.apply(v), rtol=1e-14)
    np.testing.assert_allclose(op.to_dense(), dense_assembly_oracle(op),
                               atol=1e-14)


# ---------------------------------------------------------------------------
# upwind advection

def constant_velocity(grid, qx_val, qy_val):
    return VelocityField(qx=np.full((grid.nx + 1, grid.ny), float(qx_val)),
                         qy=np.full((grid.nx, grid.ny + 1), float(qy_val)))


def test_upwind_zero_velocity():
    g = build_grid(6, 6, 1.0, 1.0, Layout.CELL_CENTERED)
    op, b = upwind_advection(g, constant_velocity(g, 0, 0))
    assert np.abs(op.apply(np.ones(36))).max() == 0.0
    assert np.all(b.values == 0.0)


def test_upwind_backward_difference_on_linear_field():
    bc = Boundary(left=EdgeBC.dirichlet(0.0), right=EdgeBC.dirichlet(0.0))
    g = build_grid(20, 4, 1.0, 1.0, Layout.CELL_CENTERED, bc)
    op, _ = upwind_advection(g, constant_velocity(g, 1.0, 0.0), bc)
    X, _ = g.meshgrid()
    u = X.ravel()
    out = op.apply(u).reshape(20, 4)
    # -d(x)/dx = -1 exactly for the linear field away from the inflow cell
    np.testing.assert_allclose(out[1:, :], -1.0, atol=1e-12)


def test_upwind_conservation_telescopes():
    # no flux through any boundary face: total advective change integrates to 0
    g = build_grid(8, 8, 1.0, 1.0, Layout.CELL_CENTERED)
    rng = np.random.default_rng(3)
    qx = rng.standard_normal((9, 8))
    qy = rng.standard_normal((8, 9))
    qx[0, :] = qx[-1, :] = 0.0
    qy[:, 0] = qy[:, -1] = 0.0
    op, _ = upwind_advection(g, VelocityField(qx=qx, qy=qy))
    u = rng.standard_normal(64)
    total = np.sum(op.apply(u)) * g.dx * g.dy
    assert abs(total) < 1e-12


def test_upwind_m_matrix_sign_pattern():
    g = build_grid(6, 6, 1.0, 1.0, Layout.CELL_CENTERED)
    rng = np.random.default_rng(4)
    vel = VelocityField(qx=rng.standard_normal((7, 6)),
                        qy=rng.standard_normal((6, 7)))
    adv, _ = upwind_advection(g, vel)
    diff, _ = assemble_diffusion(g, 0.5)
    full = diff + adv
    dense = full.to_dense()
    off = dense - np.diag(np.diag(dense))
    assert np.min(off) >= -1e-13


def test_upwind_dimension_mismatch():
    g = build_grid(6, 6, 1.0, 1.0, Layout.CELL_CENTERED)
    with pytest.raises(ValueError):
        upwind_advection(g, VelocityField(qx=np.zeros((6, 6)),
                                          qy=np.zeros((6, 7))))


# ---------------------------------------------------------------------------
# permeability and Darcy

def test_permeability_streaks_two_values():
    g = build_grid(10, 40, 1.0, 1.0, Layout.CELL_CENTERED)
    k = permeability_streaks(g, 1.0, 100.0)
    assert set(np.unique(k)) == {1.0, 100.0}
    k2 = permeability_streaks(g, 1.0, 1.0)
    assert np.all(k2 == 1.0)


def test_permeability_streaks_validation():
    g = build_grid(10, 10, 1.0, 1.0, Layout.CELL_CENTERED)
    with pytest.raises(ValueError):
        permeability_streaks(g, 1.0, 0.5)
    with pytest.raises(ValueError):
        permeability_streaks(g, 1.0, 10.0, [(0.1, 0.5), (0.4, 0.6)])
    with pytest.raises(ValueError):
        permeability_streaks(g, 1.0, 10.0, [(0.5, 1.2)])


def test_permeability_csv_round_trip(tmp_path):
    g = build_grid(5, 4, 1.0, 1.0, Layout.CELL_CENTERED)
    k = np.arange(1, 21, dtype=float).reshape(5, 4)
    path = tmp_path / "k.csv"
    np.savetxt(path, k.T, delimiter=",")  # rows = y-index
    got = load_permeability_csv(path, g)
    np.testing.assert_array_equal(got, k)
    with pytest.raises(ValueError):
        load_permeability_csv(path, build_grid(4, 5, 1, 1, Layout.CELL_CENTERED))


def test_darcy_constant_permeability_uniform_flux():
    g = build_grid(12, 10, 1.0, 1.0, Layout.CELL_CENTERED)
    kval = 3.0
    vel = darcy_solve(g, np.full((12, 10), kval), mu=1.0, p_left=1.0,
                      p_right=0.0)
    np.testing.assert_allclose(vel.qx, kval, rtol=1e-12)
    np.testing.assert_allclose(vel.qy, 0.0, atol=1e-12)


def test_darcy_linearity_in_permeability():
    g = build_grid(9, 7, 1.0, 1.0, Layout.CELL_CENTERED)
    k = permeability_streaks(g, 1.0, 40.0)
    v1 = darcy_solve(g, k)
    v2 = darcy_solve(g, 2.0 * k)
    np.testing.assert_allclose(v2.qx, 2.0 * v1.qx, rtol=1e-10)
    np.testing.assert_allclose(v2.qy, 2.0 * v1.qy, rtol=1e-10, atol=1e-13)


def test_darcy_streaks_divergence_free_and_balanced():
    g = build_grid(30, 30, 1.0, 1.0, Layout.CELL_CENTERED)
    k = permeability_streaks(g, 1.0, 100.0)
    vel = darcy_solve(g, k)
    div = vel.cell_divergence(g)
    assert np.abs(div).max() <= 1e-10 * vel.max_speed()
    inflow = vel.qx[0, :].sum() * g.dy
    outflow = vel.qx[-1, :].sum() * g.dy
    assert inflow == pytest.approx(outflow, rel=1e-10)
    # flux concentrates in the streaks
    mid = g.ny // 2
    streak_flux = np.abs(vel.qx[15, mid])
    background_flux = np.abs(vel.qx[15, 2])
    assert streak_flux > 5 * background_flux


def test_darcy_rejects_bad_inputs():
    g = build_grid(5, 5, 1.0, 1.0, Layout.CELL_CENTERED)
    with pytest.raises(ValueError):
        darcy_solve(g, np.zeros((5, 5)))
    with pytest.raises(ValueError):
        darcy_solve(g, np.ones((4, 5)))
    with pytest.raises(NotImplementedError):
        darcy_solve(build_grid(5, 5, 1, 1), np.ones((5, 5)))


def test_peclet_number():
    g = build_grid(10, 10, 1.0, 1.0, Layout.CELL_CENTERED)
    vel = constant_velocity(g, 2.0, 0.0)
    assert peclet_number(vel, 1.0, 0.5) == pytest.approx(4.0)


def test_operator_addition_mismatched_grids():
    g1 = build_grid(5, 5, 1.0, 1.0, Layout.CELL_CENTERED)
    g2 = build_grid(6, 5, 1.0, 1.0, Layout.CELL_CENTERED)
    op1, _ = assemble_diffusion(g1, 1.0)
    op2, _ = assemble_diffusion(g2, 1.0)
    with pytest.raises(ValueError):
        _ = op1 + op2
