import numpy as np
import pytest

from setd.grid import Layout, build_grid, l2_norm
from setd.noise import (NoiseSpec, RngStream, aggregate_increments,
                        q_matrix)
from setd.operators import assemble_diffusion
from setd.phi import dense_phi
from setd.schemes import (NoiseSource, PhiConfig, Problem, SchemeConfig,
                          SchemeKind, exact_linear_reference, guarded_reaction,
                          integrate, make_implicit_solver, step_semi_implicit,
                          step_setd0, step_setd1)
from setd.spectral import SpectralBasis, analyze, synthesize


class DiagOp:
    """Diagonal operator a*I; scalar dynamics on every grid point."""

    def __init__(self, a, n):
        self.a = a
        self.n = n
        self.symmetric = True

    def apply(self, v):
        return self.a * np.asarray(v)

    def diagonal(self):
        return np.full(self.n, self.a)

    def offdiag_abs_row_sums(self):
        return np.zeros(self.n)

    def to_dense(self):
        return np.diag(np.full(self.n, self.a))

    def as_sparse(self):
        from scipy import sparse

        return sparse.diags(np.full(self.n, self.a)).tocsr()


def scalar_problem(a=-1.0, lam=1.0, n=4):
    grid = build_grid(2, 2, 1.0, 1.0)
    basis = SpectralBasis(2, 1.0, 1.0)
    spec = NoiseSpec.power_law(1.0, 0.0, 2)  # Gamma = 0: no noise
    return Problem(grid=grid, operator=DiagOp(a, n),
                   nonlinearity=lambda u: -lam * u, noise_spec=spec,
                   basis=basis, x0=np.ones(n))


DENSE = PhiConfig(method="dense")


def test_setd1_scalar_one_step():
    prob = scalar_problem()
    out = step_setd1(np.ones(4), prob, 0.1, DENSE.make())
    expect = 1 + 0.1 * ((1 - np.exp(-0.1)) / 0.1) * (-2.0)
    np.testing.assert_allclose(out, expect, rtol=1e-13)


def test_setd0_scalar_one_step():
    prob = scalar_problem()
    out = step_setd0(np.ones(4), prob, 0.1, DENSE.make())
    np.testing.assert_allclose(out, np.exp(-0.1) * 0.9, rtol=1e-13)


def test_setd_zero_state_fixed_point():
    prob = scalar_problem()
    phi = DENSE.make()
    assert np.all(step_setd1(np.zeros(4), prob, 0.1, phi) == 0.0)
    assert np.all(step_setd0(np.zeros(4), prob, 0.1, phi) == 0.0)


def test_semi_implicit_scalar_resolvent():
    prob = scalar_problem(a=-1.0, lam=0.0)
    solver = make_implicit_solver(prob, 0.5, "direct")
    out = step_semi_implicit(np.ones(4), prob, 0.5, solver)
    np.testing.assert_allclose(out, 1 / 1.5, rtol=1e-13)


def test_semi_implicit_solvers_agree():
    grid = build_grid(8, 8, 1.0, 1.0, Layout.CELL_CENTERED)
    op, _ = assemble_diffusion(grid, 1.0)
    basis = SpectralBasis(6, 1.0, 1.0)
    prob = Problem(grid=grid, operator=op, nonlinearity=lambda u: 0.0 * u,
                   noise_spec=NoiseSpec.power_law(1, 0.0, 6), basis=basis,
                   x0=np.random.default_rng(0).standard_normal(64))
    rhs_state = prob.x0
    outs = []
    for method in ("direct", "cg", "bicgstab"):
        solver = make_implicit_solver(prob, 0.05, method)
        outs.append(step_semi_implicit(rhs_state, prob, 0.05, solver))
    np.testing.assert_allclose(outs[1], outs[0], atol=1e-8)
    np.testing.assert_allclose(outs[2], outs[0], atol=1e-8)


def test_semi_implicit_cg_weighted_node_centered():
    # node-centered operator is self-adjoint only in the weighted product;
    # the CG path must still reproduce the direct solve
    grid = build_grid(9, 9, 1.0, 1.0)
    op, _ = assemble_diffusion(grid, 1.0)
    basis = SpectralBasis(6, 1.0, 1.0)
    prob = Problem(grid=grid, operator=op, nonlinearity=lambda u: 0.0 * u,
                   noise_spec=NoiseSpec.power_law(1, 0.0, 6), basis=basis,
                   x0=np.random.default_rng(5).standard_normal(81))
    direct = make_implicit_solver(prob, 0.1, "direct").solve(prob.x0)
    viacg = make_implicit_solver(prob, 0.1, "cg").solve(prob.x0)
    np.testing.assert_allclose(viacg, direct, atol=1e-8)


def test_std_vs_modified_identical_without_noise():
    grid = build_grid(6, 6, 1.0, 1.0)
    op, _ = assemble_diffusion(grid, 1.0)
    basis = SpectralBasis(4, 1.0, 1.0)
    prob = Problem(grid=grid, operator=op, nonlinearity=lambda u: -u,
                   noise_spec=NoiseSpec.power_law(1, 0.0, 4), basis=basis,
                   x0=np.linspace(0, 1, 36))
    rng = RngStream(3)
    finals = []
    for kind in (SchemeKind.SEMI_IMPLICIT_STD, SchemeKind.SEMI_IMPLICIT_MODIFIED):
        cfg = SchemeConfig(kind, 0.1, 5, DENSE)
        finals.append(integrate(prob, cfg, 0, rng))
    np.testing.assert_allclose(finals[0], finals[1], atol=1e-13)


def test_setd_trajectories_match_exact_semigroup_any_dt():
    # F = 0, no noise: both exponential schemes are dt-exact
    grid = build_grid(8, 8, 1.0, 1.0)
    op, _ = assemble_diffusion(grid, 1.0)
    basis = SpectralBasis(6, 1.0, 1.0)
    x0 = np.random.default_rng(1).standard_normal(64)
    prob = Problem(grid=grid, operator=op, nonlinearity=lambda u: 0.0 * u,
                   noise_spec=NoiseSpec.power_law(1, 0.0, 6), basis=basis,
                   x0=x0)
    rng = RngStream(0)
    T = 0.3
    tol = 1e-6
    for dt in (0.3, 0.15, 0.05):
        steps = round(T / dt)
        exact = dense_phi(T * op.to_dense(), 0) @ x0
        for kind in (SchemeKind.SETD1, SchemeKind.SETD0):
            cfg = SchemeConfig(kind, dt, steps, PhiConfig(method="leja", tol=tol))
            final = integrate(prob, cfg, 0, rng)
            assert np.max(np.abs(final - exact)) <= 10 * tol


def test_all_schemes_converge_to_common_limit():
    grid = build_grid(7, 7, 1.0, 1.0)
    op, _ = assemble_diffusion(grid, 0.5)
    basis = SpectralBasis(5, 1.0, 1.0)
    x0 = np.random.default_rng(2).standard_normal(49)
    prob = Problem(grid=grid, operator=op, nonlinearity=lambda u: 0.0 * u,
                   noise_spec=NoiseSpec.power_law(1, 0.0, 5), basis=basis,
                   x0=x0)
    rng = RngStream(0)
    exact = dense_phi(0.2 * op.to_dense(), 0) @ x0
    errs = {}
    for dt in (0.05, 0.0125):
        cfg = SchemeConfig(SchemeKind.SEMI_IMPLICIT_STD, dt, round(0.2 / dt),
                           DENSE)
        errs[dt] = np.max(np.abs(integrate(prob, cfg, 0, rng) - exact))
    assert errs[0.0125] < errs[0.05] / 2  # first-order shrink toward the limit


def test_setd1_single_phi_rewrite_equals_two_phi_form():
    grid = build_grid(9, 9, 1.0, 1.0)
    op, _ = assemble_diffusion(grid, 1.0)
    basis = SpectralBasis(6, 1.0, 1.0)
    prob = Problem(grid=grid, operator=op, nonlinearity=lambda u: -0.7 * u,
                   noise_spec=NoiseSpec.power_law(1, 0.0, 6), basis=basis,
                   x0=np.zeros(81))
    tol = 1e-8
    phi = PhiConfig(method="dense", tol=tol).make()
    rng = np.random.default_rng(8)
    dense = op.to_dense()
    for _ in range(5):
        state = rng.standard_normal(81)
        one = step_setd1(state, prob, 0.05, phi)
        two = (dense_phi(0.05 * dense, 0) @ state
               + 0.05 * (dense_phi(0.05 * dense, 1) @ (-0.7 * state)))
        assert np.max(np.abs(one - two)) <= 10 * tol


def test_setd0_and_setd1_identical_for_pure_noise():
    grid = build_grid(10, 10, 1.0, 1.0)
    op, _ = assemble_diffusion(grid, 1.0)
    basis = SpectralBasis(8, 1.0, 1.0)
    prob = Problem(grid=grid, operator=op, nonlinearity=lambda u: 0.0 * u,
                   noise_spec=NoiseSpec.power_law(1.0, 1.0, 8), basis=basis,
                   x0=np.zeros(100), D=1.0)
    rng = RngStream(17)
    finals = []
    for kind in (SchemeKind.SETD1, SchemeKind.SETD0):
        cfg = SchemeConfig(kind, 0.25, 1, DENSE)
        finals.append(integrate(prob, cfg, 0, rng))
    np.testing.assert_allclose(finals[0], finals[1], atol=1e-12)


def test_integrate_zero_steps_returns_initial():
    prob = scalar_problem()
    cfg = SchemeConfig(SchemeKind.SETD1, 0.1, 0, DENSE)
    out = integrate(prob, cfg, 0, RngStream(0))
    np.testing.assert_array_equal(out, prob.x0)


def test_integrate_deterministic_reruns():
    grid = build_grid(8, 8, 1.0, 1.0)
    op, _ = assemble_diffusion(grid, 1.0)
    basis = SpectralBasis(6, 1.0, 1.0)
    prob = Problem(grid=grid, operator=op, nonlinearity=lambda u: -u,
                   noise_spec=NoiseSpec.power_law(1.0, 1.0, 6), basis=basis,
                   x0=np.zeros(64), D=1.0, lambda_reaction=1.0)
    rng = RngStream(123)
    cfg = SchemeConfig(SchemeKind.SETD1, 0.1, 5, DENSE)
    a = integrate(prob, cfg, 3, rng)
    b = integrate(prob, cfg, 3, RngStream(123))
    assert np.array_equal(a, b)
    c = integrate(prob, cfg, 4, rng)
    assert not np.array_equal(a, c)


def test_integrate_linear_decay_matches_spectral_oracle():
    # deterministic linear problem: grid run converges to the exact decay
    grid = build_grid(33, 33, 1.0, 1.0)
    op, _ = assemble_diffusion(grid, 1.0)
    basis = SpectralBasis(8, 1.0, 1.0)
    c0 = np.zeros((8, 8))
    c0[1, 1] = 1.0
    x0 = synthesize(basis, c0, grid)
    prob = Problem.linear_reaction(grid, op, 1.0, 0.5,
                                   NoiseSpec.power_law(1, 0.0, 8), basis, x0)
    rng = RngStream(0)
    cfg = SchemeConfig(SchemeKind.SETD1, 0.01, 50, PhiConfig("leja", tol=1e-9))
    final = integrate(prob, cfg, 0, rng)
    lam = 2 * np.pi ** 2
    exact = np.exp(-(lam + 0.5) * 0.5) * x0
    # O(h^2) spatial error is the dominant term on a 33x33 grid
    assert l2_norm(grid, final - exact) < 2e-3


def test_noise_source_aggregation_consistency():
    # a coarse source over two substeps equals aggregate_increments of the
    # fine source's functionals, key for cross-dt path coupling
    grid = build_grid(8, 8, 1.0, 1.0)
    op, _ = assemble_diffusion(grid, 1.0)
    basis = SpectralBasis(6, 1.0, 1.0)
    prob = Problem(grid=grid, operator=op, nonlinearity=lambda u: 0.0 * u,
                   noise_spec=NoiseSpec.power_law(1.0, 1.0, 6), basis=basis,
                   x0=np.zeros(64), D=1.0)
    rng = RngStream(5)
    delta = 0.05
    fine = NoiseSource(prob, rng, 2, delta, 1)
    coarse = NoiseSource(prob, rng, 2, delta, 2)
    rates = prob.noise_rates()
    for k in range(3):
        agg = aggregate_increments([fine.ou(2 * k), fine.ou(2 * k + 1)],
                                   rates, delta)
        assert np.max(np.abs(coarse.ou(k) - agg)) < 1e-14
        bw = aggregate_increments([fine.brownian(2 * k),
                                   fine.brownian(2 * k + 1)],
                                  np.zeros_like(rates), delta)
        assert np.max(np.abs(coarse.brownian(k) - bw)) < 1e-14


def test_exact_linear_reference_decay_and_coupling():
    grid = build_grid(17, 17, 1.0, 1.0)
    basis = SpectralBasis(10, 1.0, 1.0)
    op, _ = assemble_diffusion(grid, 1.0)
    c0 = np.zeros((10, 10))
    c0[2, 1] = 1.0
    x0 = synthesize(basis, c0, grid)
    # q = 0: pure decay against the closed form
    prob = Problem.linear_reaction(grid, op, 1.0, 1.0,
                                   NoiseSpec.power_law(1, 0.0, 10), basis, x0)
    ref = exact_linear_reference(prob, 0.125, 8, 0, RngStream(0))
    lam = 5 * np.pi ** 2
    np.testing.assert_allclose(ref, np.exp(-(lam + 1.0)) * x0, atol=1e-12)


def test_exact_reference_shares_path_with_scheme_noise():
    # lambda_reaction = 0: reference rates equal scheme rates, and the
    # reference's stochastic term must reproduce the scheme functional exactly
    grid = build_grid(17, 17, 1.0, 1.0)
    basis = SpectralBasis(10, 1.0, 1.0)
    op, _ = assemble_diffusion(grid, 1.0)
    prob = Problem.linear_reaction(grid, op, 1.0, 0.0,
                                   NoiseSpec.power_law(1.0, 1.0, 10), basis)
    rng = RngStream(9)
    ref_coeffs = analyze(basis,
                         exact_linear_reference(prob, 0.2, 1, 4, rng), grid)
    source = NoiseSource(prob, rng, 4, 0.2, 1)
    np.testing.assert_allclose(ref_coeffs, source.ou(0), atol=1e-12)


def test_exact_reference_mode_variance():
    # terminal variance of one mode matches the OU law within MC confidence
    grid = build_grid(9, 9, 1.0, 1.0)
    basis = SpectralBasis(4, 1.0, 1.0)
    op, _ = assemble_diffusion(grid, 1.0)
    prob = Problem.linear_reaction(grid, op, 1.0, 0.5,
                                   NoiseSpec.power_law(1.0, 1.0, 4), basis)
    rng = RngStream(31)
    from setd.schemes import linear_reference_with_path

    n = 3000
    samples = np.empty((n, 4, 4))
    for r in range(n):
        samples[r] = linear_reference_with_path(prob, 0.25, 4, r, rng)
    c = 1.0 * basis.eigenvalues() + 0.5
    q = q_matrix(prob.noise_spec, basis)
    target = q * (1 - np.exp(-2 * c)) / (2 * c)
    var = samples.var(axis=0, ddof=1)
    ci = 4 * np.sqrt(2.0 / n) * target
    mask = q > 0
    assert np.all(np.abs(var[mask] - target[mask]) <= ci[mask])


def test_guarded_reaction_finite_everywhere():
    u = np.array([-1.0, -1.0 + 1e-12, 0.0, 1e6, -2.0])
    out = guarded_reaction(u)
    assert np.all(np.isfinite(out))
    assert guarded_reaction(np.array([1.0]))[0] == pytest.approx(-0.5)


def test_lipschitz_spot_check_linear_reaction():
    lam = 1.3
    grid = build_grid(6, 6, 1.0, 1.0)
    basis = SpectralBasis(4, 1.0, 1.0)
    op, _ = assemble_diffusion(grid, 1.0)
    prob = Problem.linear_reaction(grid, op, 1.0, lam,
                                   NoiseSpec.power_law(1, 0.0, 4), basis)
    rng = np.random.default_rng(0)
    for _ in range(10):
        u, v = rng.standard_normal((2, 36))
        lhs = l2_norm(grid, prob.nonlinearity(u) - prob.nonlinearity(v))
        assert lhs <= lam * l2_norm(grid, u - v) + 1e-12


def test_integrate_wraps_step_failures_with_context():
    prob = scalar_problem()

    def bad(u):
        raise FloatingPointError("boom")

    prob.nonlinearity = bad
    cfg = SchemeConfig(SchemeKind.SETD1, 0.1, 3, DENSE)
    with pytest.raises(RuntimeError, match="SETD1 failed at step 0"):
        integrate(prob, cfg, 0, RngStream(0))


def test_scheme_config_validation():
    with pytest.raises(ValueError):
        SchemeConfig(SchemeKind.SETD1, 0.0, 5)
    with pytest.raises(ValueError):
        SchemeConfig(SchemeKind.SETD1, 0.1, -1)
    cfg = SchemeConfig(SchemeKind.SETD1, 0.1, 10)
    assert cfg.T == pytest.approx(1.0)
