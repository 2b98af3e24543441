import numpy as np
import pytest
import scipy.sparse as sp

from triwell.assembly import (
    ConstraintSet,
    NewtonConfig,
    assemble,
    average_stress,
    integrate_dot,
    integrate_psi,
    l2_norm,
    linear_solve,
    newton_solve,
)
from triwell.errors import LinearSolveError, NonconvergenceError
from triwell.integrators import (
    HalfStepStates,
    SchemeConfig,
    gonzalez_stresses,
    kinematic_stencils,
)
from triwell.material import (
    NZETA,
    PolynomialEnergy,
    QuadState,
    zeta_index_F,
)
from triwell.polynomial import SparsePolynomial
from triwell.splines import gauss_legendre_01, make_uniform_space


def toy_isotropic_quadratic():
    """Convex quadratic density: sum over displacement-gradient entries."""
    poly = SparsePolynomial(NZETA)
    for i in range(3):
        for J in range(3):
            x = SparsePolynomial.variable(zeta_index_F(i, J), NZETA)
            if i == J:
                x = x - 1.0
            poly = poly + x * x
    return PolynomialEnergy(poly)


def small_field(space, cons, rng, scale=1e-2):
    f = scale * rng.normal(size=space.dofs_per_axis + (3,))
    f[cons.mask] = cons.values[cons.mask]
    return f


# ---------------------------------------------------------------------------
# constraints
# ---------------------------------------------------------------------------
def test_boundary_constraints_count(space4):
    cons = ConstraintSet.dirichlet_boundary(space4)
    d = space4.dofs_per_axis[0]
    interior = (d - 2) ** 3
    assert cons.n_free == interior * 3
    assert len(cons.fixed_dofs) == (d**3 - interior) * 3


def test_pin_point(space4):
    cons = ConstraintSet.pin_point(space4, (1, 2, 1))
    assert cons.n_free == space4.n_control_points * 3 - 3


def test_constraints_apply(space4):
    cons = ConstraintSet.dirichlet_boundary(space4, value=0.0)
    field = np.ones(space4.dofs_per_axis + (3,))
    out = cons.apply(field)
    assert out[0, 0, 0, 0] == 0.0 and out[2, 2, 2, 1] == 1.0


# ---------------------------------------------------------------------------
# assembly against the independent quadrature oracle
# ---------------------------------------------------------------------------
def test_residual_zero_at_rest(space3, params):
    cons = ConstraintSet.dirichlet_boundary(space3)
    z = space3.zero_field()
    system = assemble(
        space3, z, z, z, params, SchemeConfig.taylor_full(), 1e-3, cons
    )
    assert system.residual_norm == 0.0


def oracle_residual(space, u_nm1, u_n, u_np1, model, cfg, dt, rho, c):
    """Slow reference: per-point fields via eval_basis, per-point stresses
    via the single-point scheme API, explicit Gauss loops."""
    from triwell.splines import interpolate_field

    n = space.n_elements[0]
    xg, wg = gauss_legendre_01(space.nq)
    d = space.dofs_per_axis
    R = np.zeros(d + (3,))
    for e1 in range(n):
        for e2 in range(n):
            for e3 in range(n):
                for q1, x1 in enumerate(xg):
                    for q2, x2 in enumerate(xg):
                        for q3, x3 in enumerate(xg):
                            X = np.array(
                                [(e1 + x1) / n, (e2 + x2) / n, (e3 + x3) / n]
                            )
                            w = wg[q1] * wg[q2] * wg[q3] / n**3
                            um, gm, hm = interpolate_field(
                                space, 0.5 * (u_n + u_nm1), X
                            )
                            ud, gd, hd = interpolate_field(
                                space, 0.5 * (u_np1 - u_nm1), X
                            )
                            zm = QuadState(np.eye(3) + gm, hm)
                            h = HalfStepStates.from_delta(zm, gd, hd)
                            s = gonzalez_stresses(h, model, cfg)
                            accel, veloc = kinematic_stencils(
                                interpolate_field(space, u_nm1, X)[0],
                                interpolate_field(space, u_n, X)[0],
                                interpolate_field(space, u_np1, X)[0],
                                dt,
                            )
                            for idx, val, grad, hess in space.eval_basis(X):
                                R[idx] += w * (
                                    val * (rho * accel + c * veloc)
                                    + np.einsum("iJ,J->i", s.P, grad)
                                    + np.einsum("iJK,JK->i", s.B, hess)
                                )
    return R.reshape(-1)


def test_assembly_matches_dense_quadrature_oracle(rng):
    # smallest admissible mesh, no constraints, quadratic toy density:
    # the vectorized assembly must agree with the pointwise oracle
    space = make_uniform_space(2)
    cons = ConstraintSet.none(space)
    toy = toy_isotropic_quadratic()
    rho, c, dt = 1.0, 0.0, 1e-2
    f = lambda: 5e-2 * rng.normal(size=space.dofs_per_axis + (3,))
    u_nm1, u_n, u_np1 = f(), f(), f()
    cfg = SchemeConfig.gonzalez()

    system = assemble(space, u_nm1, u_n, u_np1, ToyWrap(toy, rho, c), cfg, dt, cons)
    expect = oracle_residual(space, u_nm1, u_n, u_np1, toy, cfg, dt, rho, c)
    assert np.abs(system.residual - expect).max() <= 1e-12 * max(
        1.0, np.abs(expect).max()
    )


class ToyWrap:
    """Material-parameter stand-in carrying an explicit energy model."""

    def __init__(self, model, rho, c):
        self.model = model
        self.rho = rho
        self.c = c


def test_tangent_matches_finite_differences(space3, params, rng):
    cons = ConstraintSet.dirichlet_boundary(space3)
    u_nm1 = small_field(space3, cons, rng)
    u_n = small_field(space3, cons, rng)
    u_np1 = small_field(space3, cons, rng)
    h = 1e-7
    for kind in ("taylor_full", "taylor_reduced", "gonzalez"):
        cfg = SchemeConfig(kind=kind)
        system = assemble(space3, u_nm1, u_n, u_np1, params, cfg, 1e-3, cons)
        K = system.tangent.toarray()
        for j in rng.choice(cons.n_free, size=4, replace=False):
            up, um = u_np1.copy(), u_np1.copy()
            up.reshape(-1)[cons.free_ids[j]] += h
            um.reshape(-1)[cons.free_ids[j]] -= h
            rp = assemble(space3, u_nm1, u_n, up, params, cfg, 1e-3, cons,
                          with_tangent=False).residual
            rm = assemble(space3, u_nm1, u_n, um, params, cfg, 1e-3, cons,
                          with_tangent=False).residual
            fd = (rp - rm) / (2 * h)
            assert np.abs(K[:, j] - fd).max() <= 1e-5 * np.abs(K).max()


def test_series_tangent_symmetric_assembled(space3, params, rng):
    cons = ConstraintSet.dirichlet_boundary(space3)
    u_nm1 = small_field(space3, cons, rng)
    u_n = small_field(space3, cons, rng)
    u_np1 = small_field(space3, cons, rng)
    for kind in ("taylor_full", "taylor_reduced"):
        system = assemble(
            space3, u_nm1, u_n, u_np1, params, SchemeConfig(kind=kind), 1e-3, cons
        )
        K = system.tangent
        gap = abs(K - K.T).max()
        assert system.symmetric
        assert gap <= 1e-10 * abs(K).max()


def test_gonzalez_assembled_not_symmetric(space3, params, rng):
    cons = ConstraintSet.dirichlet_boundary(space3)
    u_nm1 = small_field(space3, cons, rng)
    u_n = small_field(space3, cons, rng)
    u_np1 = small_field(space3, cons, rng)
    system = assemble(
        space3, u_nm1, u_n, u_np1, params, SchemeConfig.gonzalez(), 1e-3, cons
    )
    assert not system.symmetric
    assert abs(system.tangent - system.tangent.T).max() > 0.0


def test_assembly_deterministic(space3, params, rng):
    cons = ConstraintSet.dirichlet_boundary(space3)
    u_nm1 = small_field(space3, cons, rng)
    u_n = small_field(space3, cons, rng)
    u_np1 = small_field(space3, cons, rng)
    cfg = SchemeConfig.taylor_full()
    a = assemble(space3, u_nm1, u_n, u_np1, params, cfg, 1e-3, cons)
    b = assemble(space3, u_nm1, u_n, u_np1, params, cfg, 1e-3, cons)
    assert np.array_equal(a.residual, b.residual)
    assert np.array_equal(a.tangent.data, b.tangent.data)


def test_dimension_mismatch_rejected(space3, space4, params):
    cons = ConstraintSet.dirichlet_boundary(space3)
    z3, z4 = space3.zero_field(), space4.zero_field()
    from triwell.errors import AssemblyError

    with pytest.raises(AssemblyError):
        assemble(space3, z3, z4, z3, params, SchemeConfig.taylor_full(), 1e-3, cons)
    with pytest.raises(AssemblyError):
        assemble(space3, z3, z3, z3, params, SchemeConfig.taylor_full(), 0.0, cons)


# ---------------------------------------------------------------------------
# linear solver
# ---------------------------------------------------------------------------
def test_linear_solve_identity(rng):
    A = sp.identity(10, format="csr")
    b = rng.normal(size=10)
    assert np.abs(linear_solve(A, b) - b).max() <= 1e-14


def test_linear_solve_2x2_hand_value():
    A = sp.csr_matrix(np.array([[2.0, 1.0], [1.0, 2.0]]))
    x = linear_solve(A, np.array([1.0, 1.0]), symmetric=True)
    assert np.abs(x - np.array([1.0 / 3.0, 1.0 / 3.0])).max() <= 1e-14


def test_linear_solve_laplacian_against_dense(rng):
    n = 60
    main = 2.0 * np.ones(n)
    off = -1.0 * np.ones(n - 1)
    A = sp.diags([off, main, off], [-1, 0, 1], format="csr")
    b = rng.normal(size=n)
    dense = np.linalg.solve(A.toarray(), b)
    for method in ("direct", "minres", "cg"):
        x = linear_solve(A, b, symmetric=True, method=method)
        assert np.abs(x - dense).max() <= 1e-10 * max(1.0, np.abs(dense).max())


def test_iterative_requires_symmetric_flag(rng):
    A = sp.csr_matrix(np.array([[2.0, 1.0], [0.0, 2.0]]))
    with pytest.raises(LinearSolveError):
        linear_solve(A, np.ones(2), symmetric=False, method="minres")


def test_linear_solve_zero_rhs():
    A = sp.identity(4, format="csr")
    assert np.all(linear_solve(A, np.zeros(4)) == 0.0)


# ---------------------------------------------------------------------------
# Newton
# ---------------------------------------------------------------------------
def _step_builder(space, cons, params, cfg, dt, u_nm1, u_n):
    def builder(u, with_tangent=True):
        return assemble(space, u_nm1, u_n, u, params, cfg, dt, cons,
                        with_tangent=with_tangent)

    return builder


def test_newton_zero_iterations_at_solution(space3, params):
    cons = ConstraintSet.dirichlet_boundary(space3)
    z = space3.zero_field()
    builder = _step_builder(
        space3, cons, params, SchemeConfig.taylor_full(), 1e-3, z, z
    )
    u, iters = newton_solve(builder, z, NewtonConfig(), cons)
    assert iters == 0 and np.all(u == 0.0)


def test_newton_single_iteration_on_linear_problem(rng):
    # quadratic toy density: the step equations are linear in the unknown
    space = make_uniform_space(3)
    cons = ConstraintSet.dirichlet_boundary(space)
    toy = ToyWrap(toy_isotropic_quadratic(), 1.0, 0.0)
    u_nm1 = small_field(space, cons, rng)
    u_n = small_field(space, cons, rng)
    builder = _step_builder(space, cons, toy, SchemeConfig.taylor_full(), 1e-2,
                            u_nm1, u_n)
    u, iters = newton_solve(builder, u_n.copy(), NewtonConfig(), cons)
    assert iters == 1
    assert builder(u, with_tangent=False).residual_norm <= 1e-10


def test_newton_respects_fixed_values(space3, params, rng):
    cons = ConstraintSet.dirichlet_boundary(space3)
    u_nm1 = small_field(space3, cons, rng)
    u_n = small_field(space3, cons, rng)
    builder = _step_builder(space3, cons, params, SchemeConfig.taylor_full(),
                            1e-3, u_nm1, u_n)
    u, _ = newton_solve(builder, u_n.copy(), NewtonConfig(), cons)
    assert np.all(u[cons.mask] == cons.values[cons.mask])


def test_newton_nonconvergence_error(space3, params, rng):
    cons = ConstraintSet.dirichlet_boundary(space3)
    u_nm1 = small_field(space3, cons, rng, scale=0.1)
    u_n = small_field(space3, cons, rng, scale=0.1)
    builder = _step_builder(space3, cons, params, SchemeConfig.gonzalez(),
                            1e-3, u_nm1, u_n)
    with pytest.raises(NonconvergenceError) as err:
        newton_solve(builder, u_n.copy(), NewtonConfig(max_iters=1,
                                                       residual_tol=1e-14), cons)
    assert err.value.residual_norm > 0


# ---------------------------------------------------------------------------
# quadrature integrals
# ---------------------------------------------------------------------------
def test_integrate_dot_constant_field(space3):
    f = np.ones(space3.dofs_per_axis + (3,))
    # partition of unity: the field is identically (1,1,1); |u|^2 = 3
    assert abs(integrate_dot(space3, f, f) - 3.0) <= 1e-12


def test_l2_norm_zero(space3):
    assert l2_norm(space3, space3.zero_field()) == 0.0


def test_integrate_psi_zero_at_rest(space3, params):
    assert integrate_psi(space3, space3.zero_field(), params) == 0.0


def test_average_stress_homogeneous(params, model):
    space = make_uniform_space(2, periodic=True)
    Fbar = np.eye(3) + 0.02 * np.eye(3)
    P, B = average_stress(space, space.zero_field(), params, Fbar=Fbar)
    z = np.concatenate([Fbar.ravel(), np.zeros(27)])[None]
    expect = model.grad(z)[0]
    assert np.abs(P.ravel() - expect[:9]).max() <= 1e-12 * max(
        1.0, np.abs(expect).max()
    )
    assert np.abs(B).max() <= 1e-14
