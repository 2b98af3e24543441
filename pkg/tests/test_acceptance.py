"""Acceptance criteria for the desk-scale verification program.

Each test prints one PASS/FAIL line so the suite doubles as a report.  The
heavy relaxation runs share session fixtures; expect the full module to
take tens of minutes on one core (dominated by the timestep-refinement
study).
"""

import time

import numpy as np
import pytest

from conftest import random_states
from triwell.assembly import ConstraintSet, assemble, l2_norm
from triwell.dynamics import (
    DynamicsDriver,
    RunConfig,
    bump_initial_condition,
    run,
    temporal_convergence_study,
)
from triwell.errors import NonconvergenceError
from triwell.homogenize import (
    MacroLoading,
    continuation_sweep,
    effective_stress,
    traction_average_stress,
)
from triwell.integrators import (
    SchemeConfig,
    discrete_work,
    scheme_stress_batch,
)
from triwell.material import (
    MaterialParams,
    PolynomialEnergy,
    energy_model,
    nonconvex_part,
    well_points,
)
from triwell.splines import (
    greville_interpolate,
    interpolate_field,
    knot_insert,
    make_uniform_space,
)

pytestmark = pytest.mark.acceptance

PARAMS = MaterialParams()
MODEL = energy_model(PARAMS)


def report(number, ok, detail):
    print(f"\nACCEPTANCE {number}: {'PASS' if ok else 'FAIL'} - {detail}")
    return ok


# ---------------------------------------------------------------------------
# shared heavy runs
# ---------------------------------------------------------------------------
@pytest.fixture(scope="module")
def space8():
    return make_uniform_space(8)


@pytest.fixture(scope="module")
def ic8(space8):
    return bump_initial_condition(space8)


def _relax(space, ic, scheme, c, dt, t_end):
    cfg = RunConfig(
        dt=dt, t_end=t_end, scheme=scheme,
        dissipation_switch_threshold=0.0, steady_threshold=0.0,
    )
    return run(ic, cfg, space, PARAMS.with_damping(c))


@pytest.fixture(scope="module")
def run_c0_ts(space8, ic8):
    return _relax(space8, ic8, SchemeConfig.taylor_full(), 0.0, 1e-3, 0.1)


@pytest.fixture(scope="module")
def run_c1_ts(space8, ic8):
    return _relax(space8, ic8, SchemeConfig.taylor_full(), 1.0, 1e-3, 0.1)


@pytest.fixture(scope="module")
def run_c1_gs(space8, ic8):
    return _relax(space8, ic8, SchemeConfig.gonzalez(), 1.0, 1e-3, 0.1)


# ---------------------------------------------------------------------------
# criterion 1: discrete work identity at 1000 random states
# ---------------------------------------------------------------------------
def test_criterion_01_discrete_gradient_identity():
    rng = np.random.default_rng(2024)
    t0 = time.monotonic()
    zm = random_states(rng, 1000)
    dd = rng.uniform(-0.05, 0.05, (1000, 36))
    psi_p, psi_m = MODEL.psi(zm + dd), MODEL.psi(zm)
    scale = np.maximum(1.0, np.maximum(np.abs(psi_p), np.abs(psi_m)))
    worst = 0.0
    for cfg in (SchemeConfig.gonzalez(), SchemeConfig.taylor_full()):
        S = scheme_stress_batch(zm, dd, MODEL, cfg)
        gap = np.abs(discrete_work(S, dd) - (psi_p - psi_m)) / scale
        worst = max(worst, gap.max())
    elapsed = time.monotonic() - t0
    ok = worst <= 1e-12 and elapsed < 10.0
    assert report(
        1, ok,
        f"work identity, 1000 states, both schemes: max rel gap "
        f"{worst:.2e} (tol 1e-12), {elapsed:.1f}s",
    )


# ---------------------------------------------------------------------------
# criterion 2: unit well depth
# ---------------------------------------------------------------------------
def test_criterion_02_well_depth():
    worst = max(
        abs(nonconvex_part(e2, e3, PARAMS) + 1.0)
        for e2, e3 in well_points(PARAMS).values()
    )
    assert report(
        2, worst <= 1e-14,
        f"non-convex landscape is -1 at the three wells: max dev {worst:.2e}",
    )


# ---------------------------------------------------------------------------
# criterion 3: polynomial expansion equivalence
# ---------------------------------------------------------------------------
def test_criterion_03_polynomial_equivalence(psi_poly):
    rng = np.random.default_rng(3)
    zeta = random_states(rng, 1000)
    pe = PolynomialEnergy(psi_poly)
    a, b = MODEL.psi(zeta), pe.psi(zeta)
    gap_psi = np.abs(a - b).max() / max(1.0, np.abs(a).max())
    ga, gb = MODEL.grad(zeta), pe.grad(zeta)
    gap_g = np.abs(ga - gb).max() / max(1.0, np.abs(ga).max())
    ok = gap_psi <= 1e-12 and gap_g <= 1e-10
    assert report(
        3, ok,
        f"density {gap_psi:.2e} (tol 1e-12), stresses {gap_g:.2e} (tol 1e-10) "
        f"at 1000 states",
    )


# ---------------------------------------------------------------------------
# criterion 4: assembled tangent symmetry at 8^3
# ---------------------------------------------------------------------------
def test_criterion_04_tangent_symmetry(space8):
    t0 = time.monotonic()
    cons = ConstraintSet.dirichlet_boundary(space8)
    rng = np.random.default_rng(4)

    def field():
        f = 1e-2 * rng.normal(size=space8.dofs_per_axis + (3,))
        f[cons.mask] = 0.0
        return f

    u_nm1, u_n, u_np1 = field(), field(), field()
    gaps = {}
    for kind in ("taylor_full", "taylor_reduced", "gonzalez"):
        system = assemble(
            space8, u_nm1, u_n, u_np1, PARAMS, SchemeConfig(kind=kind),
            1e-3, cons,
        )
        K = system.tangent
        gaps[kind] = abs(K - K.T).max() / abs(K).max()
    elapsed = time.monotonic() - t0
    ok = (
        gaps["taylor_full"] <= 1e-10
        and gaps["taylor_reduced"] <= 1e-10
        and gaps["gonzalez"] > 1e-10
        and elapsed < 120.0
    )
    assert report(
        4, ok,
        f"series tangents symmetric (full {gaps['taylor_full']:.2e}, "
        f"reduced {gaps['taylor_reduced']:.2e}, tol 1e-10); midpoint scheme "
        f"non-symmetric ({gaps['gonzalez']:.2e}); {elapsed:.0f}s",
    )


# ---------------------------------------------------------------------------
# criteria 5 and 6: conservation and dissipation balance over 100 steps
# ---------------------------------------------------------------------------
def test_criterion_05_energy_conservation(run_c0_ts):
    ledger = run_c0_ts.ledger
    assert len(ledger.records) == 100
    bound = 100 * max(r.balance_tol for r in ledger.records)
    drift = abs(ledger.total_drift)
    assert report(
        5, drift <= bound,
        f"undamped total-energy drift over 100 steps: {drift:.2e} "
        f"(bound {bound:.2e})",
    )


def test_criterion_06_dissipation_balance(run_c1_ts, run_c1_gs):
    worst = 0.0
    for result in (run_c1_ts, run_c1_gs):
        assert len(result.ledger.records) == 100
        for r in result.ledger.records:
            worst = max(worst, abs(r.balance_gap) / r.balance_tol)
            assert r.total <= result.ledger.initial.total + 1e-15
    assert report(
        6, worst <= 1.0,
        f"per-step balance gap within tolerance for both schemes "
        f"(worst gap/tol {worst:.2e} over 200 damped steps)",
    )


# ---------------------------------------------------------------------------
# criterion 7: second-order temporal convergence for all three schemes
# ---------------------------------------------------------------------------
@pytest.fixture(scope="module")
def reference_midpoint(space8, ic8):
    driver = DynamicsDriver(
        space8, PARAMS.with_damping(1.0), SchemeConfig.taylor_full()
    )
    from triwell.dynamics import _midpoint_at

    return _midpoint_at(driver, ic8, 2.5e-5, 0.01)


@pytest.mark.slow
def test_criterion_07_temporal_convergence(space8, ic8, reference_midpoint):
    dts = [4e-4, 2e-4, 1e-4]
    slopes = {}
    for kind in ("taylor_full", "gonzalez", "taylor_reduced"):
        scheme = SchemeConfig(
            kind=kind, kappa_F_max=4 if kind == "taylor_reduced" else 8
        )
        result = temporal_convergence_study(
            space8, PARAMS.with_damping(1.0), scheme, ic8,
            dts, 2.5e-5, 0.01, reference_midpoint=reference_midpoint,
        )
        slopes[kind] = result.slope
        print(f"  {kind}: errors {[f'{e:.3e}' for _, e in result.rows]} "
              f"slope {result.slope:.3f}")
    ok = all(1.8 <= s <= 2.2 for s in slopes.values())
    assert report(
        7, ok,
        "log-log slopes "
        + ", ".join(f"{k}={v:.2f}" for k, v in slopes.items())
        + " (window [1.8, 2.2])",
    )


# ---------------------------------------------------------------------------
# criterion 8: reduced-vs-full solution gap ratio under halved timestep
# ---------------------------------------------------------------------------
@pytest.mark.slow
def test_criterion_08_reduced_full_gap_ratio():
    # stated expectation: the gap at fixed time scales as O(dt^2), i.e.
    # halving dt divides it by about 4.  The capped scheme retains every
    # series term with up to four F-derivatives, so the leading omitted
    # stress term carries four increment factors and the measured gap
    # scales as dt^4 (ratio near 16); the window below is asserted as
    # specified and the measured ratio is reported either way.
    space = make_uniform_space(4)
    ic = bump_initial_condition(space, amplitude=0.1)
    t_end = 0.02
    gaps = {}
    for dt in (1e-3, 5e-4):
        mids = {}
        for kind in ("taylor_full", "taylor_reduced"):
            scheme = SchemeConfig(
                kind=kind, kappa_F_max=4 if kind == "taylor_reduced" else 8
            )
            cfg = RunConfig(dt=dt, t_end=t_end, scheme=scheme,
                            dissipation_switch_threshold=0.0,
                            steady_threshold=0.0)
            mids[kind] = run(ic, cfg, space, PARAMS.with_damping(1.0)).states.midpoint
        gaps[dt] = l2_norm(space, mids["taylor_full"] - mids["taylor_reduced"])
    ratio = gaps[1e-3] / gaps[5e-4]
    ok = 3.0 <= ratio <= 5.0
    assert report(
        8, ok,
        f"gap(dt)/gap(dt/2) = {ratio:.2f} with gaps "
        f"{gaps[1e-3]:.3e} / {gaps[5e-4]:.3e} (stated window [3, 5]; "
        f"the retained fourth-order terms make the true ratio ~16)",
    )


# ---------------------------------------------------------------------------
# criterion 9: Newton iteration behavior across timesteps
# ---------------------------------------------------------------------------
@pytest.mark.slow
def test_criterion_09_newton_iterations(space8, ic8):
    small_dt = 1.25e-4
    histograms = {}
    for kind in ("gonzalez", "taylor_full", "taylor_reduced"):
        scheme = SchemeConfig(
            kind=kind, kappa_F_max=4 if kind == "taylor_reduced" else 8
        )
        result = _relax(space8, ic8, scheme, 1.0, small_dt, 16 * small_dt)
        histograms[kind] = result.ledger.iteration_histogram()
    small_ok = all(max(h) <= 3 for h in histograms.values())

    big_notes = []
    ts_big = _relax(space8, ic8, SchemeConfig.taylor_full(), 1.0, 1e-3, 0.01)
    ts_hist = ts_big.ledger.iteration_histogram()
    big_notes.append(f"series at 8x dt converged, iters {dict(ts_hist)}")
    try:
        gs_big = _relax(space8, ic8, SchemeConfig.gonzalez(), 1.0, 1e-3, 0.01)
        gs_hist = gs_big.ledger.iteration_histogram()
        big_notes.append(f"midpoint at 8x dt converged, iters {dict(gs_hist)}")
        gs_max = max(gs_hist)
    except NonconvergenceError as err:
        big_notes.append(f"midpoint at 8x dt failed at step {err.step}")
        gs_max = None
    ok = small_ok and max(ts_hist) <= 25
    assert report(
        9, ok,
        f"small-dt iteration counts {[dict(h) for h in histograms.values()]} "
        f"(all <= 3); " + "; ".join(big_notes),
    )


# ---------------------------------------------------------------------------
# criterion 10: periodic-cell effective quantities
# ---------------------------------------------------------------------------
@pytest.mark.slow
def test_criterion_10_homogenization():
    cell = make_uniform_space(8, periodic=True)
    etas = tuple(np.round(np.arange(-0.2, 0.201, 0.1), 10))
    loading = MacroLoading(eta_values=etas)
    response = continuation_sweep(cell, loading, PARAMS)
    worst_sym = 0.0
    worst_hill = 0.0
    for rec in response.records:
        assert np.abs(rec.Ebar - rec.Ebar.T).max() == 0.0
        worst_sym = max(worst_sym, rec.symmetry_gap)
        Fbar = loading.fbar(rec.eta)
        P_vol, _ = effective_stress(cell, cell.zero_field(), Fbar, PARAMS)
        P_tr = traction_average_stress(cell, cell.zero_field(), Fbar, PARAMS)
        hill = np.abs(P_vol - P_tr).max() / max(1.0, np.abs(P_vol).max())
        worst_hill = max(worst_hill, hill)
    ok = worst_sym <= 1e-8 and worst_hill <= 1e-8
    assert report(
        10, ok,
        f"mean strain exactly symmetric; pulled-back stress symmetry "
        f"{worst_sym:.2e} and volume-vs-traction agreement {worst_hill:.2e} "
        f"(tol 1e-8) over {len(response.records)} mean gradients",
    )


# ---------------------------------------------------------------------------
# criterion 11: spline layer identities
# ---------------------------------------------------------------------------
def test_criterion_11_spline_layer():
    t0 = time.monotonic()
    rng = np.random.default_rng(11)
    space = make_uniform_space(4)
    worst_pu = 0.0
    for X in rng.random((1000, 3)):
        items = space.eval_basis(X)
        worst_pu = max(worst_pu, abs(sum(v for _, v, _, _ in items) - 1.0))

    coeffs = greville_interpolate(
        space, lambda P: 0.2 + 0.8 * P - 0.5 * P**2
    )
    worst_quad = 0.0
    for X in rng.random((100, 3)):
        u = interpolate_field(space, coeffs, X)[0]
        expect = 0.2 + 0.8 * X - 0.5 * X**2
        worst_quad = max(worst_quad, np.abs(u - expect).max())

    fine = make_uniform_space(8)
    field = rng.normal(size=space.dofs_per_axis + (3,))
    inserted = knot_insert(space, field, fine)
    worst_ins = 0.0
    for X in rng.random((100, 3)):
        a = interpolate_field(space, field, X)[0]
        b = interpolate_field(fine, inserted, X)[0]
        worst_ins = max(worst_ins, np.abs(a - b).max())
    elapsed = time.monotonic() - t0
    ok = (
        worst_pu <= 1e-12 and worst_quad <= 1e-12 and worst_ins <= 1e-13
        and elapsed < 10.0
    )
    assert report(
        11, ok,
        f"partition of unity {worst_pu:.2e}, quadratic reproduction "
        f"{worst_quad:.2e} (tol 1e-12), insertion preservation "
        f"{worst_ins:.2e} (tol 1e-13), {elapsed:.1f}s",
    )
