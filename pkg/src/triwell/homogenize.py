"""Periodic-cell equilibria under a prescribed mean deformation gradient.

The placement is split as ``x = Fbar X + u`` with ``u`` a periodic
fluctuation, so the state at a point is ``(Fbar + grad u, grad grad u)``.
Equilibria are Newton solves of the static weak form with the three rigid
translations removed by pinning one control point.

Effective quantities per mean gradient: the mean Green-Lagrange strain from
``Fbar`` alone, the cell average of the first stress block (the
variationally consistent effective stress), its pull-back by ``Fbar``, and
the cell energy.  A face-traction integral of the strong-form traction is
provided as an independent cross-check; the two agree exactly for
translation-invariant (homogeneous) states and up to discretization error
otherwise.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .assembly import (
    ConstraintSet,
    NewtonConfig,
    _material,
    assemble_static,
    average_stress,
    integrate_psi,
    newton_solve,
)
from .errors import InvalidMeshError, LoadingError
from .splines import greville_interpolate, interpolate_field

# mean-strain direction used by the reference sweep
DEFAULT_LOADING_DIRECTION = np.array(
    [
        [0.040382, -0.004023, -0.004722],
        [-0.004023, -0.003081, 0.001542],
        [-0.004722, 0.001542, 0.001676],
    ]
)


@dataclass
class MacroLoading:
    """Sweep definition: direction matrix, eta grid, maximum increment."""

    D: np.ndarray = field(default_factory=lambda: DEFAULT_LOADING_DIRECTION.copy())
    eta_values: tuple = ()
    increment: float = 0.1

    def __post_init__(self):
        self.D = np.asarray(self.D, dtype=float).reshape(3, 3)
        etas = tuple(float(e) for e in self.eta_values)
        if sorted(etas) != list(etas):
            raise LoadingError("eta_values must be sorted ascending")
        if any(
            b - a > self.increment + 1e-12 for a, b in zip(etas, etas[1:])
        ):
            raise LoadingError(
                f"eta spacing exceeds the configured increment {self.increment}"
            )
        self.eta_values = etas

    def fbar(self, eta):
        return np.eye(3) + eta * self.D


@dataclass
class EtaRecord:
    eta: float
    Ebar: np.ndarray
    Sbar: np.ndarray
    Psibar: float
    newton_iters: int
    symmetry_gap: float


@dataclass
class EffectiveResponse:
    D: np.ndarray
    records: list = field(default_factory=list)


def mean_green_lagrange(Fbar):
    Fbar = np.asarray(Fbar, dtype=float)
    return 0.5 * (Fbar.T @ Fbar - np.eye(3))


def periodic_equilibrium(space, Fbar, u_start, params, ncfg=None, constraints=None):
    """Solve the static cell problem; returns (fluctuation field, iterations)."""
    if not space.periodic:
        raise InvalidMeshError("cell problems need a periodic space")
    ncfg = ncfg or NewtonConfig()
    constraints = constraints or ConstraintSet.pin_point(space)

    def builder(u, with_tangent=True):
        return assemble_static(
            space, u, params, constraints, Fbar=Fbar, with_tangent=with_tangent
        )

    return newton_solve(builder, u_start, ncfg, constraints)


def effective_stress(space, u, Fbar, params):
    """Volume-averaged first stress block and its pull-back by Fbar."""
    Fbar = np.asarray(Fbar, dtype=float)
    if abs(np.linalg.det(Fbar)) < 1e-12:
        raise LoadingError("mean deformation gradient is singular")
    Pbar, _ = average_stress(space, u, params, Fbar=Fbar)
    Sbar = np.linalg.solve(Fbar, Pbar)
    return Pbar, Sbar


def effective_energy(space, u, Fbar, params):
    return integrate_psi(space, u, params, Fbar=Fbar)


# ---------------------------------------------------------------------------
# face-traction cross-check
# ---------------------------------------------------------------------------
def _third_derivative_orders(M, N, J):
    o = [0, 0, 0]
    o[M] += 1
    o[N] += 1
    o[J] += 1
    return tuple(o)


def traction_average_stress(space, u, Fbar, params):
    """Effective stress from integrating the strong-form traction per face.

    Column J comes from the face X_J = 1.  Tangential surface-divergence
    contributions integrate to zero over a closed periodic face and are
    dropped analytically; what remains is the pointwise
    ``P_iJ - d_J B_iJJ`` (no sum over J), which requires third derivatives
    of the displacement.  Third derivatives of a quadratic spline vanish
    whenever one axis is differentiated three times, so only mixed terms
    survive.
    """
    space.check_field(u)
    model = _material(params)[0]
    Fbar = np.asarray(Fbar, dtype=float)
    Pbar = np.zeros((3, 3))
    for J in range(3):
        taxes = [a for a in range(3) if a != J]
        kvn = space.axes[J]
        f_first, f_tab = kvn.eval_at(1.0)
        nidx = kvn.dof_indices(f_first)

        # tangential quadrature grid
        ta, tb = taxes
        pts_a, w_a = space.qpoints[ta], space.qweights[ta]
        pts_b, w_b = space.qpoints[tb], space.qweights[tb]

        states = []
        thirds = []
        weights = []
        for ea in range(space.n_elements[ta]):
            for qa in range(space.nq):
                fa, tab_a = space.axes[ta].eval_at(pts_a[ea, qa])
                aidx = space.axes[ta].dof_indices(fa)
                for eb in range(space.n_elements[tb]):
                    for qb in range(space.nq):
                        fb, tab_b = space.axes[tb].eval_at(pts_b[eb, qb])
                        bidx = space.axes[tb].dof_indices(fb)
                        tabs = [None, None, None]
                        idxs = [None, None, None]
                        tabs[J], idxs[J] = f_tab, nidx
                        tabs[ta], idxs[ta] = tab_a, aidx
                        tabs[tb], idxs[tb] = tab_b, bidx
                        local = u[np.ix_(idxs[0], idxs[1], idxs[2])]

                        def deriv(orders):
                            if max(orders) > 2:
                                return np.zeros(3)
                            return np.einsum(
                                "a,b,c,abci->i",
                                tabs[0][:, orders[0]],
                                tabs[1][:, orders[1]],
                                tabs[2][:, orders[2]],
                                local,
                            )

                        grad = np.stack(
                            [deriv((1, 0, 0)), deriv((0, 1, 0)), deriv((0, 0, 1))],
                            axis=1,
                        )
                        hess = np.zeros((3, 3, 3))
                        for M in range(3):
                            for N in range(M, 3):
                                o = [0, 0, 0]
                                o[M] += 1
                                o[N] += 1
                                v = deriv(tuple(o))
                                hess[:, M, N] = v
                                hess[:, N, M] = v
                        third = np.zeros((3, 3, 3))  # u_{l,MNJ}
                        for M in range(3):
                            for N in range(M, 3):
                                v = deriv(_third_derivative_orders(M, N, J))
                                third[:, M, N] = v
                                third[:, N, M] = v
                        zeta = np.concatenate(
                            [(Fbar + grad).ravel(), hess.ravel()]
                        )
                        states.append(zeta)
                        thirds.append(third)
                        weights.append(w_a[ea, qa] * w_b[eb, qb])

        states = np.asarray(states)
        thirds = np.asarray(thirds)
        weights = np.asarray(weights)
        g = model.grad(states)
        H = model.hess(states)
        P_col = g[:, :9].reshape(-1, 3, 3)[:, :, J]
        # rows of the Hessian for the B_iJJ components
        rows = [9 + 9 * i + 3 * J + J for i in range(3)]
        HB = H[:, rows, :]  # (npts, 3, 36)
        gradF_J = states[:, 9:].reshape(-1, 3, 3, 3)[:, :, :, J]  # F_lM,J
        dJB = np.einsum("nim,nm->ni", HB[:, :, :9], gradF_J.reshape(-1, 9))
        dJB += np.einsum(
            "nim,nm->ni", HB[:, :, 9:], thirds.reshape(-1, 27)
        )
        Pbar[:, J] = np.einsum("n,ni->i", weights, P_col - dJB)
    return Pbar


# ---------------------------------------------------------------------------
# continuation sweep
# ---------------------------------------------------------------------------
def continuation_sweep(
    space, loading, params, ncfg=None, u_seed=None, constraints=None
):
    """Solve the cell problem along the eta grid with warm starts.

    The sweep walks outward from the values nearest zero in both
    directions, warm-starting each solve from its neighbour, and records
    the effective quantities per eta (sorted ascending on output).  Solver
    failures propagate with the partial response attached.
    """
    ncfg = ncfg or NewtonConfig()
    constraints = constraints or ConstraintSet.pin_point(space)
    if u_seed is None:
        u_seed = space.zero_field()
    etas = list(loading.eta_values)
    ups = sorted([e for e in etas if e >= 0.0])
    downs = sorted([e for e in etas if e < 0.0], reverse=True)

    response = EffectiveResponse(D=loading.D.copy())
    results = {}

    def solve_chain(chain):
        u = u_seed.copy()
        for eta in chain:
            Fbar = loading.fbar(eta)
            try:
                u, iters = periodic_equilibrium(
                    space, Fbar, u, params, ncfg, constraints
                )
            except Exception as err:
                err.partial_response = response
                err.eta = eta
                raise
            results[eta] = (u.copy(), iters)

    solve_chain(ups)
    solve_chain(downs)

    for eta in sorted(results):
        u, iters = results[eta]
        Fbar = loading.fbar(eta)
        Pbar, Sbar = effective_stress(space, u, Fbar, params)
        gap = np.abs(Sbar - Sbar.T).max() / max(1.0, np.abs(Sbar).max())
        response.records.append(
            EtaRecord(
                eta=eta,
                Ebar=mean_green_lagrange(Fbar),
                Sbar=Sbar,
                Psibar=effective_energy(space, u, Fbar, params),
                newton_iters=iters,
                symmetry_gap=float(gap),
            )
        )
    return response


def map_to_periodic(open_space, coeffs, periodic_space):
    """Carry a clamped-space field onto a periodic space by collocation.

    Samples the field at the periodic Greville points and interpolates; the
    seam then inherits whatever mismatch the source field has between
    opposite faces, which is small for interior-periodic relaxed states.
    """

    def values(points):
        return np.array(
            [interpolate_field(open_space, coeffs, p)[0] for p in points]
        )

    return greville_interpolate(periodic_space, values)
