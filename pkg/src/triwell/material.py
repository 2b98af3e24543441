"""Three-well free energy for cubic-to-tetragonal transformations.

The energy density is a polynomial in the 36 state variables: the nine
deformation-gradient components F_iJ and the 27 components of its spatial
gradient F_iJ,K.  It combines a non-convex local part, expressed through
symmetry-adapted strain measures e_1..e_6 built from the Green-Lagrange
tensor, with an interface-penalty part quadratic in the spatial gradients
of e_2 and e_3.

Two equivalent evaluation routes are provided:

* :class:`ThreeWellEnergy` -- closed-form, vectorized over batches of
  states; used by assembly (values, first and second derivatives).
* :func:`build_psi_polynomial` -- exact expansion into monomials of the 36
  state variables via symbolic composition; the independent route used to
  cross-check the closed forms and to drive the series-based integrator
  tests.

State-variable ordering (index into the length-36 vector ``zeta``):
``3*i + J`` for F_iJ and ``9 + 9*i + 3*J + K`` for F_iJ,K, all 0-based.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .polynomial import SparsePolynomial

NZETA = 36

SQRT2 = np.sqrt(2.0)
SQRT3 = np.sqrt(3.0)
SQRT6 = np.sqrt(6.0)

# d e_s / d E as constant symmetric matrices, rows s = 1..6
STRAIN_MAPS = np.zeros((6, 3, 3))
STRAIN_MAPS[0] = np.eye(3) / SQRT3
STRAIN_MAPS[1] = np.diag([1.0, -1.0, 0.0]) / SQRT2
STRAIN_MAPS[2] = np.diag([1.0, 1.0, -2.0]) / SQRT6
STRAIN_MAPS[3][1, 2] = STRAIN_MAPS[3][2, 1] = 0.5
STRAIN_MAPS[4][0, 2] = STRAIN_MAPS[4][2, 0] = 0.5
STRAIN_MAPS[5][0, 1] = STRAIN_MAPS[5][1, 0] = 0.5


@dataclass(frozen=True)
class MaterialParams:
    """Energy coefficients, length scale, well radius, density and damping.

    Defaults reproduce the reference parameter set used throughout the
    package: wells of unit depth at radius ``r`` in the (e2, e3) plane.
    """

    B1: float = 500.0
    B2: float = -1.5 / 0.25**2
    B3: float = 1.0 / 0.25**3
    B4: float = 1.5 / 0.25**4
    B5: float = 250.0
    l: float = 0.025
    r: float = 0.25
    rho: float = 1.0
    c: float = 1.0

    def __post_init__(self):
        if self.B1 <= 0 or self.B4 <= 0 or self.B5 <= 0:
            raise ValueError("B1, B4 and B5 must be positive")
        if self.rho <= 0:
            raise ValueError("density must be positive")
        if self.c < 0:
            raise ValueError("damping must be non-negative")
        if self.l <= 0 or self.r <= 0:
            raise ValueError("length scale and well radius must be positive")

    def with_damping(self, c):
        return MaterialParams(
            self.B1, self.B2, self.B3, self.B4, self.B5,
            self.l, self.r, self.rho, c,
        )


def well_points(params):
    """The three (e2, e3) well locations, keyed by variant label."""
    r = params.r
    return {
        "X": (np.sqrt(3.0) / 2.0 * r, 0.5 * r),
        "Y": (-np.sqrt(3.0) / 2.0 * r, 0.5 * r),
        "Z": (0.0, -r),
    }


@dataclass
class QuadState:
    """Deformation gradient and its spatial gradient at one material point."""

    F: np.ndarray
    gradF: np.ndarray

    def __post_init__(self):
        self.F = np.asarray(self.F, dtype=float).reshape(3, 3)
        self.gradF = np.asarray(self.gradF, dtype=float).reshape(3, 3, 3)

    @classmethod
    def reference(cls):
        return cls(np.eye(3), np.zeros((3, 3, 3)))

    @classmethod
    def from_zeta(cls, zeta):
        zeta = np.asarray(zeta, dtype=float)
        return cls(zeta[:9].reshape(3, 3), zeta[9:].reshape(3, 3, 3))

    def zeta(self):
        return np.concatenate([self.F.ravel(), self.gradF.ravel()])


@dataclass
class StressPair:
    """Work conjugates of (F, gradF): P_iJ and the third-order B_iJK."""

    P: np.ndarray
    B: np.ndarray

    @classmethod
    def from_vector(cls, vec):
        vec = np.asarray(vec, dtype=float)
        return cls(vec[:9].reshape(3, 3), vec[9:].reshape(3, 3, 3))

    def vector(self):
        return np.concatenate([self.P.ravel(), self.B.ravel()])


# ---------------------------------------------------------------------------
# kinematics
# ---------------------------------------------------------------------------
def green_lagrange(F):
    """E = (F^T F - I) / 2."""
    F = np.asarray(F, dtype=float)
    return 0.5 * (F.T @ F - np.eye(3))


def grad_green_lagrange(F, gradF):
    """E_IJ,K = (F_mI,K F_mJ + F_mI F_mJ,K) / 2."""
    return 0.5 * (
        np.einsum("mIK,mJ->IJK", gradF, F) + np.einsum("mI,mJK->IJK", F, gradF)
    )


def reparam_strains(E, gradE=None):
    """Symmetry-adapted strains e_1..e_6 and the gradients of e_2, e_3.

    Returns ``(e, grad_e2, grad_e3)`` with shapes (6,), (3,), (3,).  When
    ``gradE`` is omitted the gradient entries are zero.
    """
    E = np.asarray(E, dtype=float)
    e = np.einsum("sIJ,IJ->s", STRAIN_MAPS, E)
    if gradE is None:
        return e, np.zeros(3), np.zeros(3)
    grad_e2 = np.einsum("IJ,IJK->K", STRAIN_MAPS[1], gradE)
    grad_e3 = np.einsum("IJ,IJK->K", STRAIN_MAPS[2], gradE)
    return e, grad_e2, grad_e3


# ---------------------------------------------------------------------------
# local (strain-space) energy and phase classification
# ---------------------------------------------------------------------------
def nonconvex_part(e2, e3, params):
    """The non-convex landscape in the (e2, e3) plane; -1 at each well."""
    rr = np.asarray(e2) ** 2 + np.asarray(e3) ** 2
    return params.B2 * rr + params.B3 * e3 * (e3**2 - 3 * e2**2) + params.B4 * rr**2


def local_energy(e, params):
    """Local part of the density as a function of e_1..e_6 (batched)."""
    e = np.asarray(e, dtype=float)
    e1, e2, e3 = e[..., 0], e[..., 1], e[..., 2]
    shear = e[..., 3] ** 2 + e[..., 4] ** 2 + e[..., 5] ** 2
    return params.B1 * e1**2 + nonconvex_part(e2, e3, params) + params.B5 * shear


def local_energy_grad(e, params):
    """d(local energy)/d e_s, batched over leading axes."""
    e = np.asarray(e, dtype=float)
    g = np.empty_like(e)
    e1, e2, e3 = e[..., 0], e[..., 1], e[..., 2]
    rr = e2**2 + e3**2
    g[..., 0] = 2 * params.B1 * e1
    g[..., 1] = 2 * params.B2 * e2 - 6 * params.B3 * e2 * e3 + 4 * params.B4 * e2 * rr
    g[..., 2] = (
        2 * params.B2 * e3
        + 3 * params.B3 * (e3**2 - e2**2)
        + 4 * params.B4 * e3 * rr
    )
    g[..., 3:] = 2 * params.B5 * e[..., 3:]
    return g


def classify_phase(e2, e3, params):
    """Assign a strain pair to a tetragonal variant or to no variant.

    A point belongs to a well when the non-convex landscape there is below
    -0.5; it is then labelled by the nearest well point.
    """
    if nonconvex_part(e2, e3, params) >= -0.5:
        return "none"
    wells = well_points(params)
    dists = {
        lab: (e2 - w[0]) ** 2 + (e3 - w[1]) ** 2 for lab, w in wells.items()
    }
    return min(dists, key=dists.get)


def classify_phase_batch(e2, e3, params):
    """Vectorized variant labels; returns an array of strings."""
    e2 = np.asarray(e2, dtype=float)
    e3 = np.asarray(e3, dtype=float)
    labels = np.array(["X", "Y", "Z"])
    wells = well_points(params)
    pts = np.array([wells[lab] for lab in labels])
    d = (e2[..., None] - pts[:, 0]) ** 2 + (e3[..., None] - pts[:, 1]) ** 2
    out = labels[np.argmin(d, axis=-1)].astype(object)
    out[nonconvex_part(e2, e3, params) >= -0.5] = "none"
    return out


# ---------------------------------------------------------------------------
# closed-form batch kernels
# ---------------------------------------------------------------------------
class ThreeWellEnergy:
    """Vectorized value/gradient/Hessian of the density in the 36 variables.

    All methods take ``zeta`` of shape (n, 36) and return arrays with the
    batch dimension first.  ``deg_F`` and ``deg_gradF`` bound the polynomial
    degrees in the F block and the gradient block; integrators size their
    exact quadrature/recovery rules from these.  The tighter bounds exploit
    that every monomial is either pure in F (degree up to 8) or carries
    exactly two gradient factors with at most two F factors.
    """

    deg_F = 8
    deg_gradF = 2
    total_degree = 8          # max total degree of any monomial
    grid_degrees_grad = (7, 2)  # (s, t) degrees over all gradient rows
    grid_degrees_hess = (6, 2)  # (s, t) degrees over all Hessian blocks

    def __init__(self, params):
        self.params = params
        self._M = STRAIN_MAPS
        # the e2/e3 maps are diagonal; their diagonals drive the gradient part
        self._d23 = np.stack(
            [np.diag(STRAIN_MAPS[1]), np.diag(STRAIN_MAPS[2])]
        )  # (2, 3)
        self._C23 = np.einsum("xJ,xL->JL", self._d23, self._d23)

    # -- shared intermediates -------------------------------------------
    def _fields(self, zeta):
        zeta = np.asarray(zeta, dtype=float)
        F = np.ascontiguousarray(zeta[:, :9]).reshape(-1, 3, 3)
        G = np.ascontiguousarray(zeta[:, 9:]).reshape(-1, 3, 3, 3)
        E = 0.5 * (np.matmul(F.transpose(0, 2, 1), F) - np.eye(3))
        e = np.einsum("sIJ,nIJ->ns", self._M, E)
        # T[n, J, I, K] = sum_m F_mJ G_mIK;  a[n, x, K] = sum_I d_x[I] T[n,I,I,K]
        T = np.matmul(F.transpose(0, 2, 1), G.reshape(-1, 3, 9)).reshape(
            -1, 3, 3, 3
        )
        diagT = np.einsum("nIIK->nIK", T)
        a = np.einsum("xI,nIK->nxK", self._d23, diagT)
        return F, G, e, a

    def psi(self, zeta):
        _, _, e, a = self._fields(zeta)
        p = self.params
        return local_energy(e, p) + p.l**2 * np.einsum("nxK,nxK->n", a, a)

    def grad(self, zeta):
        F, G, e, a = self._fields(zeta)
        p = self.params
        l2 = p.l**2
        n = F.shape[0]
        psi_s = local_energy_grad(e, p)
        FM = np.matmul(F[:, None], self._M[None])  # (n, 6, 3, 3)
        P = np.einsum("nx,nxiJ->niJ", psi_s, FM)
        # gradient-part contribution, using A_x[i,J,K] = d_x[J] G[i,J,K]
        Aa = np.einsum("xJ,nxK->nJK", self._d23, a)
        P += 2 * l2 * np.einsum("nJK,niJK->niJ", Aa, G)
        B = 2 * l2 * np.einsum("nxK,nxiJ->niJK", a, FM[:, 1:3])
        out = np.empty((n, NZETA))
        out[:, :9] = P.reshape(n, 9)
        out[:, 9:] = B.reshape(n, 27)
        return out

    def _hess_blocks(self, zeta):
        """The three distinct Hessian blocks.

        Returns ``(H_FF (n,9,9), H_FG (n,9,27), GGm (n,9,9))`` where the
        gradient-gradient block is ``delta_KM GGm[(i,J),(k,L)]``.
        """
        F, G, e, a = self._fields(zeta)
        p = self.params
        l2 = p.l**2
        n = F.shape[0]
        psi_s = local_energy_grad(e, p)
        psi_st = self._local_hess(e)
        FM = np.matmul(F[:, None], self._M[None])  # (n, 6, 3, 3)
        FM23 = FM[:, 1:3]
        S = np.einsum("nx,xIJ->nIJ", psi_s, self._M)

        # F-F block: Q^T psi_st Q plus the geometric and interface parts
        Q = FM.reshape(n, 6, 9)
        H_FF = np.matmul(
            Q.transpose(0, 2, 1), np.matmul(psi_st, Q)
        ).reshape(n, 3, 3, 3, 3)
        eye3 = np.eye(3)
        H_FF += S[:, None, :, None, :] * eye3[None, :, None, :, None]
        GG = np.matmul(
            G.reshape(n, 9, 3), G.reshape(n, 9, 3).transpose(0, 2, 1)
        ).reshape(n, 3, 3, 3, 3)
        H_FF += (2 * l2) * GG * self._C23[None, None, :, None, :]

        # F-gradF block: d_x[J] G_iJM outer FM_x[k,L], plus the bilinear term
        W = np.einsum("xJ,nxkL->nJkL", self._d23, FM23)
        H_FG = (2 * l2) * (
            W[:, None, :, :, :, None] * G[:, :, :, None, None, :]
        )
        Aa = np.einsum("xL,nxM->nLM", self._d23, a)
        for i in range(3):
            for J in range(3):
                H_FG[:, i, J, i, J, :] += (2 * l2) * Aa[:, J, :]

        # gradF-gradF block: delta_KM sum_x FM_x (x) FM_x
        GGm = np.matmul(
            FM23.reshape(n, 2, 9).transpose(0, 2, 1), FM23.reshape(n, 2, 9)
        ) * (2 * l2)
        return (
            H_FF.reshape(n, 9, 9),
            H_FG.reshape(n, 9, 27),
            GGm,
        )

    @staticmethod
    def _write_blocks(H_FF, H_FG, GGm, out=None):
        n = H_FF.shape[0]
        if out is None:
            out = np.zeros((n, NZETA, NZETA))
        out[:, :9, :9] += H_FF
        out[:, :9, 9:] += H_FG
        out[:, 9:, :9] += H_FG.transpose(0, 2, 1)
        # delta_KM couples gradient components with equal last index, which
        # are strided slices of the flattened state vector
        for K in range(3):
            out[:, 9 + K:: 3, 9 + K:: 3] += GGm
        return out

    def hess(self, zeta, out=None, scale=1.0):
        """Second derivatives; with ``out`` given, accumulates ``scale * H``.

        ``scale`` may be a single factor or a per-block triple
        (FF, F-grad, grad-grad) as needed by capped-series tangents.
        """
        H_FF, H_FG, GGm = self._hess_blocks(zeta)
        s_ff, s_fg, s_gg = scale if isinstance(scale, tuple) else (scale,) * 3
        if out is None and s_ff == s_fg == s_gg == 1.0:
            return self._write_blocks(H_FF, H_FG, GGm, None)
        return self._write_blocks(s_ff * H_FF, s_fg * H_FG, s_gg * GGm, out)

    def hess_weighted(self, zetas, block_weights):
        """Weighted sum of Hessians over a stack of evaluation points.

        ``zetas`` has shape (m, n, 36): m rule nodes for each of n points;
        ``block_weights`` is (3, m) with rows scaling the FF, F-grad and
        grad-grad blocks.  Returns the (n, 36, 36) sum, assembled once.
        """
        m, n = zetas.shape[0], zetas.shape[1]
        H_FF, H_FG, GGm = self._hess_blocks(zetas.reshape(m * n, NZETA))
        w = np.asarray(block_weights, dtype=float)
        ff = np.tensordot(w[0], H_FF.reshape(m, n, 9, 9), axes=(0, 0))
        fg = np.tensordot(w[1], H_FG.reshape(m, n, 9, 27), axes=(0, 0))
        gg = np.tensordot(w[2], GGm.reshape(m, n, 9, 9), axes=(0, 0))
        return self._write_blocks(ff, fg, gg, None)

    def grad_weighted(self, zetas, row_weights):
        """Weighted sum of gradients over a stack of evaluation points.

        ``row_weights`` is (2, m): weights for the F rows and the gradient
        rows.  Returns the (n, 36) sum.
        """
        m, n = zetas.shape[0], zetas.shape[1]
        g = self.grad(zetas.reshape(m * n, NZETA)).reshape(m, n, NZETA)
        w = np.asarray(row_weights, dtype=float)
        out = np.empty((n, NZETA))
        out[:, :9] = np.tensordot(w[0], g[:, :, :9], axes=(0, 0))
        out[:, 9:] = np.tensordot(w[1], g[:, :, 9:], axes=(0, 0))
        return out

    def _local_hess(self, e):
        p = self.params
        n = e.shape[0]
        e2, e3 = e[:, 1], e[:, 2]
        h = np.zeros((n, 6, 6))
        h[:, 0, 0] = 2 * p.B1
        h[:, 1, 1] = 2 * p.B2 - 6 * p.B3 * e3 + 4 * p.B4 * (3 * e2**2 + e3**2)
        h[:, 1, 2] = h[:, 2, 1] = -6 * p.B3 * e2 + 8 * p.B4 * e2 * e3
        h[:, 2, 2] = 2 * p.B2 + 6 * p.B3 * e3 + 4 * p.B4 * (e2**2 + 3 * e3**2)
        h[:, 3, 3] = h[:, 4, 4] = h[:, 5, 5] = 2 * p.B5
        return h


@lru_cache(maxsize=16)
def energy_model(params):
    """Shared ThreeWellEnergy instance per parameter set."""
    return ThreeWellEnergy(params)


# ---------------------------------------------------------------------------
# pointwise convenience wrappers
# ---------------------------------------------------------------------------
def psi(state, params):
    """Energy density at a single state."""
    return float(energy_model(params).psi(state.zeta()[None, :])[0])


def stresses(state, params):
    """Exact first derivatives of the density at a single state."""
    g = energy_model(params).grad(state.zeta()[None, :])[0]
    return StressPair.from_vector(g)


# ---------------------------------------------------------------------------
# exact polynomial expansion
# ---------------------------------------------------------------------------
def zeta_index_F(i, J):
    return 3 * i + J


def zeta_index_gradF(i, J, K):
    return 9 + 9 * i + 3 * J + K


def build_psi_polynomial(params):
    """Expand the density into monomials of the 36 state variables.

    The expansion composes the definitions symbolically (E from F, the
    strains from E, the density from the strains, and likewise for the
    gradient part), so it contains no hand-enumerated coefficients.  The
    result has degree at most 8 in the F variables and 2 in the gradient
    variables.
    """

    def var(i):
        return SparsePolynomial.variable(i, NZETA)

    F = [[var(zeta_index_F(i, J)) for J in range(3)] for i in range(3)]
    G = [
        [[var(zeta_index_gradF(i, J, K)) for K in range(3)] for J in range(3)]
        for i in range(3)
    ]

    E = [[None] * 3 for _ in range(3)]
    for I in range(3):
        for J in range(3):
            s = SparsePolynomial(NZETA)
            for k in range(3):
                s = s + F[k][I] * F[k][J]
            if I == J:
                s = s - 1.0
            E[I][J] = s * 0.5

    def strain(smap):
        out = SparsePolynomial(NZETA)
        for I in range(3):
            for J in range(3):
                if smap[I, J] != 0.0:
                    out = out + E[I][J] * smap[I, J]
        return out

    e = [strain(STRAIN_MAPS[s]) for s in range(6)]

    p = params
    e2e3sq = e[1] * e[1] + e[2] * e[2]
    psi_poly = (
        e[0] * e[0] * p.B1
        + e2e3sq * p.B2
        + e[2] * (e[2] * e[2] - e[1] * e[1] * 3.0) * p.B3
        + e2e3sq * e2e3sq * p.B4
        + (e[3] * e[3] + e[4] * e[4] + e[5] * e[5]) * p.B5
    )

    gradE = [[[None] * 3 for _ in range(3)] for _ in range(3)]
    for I in range(3):
        for J in range(3):
            for K in range(3):
                s = SparsePolynomial(NZETA)
                for m in range(3):
                    s = s + G[m][I][K] * F[m][J] + F[m][I] * G[m][J][K]
                gradE[I][J][K] = s * 0.5

    for K in range(3):
        ge2 = (gradE[0][0][K] - gradE[1][1][K]) * (1.0 / SQRT2)
        ge3 = (gradE[0][0][K] + gradE[1][1][K] - gradE[2][2][K] * 2.0) * (
            1.0 / SQRT6
        )
        psi_poly = psi_poly + (ge2 * ge2 + ge3 * ge3) * p.l**2

    return psi_poly


class PolynomialEnergy:
    """Energy-model adapter around an explicit polynomial density.

    Derivative polynomials are generated on demand and cached, so the
    adapter works for both tiny test energies and the full density (where
    it serves as the slow, independent oracle).
    """

    def __init__(self, poly):
        self.poly = poly
        self.deg_F = poly.degree_in(range(9))
        self.deg_gradF = poly.degree_in(range(9, NZETA))
        self._grads = None
        self._hessians = None

    def _grad_polys(self):
        if self._grads is None:
            self._grads = [self.poly.diff(m) for m in range(NZETA)]
        return self._grads

    def _hess_polys(self):
        if self._hessians is None:
            grads = self._grad_polys()
            self._hessians = {}
            for m in range(NZETA):
                for k in range(m, NZETA):
                    h = grads[m].diff(k)
                    if len(h):
                        self._hessians[(m, k)] = h
        return self._hessians

    def psi(self, zeta):
        return self.poly.evaluate(zeta)

    def grad(self, zeta):
        zeta = np.asarray(zeta, dtype=float)
        out = np.zeros((zeta.shape[0], NZETA))
        for m, g in enumerate(self._grad_polys()):
            if len(g):
                out[:, m] = g.evaluate(zeta)
        return out

    def hess(self, zeta, out=None, scale=1.0):
        zeta = np.asarray(zeta, dtype=float)
        n = zeta.shape[0]
        H = np.zeros((n, NZETA, NZETA))
        for (m, k), h in self._hess_polys().items():
            v = h.evaluate(zeta)
            H[:, m, k] = v
            if k != m:
                H[:, k, m] = v
        if out is None:
            return H
        s_ff, s_fg, s_gg = scale if isinstance(scale, tuple) else (scale,) * 3
        out[:, :9, :9] += s_ff * H[:, :9, :9]
        out[:, :9, 9:] += s_fg * H[:, :9, 9:]
        out[:, 9:, :9] += s_fg * H[:, 9:, :9]
        out[:, 9:, 9:] += s_gg * H[:, 9:, 9:]
        return out

    def hess_weighted(self, zetas, block_weights):
        m, n = zetas.shape[0], zetas.shape[1]
        w = np.asarray(block_weights, dtype=float)
        out = np.zeros((n, NZETA, NZETA))
        for j in range(m):
            self.hess(zetas[j], out=out, scale=(w[0, j], w[1, j], w[2, j]))
        return out

    def grad_weighted(self, zetas, row_weights):
        m, n = zetas.shape[0], zetas.shape[1]
        w = np.asarray(row_weights, dtype=float)
        out = np.zeros((n, NZETA))
        for j in range(m):
            g = self.grad(zetas[j])
            out[:, :9] += w[0, j] * g[:, :9]
            out[:, 9:] += w[1, j] * g[:, 9:]
        return out
