"""Time-discrete stress approximations at a material point.

Two families are implemented, both built so that the discrete work
``{P}:dF + {B}:dgradF`` matches the exact energy difference between the two
half-step states (the property that makes the step unconditionally
energy-stable):

* the midpoint-plus-rank-one-correction scheme (``gonzalez``), usable with
  any smooth density;
* the series scheme (``taylor_full`` / ``taylor_reduced``), which exploits
  the polynomial structure of the density.

For a polynomial density the full series stress equals the average of the
exact stress along the straight segment between the half-step states, so it
is evaluated exactly by a small Gauss rule in the segment parameter.  The
reduced variant caps the series orders; it is realized through precomputed
node/weight tables on a 2D evaluation grid (one direction scaling the F
increment, one the gradient increment), obtained from inverse Vandermonde
matrices.  Both variants share one code path; the full scheme is the capped
scheme with caps at the polynomial degrees.

Tangents are derivatives with respect to the state at the new time level
(the Newton unknown); the chain factor 1/2 from the midpoint/increment
definitions is included in the single-point API.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .material import (
    MaterialParams,
    PolynomialEnergy,
    QuadState,
    StressPair,
    energy_model,
)
from .polynomial import SparsePolynomial

NZETA = 36
GS_DEGENERATE_DEN = 1e-28

SCHEME_KINDS = ("gonzalez", "taylor_full", "taylor_reduced")


@dataclass(frozen=True)
class SchemeConfig:
    """Which stress approximation to use, plus its knobs.

    ``kappa_F_max``/``kappa_gradF_max`` cap the series orders of the reduced
    scheme (the full scheme corresponds to caps at the polynomial degrees,
    8 and 2 for the reference density).  ``l_gs`` is the scalar weighting
    the gradient block inside the rank-one correction of the midpoint
    scheme; unity unless experimenting.
    """

    kind: str = "taylor_full"
    l_gs: float = 1.0
    kappa_F_max: int = 8
    kappa_gradF_max: int = 2

    def __post_init__(self):
        if self.kind not in SCHEME_KINDS:
            raise ValueError(f"unknown scheme kind {self.kind!r}")
        if not 1 <= self.kappa_F_max <= 8:
            raise ValueError("kappa_F_max must be in [1, 8]")
        if not 0 <= self.kappa_gradF_max <= 2:
            raise ValueError("kappa_gradF_max must be in [0, 2]")
        if self.l_gs <= 0:
            raise ValueError("l_gs must be positive")

    @classmethod
    def gonzalez(cls, l_gs=1.0):
        return cls(kind="gonzalez", l_gs=l_gs)

    @classmethod
    def taylor_full(cls):
        return cls(kind="taylor_full")

    @classmethod
    def taylor_reduced(cls, kappa_F_max=4, kappa_gradF_max=2):
        return cls(
            kind="taylor_reduced",
            kappa_F_max=kappa_F_max,
            kappa_gradF_max=kappa_gradF_max,
        )


@dataclass
class HalfStepStates:
    """The two half-step states and their increment at one material point."""

    zeta_minus: QuadState
    zeta_plus: QuadState
    delta_F: np.ndarray = field(default=None)
    delta_gradF: np.ndarray = field(default=None)

    def __post_init__(self):
        dF = self.zeta_plus.F - self.zeta_minus.F
        dG = self.zeta_plus.gradF - self.zeta_minus.gradF
        if self.delta_F is None:
            self.delta_F = dF
        if self.delta_gradF is None:
            self.delta_gradF = dG
        if not (
            np.allclose(self.delta_F, dF, rtol=0, atol=1e-12)
            and np.allclose(self.delta_gradF, dG, rtol=0, atol=1e-12)
        ):
            raise ValueError("half-step states and increment are inconsistent")

    @classmethod
    def from_delta(cls, zeta_minus, delta_F, delta_gradF):
        delta_F = np.asarray(delta_F, dtype=float).reshape(3, 3)
        delta_gradF = np.asarray(delta_gradF, dtype=float).reshape(3, 3, 3)
        plus = QuadState(
            zeta_minus.F + delta_F, zeta_minus.gradF + delta_gradF
        )
        return cls(zeta_minus, plus, delta_F, delta_gradF)

    def delta_vector(self):
        return np.concatenate([self.delta_F.ravel(), self.delta_gradF.ravel()])


# ---------------------------------------------------------------------------
# kinematic stencils
# ---------------------------------------------------------------------------
def kinematic_stencils(u_nm1, u_n, u_np1, dt):
    """Second-order acceleration and velocity stencils on three levels."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    u_nm1 = np.asarray(u_nm1, dtype=float)
    u_n = np.asarray(u_n, dtype=float)
    u_np1 = np.asarray(u_np1, dtype=float)
    accel = (u_np1 - 2.0 * u_n + u_nm1) / dt**2
    veloc = (u_np1 - u_nm1) / (2.0 * dt)
    return accel, veloc


# ---------------------------------------------------------------------------
# energy-model coercion
# ---------------------------------------------------------------------------
def as_energy_model(energy):
    """Accept a MaterialParams, SparsePolynomial or ready energy model."""
    if isinstance(energy, MaterialParams):
        return energy_model(energy)
    if isinstance(energy, SparsePolynomial):
        return _poly_model(id(energy), energy)
    return energy


@lru_cache(maxsize=32)
def _poly_model(key, poly):
    return PolynomialEnergy(poly)


# ---------------------------------------------------------------------------
# exact rules: segment quadrature and grid node/weight tables
# ---------------------------------------------------------------------------
@lru_cache(maxsize=32)
def _segment_rule(total_degree):
    """Gauss rule in the segment parameter, exact for the series stress.

    Both the averaged gradient (degree total-1 along the segment) and the
    sigma-weighted Hessian integrand have degree at most total_degree - 1.
    """
    npts = max(1, -(-total_degree // 2))
    x, w = np.polynomial.legendre.leggauss(npts)
    return 0.5 * (x + 1.0), 0.5 * w


def _model_degrees(model):
    """Degree bounds, with conservative fallbacks for generic models."""
    dF, dG = model.deg_F, model.deg_gradF
    total = getattr(model, "total_degree", dF + dG)
    grad_deg = getattr(model, "grid_degrees_grad", (dF, dG))
    hess_deg = getattr(model, "grid_degrees_hess", (dF, dG))
    return total, grad_deg, hess_deg


def _cheb_nodes(m):
    if m == 1:
        return np.array([0.0])
    return np.cos(np.pi * np.arange(m) / (m - 1))


def _inv_vandermonde(nodes):
    V = np.vander(nodes, increasing=True)
    return np.linalg.inv(V)


def _admissible(a, b, which, kF, kgF):
    """Whether the capped scheme keeps the (a, b) series coefficient.

    ``a`` counts segment powers of the F increment, ``b`` of the gradient
    increment; the first- and second-order terms are always kept.
    """
    if which == "F":
        kappa_F, kappa_gF = a + 1, b
    else:
        kappa_F, kappa_gF = a, b + 1
    return (a + b + 1 <= 2) | ((kappa_F <= kF) & (kappa_gF <= kgF))


def _grid_nodes(sdeg, tdeg):
    s_nodes = _cheb_nodes(sdeg + 1)
    t_nodes = _cheb_nodes(tdeg + 1)
    return (
        s_nodes,
        t_nodes,
        _inv_vandermonde(s_nodes),
        _inv_vandermonde(t_nodes),
    )


@lru_cache(maxsize=32)
def _stress_grid_rule(sdeg, tdeg, kF, kgF):
    """Node/weight tables for the capped series stress.

    ``eta_P``/``eta_B`` weight the F rows and the gradient rows of the
    density gradient over the (s, t) evaluation grid.
    """
    s_nodes, t_nodes, Vs, Vt = _grid_nodes(sdeg, tdeg)
    a = np.arange(sdeg + 1)[:, None]
    b = np.arange(tdeg + 1)[None, :]
    inv_k = 1.0 / (a + b + 1.0)

    def collapse(Wab):
        return np.einsum("ab,aj,bk->jk", Wab, Vs, Vt)

    eta_P = collapse(_admissible(a, b, "F", kF, kgF) * inv_k)
    eta_B = collapse(_admissible(a, b, "gradF", kF, kgF) * inv_k)
    return s_nodes, t_nodes, eta_P, eta_B


@lru_cache(maxsize=32)
def _tangent_grid_rule(sdeg, tdeg, kF, kgF):
    """Per-block tangent weights over the Hessian evaluation grid.

    Differentiating the series shifts the coefficient index by one in the
    direction of the perturbed block, so the weight of the (a, b) Hessian
    coefficient tests admissibility of the shifted index.
    """
    s_nodes, t_nodes, Vs, Vt = _grid_nodes(sdeg, tdeg)
    a = np.arange(sdeg + 1)[:, None]
    b = np.arange(tdeg + 1)[None, :]
    inv_k2 = 1.0 / (a + b + 2.0)

    def collapse(Wab):
        return np.einsum("ab,aj,bk->jk", Wab, Vs, Vt)

    w_PF = collapse(_admissible(a + 1, b, "F", kF, kgF) * inv_k2)
    w_PG = collapse(_admissible(a, b + 1, "F", kF, kgF) * inv_k2)
    w_BF = collapse(_admissible(a + 1, b, "gradF", kF, kgF) * inv_k2)
    w_BG = collapse(_admissible(a, b + 1, "gradF", kF, kgF) * inv_k2)
    # the cross blocks must agree for the tangent to be symmetric
    assert np.allclose(w_PG, w_BF, rtol=0, atol=1e-12)
    return s_nodes, t_nodes, {"PF": w_PF, "X": 0.5 * (w_PG + w_BF), "BG": w_BG}


# ---------------------------------------------------------------------------
# batch kernels (zeta arrays of shape (n, 36); tangents are d/d zeta_plus)
# ---------------------------------------------------------------------------
def _segment_states(zminus, delta, sig):
    return zminus[None] + sig[:, None, None] * delta[None]


def _grid_states(zminus, delta, s_nodes, t_nodes):
    dF = np.zeros_like(delta)
    dG = np.zeros_like(delta)
    dF[:, :9] = delta[:, :9]
    dG[:, 9:] = delta[:, 9:]
    st = np.array([(s, t) for s in s_nodes for t in t_nodes])
    return (
        zminus[None]
        + st[:, 0, None, None] * dF[None]
        + st[:, 1, None, None] * dG[None]
    )


def taylor_stress_batch(zminus, delta, model, cfg):
    zminus = np.atleast_2d(zminus)
    delta = np.atleast_2d(delta)
    total, grad_deg, _ = _model_degrees(model)
    if cfg.kind == "taylor_full":
        sig, w = _segment_rule(total)
        states = _segment_states(zminus, delta, sig)
        return model.grad_weighted(states, np.stack([w, w]))
    s_nodes, t_nodes, eta_P, eta_B = _stress_grid_rule(
        grad_deg[0], grad_deg[1], cfg.kappa_F_max, cfg.kappa_gradF_max
    )
    states = _grid_states(zminus, delta, s_nodes, t_nodes)
    return model.grad_weighted(
        states, np.stack([eta_P.ravel(), eta_B.ravel()])
    )


def taylor_tangent_batch(zminus, delta, model, cfg):
    zminus = np.atleast_2d(zminus)
    delta = np.atleast_2d(delta)
    total, _, hess_deg = _model_degrees(model)
    if cfg.kind == "taylor_full":
        sig, w = _segment_rule(total)
        states = _segment_states(zminus, delta, sig)
        ws = w * sig
        return model.hess_weighted(states, np.stack([ws, ws, ws]))
    s_nodes, t_nodes, omega = _tangent_grid_rule(
        hess_deg[0], hess_deg[1], cfg.kappa_F_max, cfg.kappa_gradF_max
    )
    states = _grid_states(zminus, delta, s_nodes, t_nodes)
    return model.hess_weighted(
        states,
        np.stack([omega["PF"].ravel(), omega["X"].ravel(), omega["BG"].ravel()]),
    )


def _gs_scale(cfg):
    lam = np.ones(NZETA)
    lam[9:] = cfg.l_gs**2
    return lam


def gonzalez_stress_batch(zminus, delta, model, cfg):
    zminus = np.atleast_2d(zminus)
    delta = np.atleast_2d(delta)
    mid = zminus + 0.5 * delta
    g_mid = model.grad(mid)
    lam = _gs_scale(cfg)
    W = delta * lam
    den = np.einsum("nm,nm->n", delta, W)
    num = (
        model.psi(zminus + delta)
        - model.psi(zminus)
        - np.einsum("nm,nm->n", g_mid, delta)
    )
    coef = np.where(den < GS_DEGENERATE_DEN, 0.0, num / np.where(den > 0, den, 1.0))
    return g_mid + coef[:, None] * W


def gonzalez_tangent_batch(zminus, delta, model, cfg):
    zminus = np.atleast_2d(zminus)
    delta = np.atleast_2d(delta)
    mid = zminus + 0.5 * delta
    g_mid = model.grad(mid)
    H_mid = model.hess(mid)
    lam = _gs_scale(cfg)
    W = delta * lam
    den = np.einsum("nm,nm->n", delta, W)
    num = (
        model.psi(zminus + delta)
        - model.psi(zminus)
        - np.einsum("nm,nm->n", g_mid, delta)
    )
    g_plus = model.grad(zminus + delta)
    dnum = g_plus - g_mid - 0.5 * np.einsum("nmk,nk->nm", H_mid, delta)

    T = 0.5 * H_mid
    live = den >= GS_DEGENERATE_DEN
    if np.any(live):
        safe_den = np.where(live, den, 1.0)
        coef = np.where(live, num / safe_den, 0.0)
        dcoef = np.where(
            live[:, None],
            (dnum * safe_den[:, None] - num[:, None] * 2.0 * W)
            / safe_den[:, None] ** 2,
            0.0,
        )
        T = T + np.einsum("nm,nk->nmk", W, dcoef)
        T = T + coef[:, None, None] * np.eye(NZETA) * lam[None, :, None]
    return T


# ---------------------------------------------------------------------------
# single-point API
# ---------------------------------------------------------------------------
@dataclass
class TangentBlocks:
    """Stress derivatives with respect to the new-time-level state.

    ``dP_dF[i,J,k,L] = d{P}_iJ / dF^{n+1}_kL`` and similarly for the other
    blocks, with the gradient indices appended.
    """

    dP_dF: np.ndarray
    dP_dgradF: np.ndarray
    dB_dF: np.ndarray
    dB_dgradF: np.ndarray

    @classmethod
    def from_matrix(cls, T):
        return cls(
            T[:9, :9].reshape(3, 3, 3, 3),
            T[:9, 9:].reshape(3, 3, 3, 3, 3),
            T[9:, :9].reshape(3, 3, 3, 3, 3),
            T[9:, 9:].reshape(3, 3, 3, 3, 3, 3),
        )

    def matrix(self):
        T = np.empty((NZETA, NZETA))
        T[:9, :9] = self.dP_dF.reshape(9, 9)
        T[:9, 9:] = self.dP_dgradF.reshape(9, 27)
        T[9:, :9] = self.dB_dF.reshape(27, 9)
        T[9:, 9:] = self.dB_dgradF.reshape(27, 27)
        return T


def _point_inputs(h):
    return h.zeta_minus.zeta()[None, :], h.delta_vector()[None, :]


def taylor_stresses(h, energy, cfg):
    """Series stress approximation at one point.

    ``energy`` may be the material parameters, the explicit polynomial
    density, or any object with ``psi``/``grad``/``hess`` batch methods and
    degree bounds.
    """
    model = as_energy_model(energy)
    z, d = _point_inputs(h)
    return StressPair.from_vector(taylor_stress_batch(z, d, model, cfg)[0])


def taylor_tangent(h, energy, cfg):
    """Exact derivative of the series stress w.r.t. the new-time state."""
    model = as_energy_model(energy)
    z, d = _point_inputs(h)
    T = 0.5 * taylor_tangent_batch(z, d, model, cfg)[0]
    return TangentBlocks.from_matrix(T)


def gonzalez_stresses(h, energy, cfg):
    """Midpoint stress plus the rank-one energy-matching correction."""
    model = as_energy_model(energy)
    z, d = _point_inputs(h)
    return StressPair.from_vector(gonzalez_stress_batch(z, d, model, cfg)[0])


def gonzalez_tangent(h, energy, cfg):
    """Derivative of the corrected midpoint stress; not symmetric in general."""
    model = as_energy_model(energy)
    z, d = _point_inputs(h)
    T = 0.5 * gonzalez_tangent_batch(z, d, model, cfg)[0]
    return TangentBlocks.from_matrix(T)


def scheme_stress_batch(zminus, delta, model, cfg):
    if cfg.kind == "gonzalez":
        return gonzalez_stress_batch(zminus, delta, model, cfg)
    return taylor_stress_batch(zminus, delta, model, cfg)


def scheme_tangent_batch(zminus, delta, model, cfg):
    if cfg.kind == "gonzalez":
        return gonzalez_tangent_batch(zminus, delta, model, cfg)
    return taylor_tangent_batch(zminus, delta, model, cfg)


def scheme_is_symmetric(cfg):
    return cfg.kind in ("taylor_full", "taylor_reduced")


def discrete_work(stress_vec, delta_vec):
    """{P}:dF + {B}:dgradF for one point or a batch."""
    return np.einsum("...m,...m->...", stress_vec, delta_vec)
