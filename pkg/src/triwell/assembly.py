"""Global residual/tangent assembly over a spline space, plus Newton.

The weak form tested against a basis function N_A for component i reads

    R_{A,i} = int rho N_A {a_i} + N_A c {v_i}
              + N_{A,J} {P}_iJ + N_{A,JK} {B}_iJK  dV

with the time-discrete acceleration/velocity stencils and one of the
stress approximations from :mod:`triwell.integrators`.  Everything is
evaluated with the per-element Gauss rule baked into the space, in batches
of elements, so the per-quadrature-point stress kernels run vectorized.

Constraints are handled by elimination: fixed control-point components are
never part of the unknown vector, and their prescribed values enter only
through the coefficient fields.  Assembly order is fixed (lexicographic
elements, deterministic scatter), so repeated assemblies of the same state
are bit-identical.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from ._kernels import tangent_contract
from .errors import (
    AssemblyError,
    InvalidMeshError,
    LinearSolveError,
    NonconvergenceError,
)
from .integrators import (
    scheme_is_symmetric,
    scheme_stress_batch,
    scheme_tangent_batch,
)
from .material import MaterialParams, energy_model


def _material(params):
    """Resolve (energy model, density, damping) from the material argument.

    Accepts the standard parameter set, a bare energy model (density 1, no
    damping), or any carrier object exposing ``model``/``rho``/``c`` --
    used by tests that drive the assembly with toy densities.
    """
    if isinstance(params, MaterialParams):
        return energy_model(params), params.rho, params.c
    model = getattr(params, "model", params)
    return model, getattr(params, "rho", 1.0), getattr(params, "c", 0.0)


# derivative-signature layout per basis function:
# slot 0 the value, slots 1..3 the gradient, slots 4..12 the second
# derivatives (J, K) in row-major order
NSIG = 13

# zeta index for (component c, signature s>=1): the deformation-gradient
# block for gradient signatures, the gradient block for second-derivative
# signatures
_ZMAP = np.empty((3, 12), dtype=np.int64)
for _c in range(3):
    for _s in range(12):
        if _s < 3:
            _ZMAP[_c, _s] = 3 * _c + _s
        else:
            _ZMAP[_c, _s] = 9 + 9 * _c + (_s - 3)
_EYE9 = np.eye(3).ravel()


# ---------------------------------------------------------------------------
# constraints
# ---------------------------------------------------------------------------
@dataclass
class ConstraintSet:
    """Fixed control-point components with prescribed values.

    ``mask`` has shape (d1, d2, d3, 3); ``values`` carries the prescribed
    entries (zero everywhere else).  ``free_ids`` indexes the flattened
    coefficient array (control point major, component minor).
    """

    mask: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        flat = self.mask.reshape(-1)
        self.free_ids = np.nonzero(~flat)[0]
        self.global_to_free = np.full(flat.size, -1, dtype=np.int64)
        self.global_to_free[self.free_ids] = np.arange(self.free_ids.size)

    @property
    def n_free(self):
        return self.free_ids.size

    @property
    def fixed_dofs(self):
        """List of ((i1, i2, i3), component, value) triples."""
        out = []
        for idx in np.argwhere(self.mask):
            i1, i2, i3, c = (int(v) for v in idx)
            out.append(((i1, i2, i3), c, float(self.values[i1, i2, i3, c])))
        return out

    @classmethod
    def none(cls, space):
        d = space.dofs_per_axis + (3,)
        return cls(np.zeros(d, dtype=bool), np.zeros(d))

    @classmethod
    def dirichlet_boundary(cls, space, value=0.0):
        """Fix all components of the outermost control-point layer."""
        d = space.dofs_per_axis + (3,)
        mask = np.broadcast_to(
            space.boundary_cp_mask()[..., None], d
        ).copy()
        values = np.where(mask, value, 0.0)
        return cls(mask, values)

    @classmethod
    def pin_point(cls, space, index=(0, 0, 0)):
        """Fix the three components of one control point (translation pin)."""
        d = space.dofs_per_axis + (3,)
        mask = np.zeros(d, dtype=bool)
        mask[index[0], index[1], index[2], :] = True
        return cls(mask, np.zeros(d))

    def apply(self, coeffs):
        out = coeffs.copy()
        out[self.mask] = self.values[self.mask]
        return out

    def free_vector(self, coeffs):
        return coeffs.reshape(-1)[self.free_ids]

    def add_to_field(self, coeffs, delta_free):
        flat = coeffs.reshape(-1)
        flat[self.free_ids] += delta_free


@dataclass
class AssembledSystem:
    residual: np.ndarray
    tangent: sp.csr_matrix | None
    symmetric: bool

    @property
    def residual_norm(self):
        return float(np.linalg.norm(self.residual))


@dataclass(frozen=True)
class NewtonConfig:
    residual_tol: float = 1e-10
    max_iters: int = 25
    linear_solver: str = "direct"

    def __post_init__(self):
        if self.residual_tol <= 0:
            raise ValueError("residual_tol must be positive")
        if self.linear_solver not in ("direct", "minres", "cg"):
            raise ValueError(f"unknown linear solver {self.linear_solver!r}")


# ---------------------------------------------------------------------------
# element batching
# ---------------------------------------------------------------------------
_SIG_ORDERS = [(0, 0, 0), (1, 0, 0), (0, 1, 0), (0, 0, 1)]
for _J in range(3):
    for _K in range(3):
        _o = [0, 0, 0]
        _o[_J] += 1
        _o[_K] += 1
        _SIG_ORDERS.append(tuple(_o))


_TABLE_CACHE_LIMIT = 13_000_000  # cached floats (~100 MB)


class _Batch:
    """Per-batch basis tables, with tangent-contraction views built lazily."""

    __slots__ = ("slc", "edofs", "D", "w", "_dh", "_dhw", "_right", "_mass")

    def __init__(self, slc, edofs, D, w):
        self.slc = slc
        self.edofs = edofs
        self.D = D
        self.w = w
        self._dh = self._dhw = self._right = self._mass = None

    def __iter__(self):  # (slc, edofs, D, w) unpacking
        return iter((self.slc, self.edofs, self.D, self.w))

    @property
    def dh(self):
        if self._dh is None:
            self._dh = np.ascontiguousarray(self.D[:, :, :, 1:13])
        return self._dh

    @property
    def dh_weighted(self):
        if self._dhw is None:
            self._dhw = self.dh * self.w[:, :, None, None]
        return self._dhw

    @property
    def trial_right(self):
        """Dh reordered to [(q, t), m], the trial side of the tangent GEMM."""
        if self._right is None:
            nb, nqp = self.D.shape[0], self.D.shape[1]
            self._right = np.ascontiguousarray(
                self.dh.transpose(0, 1, 3, 2)
            ).reshape(nb, nqp * 12, 27)
        return self._right

    @property
    def mass_matrix(self):
        """Scalar element mass matrices: int N_l N_m per element."""
        if self._mass is None:
            D0 = self.D[:, :, :, 0]
            self._mass = np.einsum("bq,bql,bqm->blm", self.w, D0, D0)
        return self._mass


class QuadratureLoop:
    """Batched iteration over elements with basis tables and weights.

    The per-batch derivative tables depend only on the space, so they are
    cached on it (up to a size limit) and shared by every assembly and
    integral evaluation.
    """

    def __init__(self, space, batch_elements=64):
        self.space = space
        self.batch = batch_elements
        n1, n2, n3 = space.n_elements
        self.n_total = n1 * n2 * n3
        self.nqp = space.nq**3
        self.edofs = space.element_dofs

    def _build(self):
        space = self.space
        t1, t2, t3 = space.basis_tables
        w1, w2, w3 = space.qweights
        n1, n2, n3 = space.n_elements
        e = np.arange(self.n_total)
        a3 = e % n3
        a2 = (e // n3) % n2
        a1 = e // (n2 * n3)
        out = []
        for start in range(0, self.n_total, self.batch):
            slc = slice(start, min(start + self.batch, self.n_total))
            b1, b2, b3 = a1[slc], a2[slc], a3[slc]
            T1, T2, T3 = t1[b1], t2[b2], t3[b3]  # (nb, q, loc, order)
            nb = T1.shape[0]
            D = np.empty((nb, self.nqp, 27, NSIG))
            for s, (o1, o2, o3) in enumerate(_SIG_ORDERS):
                D[:, :, :, s] = np.einsum(
                    "bql,brm,bsn->bqrslmn",
                    T1[..., o1], T2[..., o2], T3[..., o3],
                ).reshape(nb, self.nqp, 27)
            w = np.einsum(
                "bq,br,bs->bqrs", w1[b1], w2[b2], w3[b3]
            ).reshape(nb, self.nqp)
            out.append(_Batch(slc, self.edofs[slc], D, w))
        return out

    def batches(self):
        key = ("qloop", self.batch)
        cache = self.space._cache
        if key in cache:
            return cache[key]
        data = self._build()
        if self.n_total * self.nqp * 27 * NSIG <= _TABLE_CACHE_LIMIT:
            cache[key] = data
        return data


def _gather(coeffs, edofs):
    """Element-local coefficient values, shape (nb, 27, 3)."""
    return coeffs.reshape(-1, 3)[edofs]


def _qp_fields(D, local, sig):
    """Evaluate one derivative signature of a field at all batch qp."""
    return np.einsum("bql,blc->bqc", D[:, :, :, sig], local)


def _qp_zeta(D, local, add_identity, Fbar=None):
    """State vector (F block, gradient block) at every quadrature point.

    ``local`` holds element-local coefficients of the relevant field; with
    ``add_identity`` the F block is offset by the identity (or by ``Fbar``).
    """
    nb, nqp = D.shape[0], D.shape[1]
    z = np.empty((nb, nqp, 36))
    grads = np.einsum("bqls,blc->bqcs", D[:, :, :, 1:4], local)
    z[..., :9] = grads.reshape(nb, nqp, 9)
    if add_identity:
        offset = _EYE9 if Fbar is None else np.asarray(Fbar, dtype=float).ravel()
        z[..., :9] += offset
    hess = np.einsum("bqls,blc->bqcs", D[:, :, :, 4:13], local)
    z[..., 9:] = hess.reshape(nb, nqp, 27)
    return z


def _scatter_residual(global_r, edofs, r_el):
    ids = (edofs[:, :, None] * 3 + np.arange(3)[None, None, :]).reshape(-1)
    np.add.at(global_r, ids, r_el.reshape(-1))


def _element_tangent(batch, theta, mass_coeff, stress_scale):
    """Dense 81x81 element matrices from per-qp tangents.

    ``theta`` is d(stress)/d(zeta_plus) with shape (nb, nqp, 36, 36);
    ``stress_scale`` carries the chain factor from zeta_plus to the unknown
    field.  ``mass_coeff`` multiplies the N_A N_B identity block.
    """
    nb = batch.D.shape[0]
    K = np.zeros((nb, 81, 81))
    tangent_contract(batch.dh, batch.w, theta, _ZMAP, stress_scale, K)
    if mass_coeff != 0.0:
        NN = mass_coeff * batch.mass_matrix
        Kv = K.reshape(nb, 27, 3, 27, 3)
        for c in range(3):
            Kv[:, :, c, :, c] += NN
    return K


class _TangentPattern:
    """Fixed sparsity of the eliminated tangent, with a value scatter map.

    Element matrices always hit the same global slots, so the CSR structure
    is computed once; each assembly reduces to one weighted bincount.
    """

    def __init__(self, space, constraints):
        edofs = space.element_dofs
        ids = (edofs[:, :, None] * 3 + np.arange(3)[None, None, :]).reshape(
            edofs.shape[0], 81
        )
        fid = constraints.global_to_free[ids]
        r = np.repeat(fid, 81, axis=1).reshape(-1)
        c = np.tile(fid, (1, 81)).reshape(-1)
        self.keep = (r >= 0) & (c >= 0)
        r, c = r[self.keep], c[self.keep]
        order = np.lexsort((c, r))
        rs, cs = r[order], c[order]
        new_slot = np.empty(rs.size, dtype=bool)
        new_slot[0] = True
        new_slot[1:] = (np.diff(rs) != 0) | (np.diff(cs) != 0)
        slot_sorted = np.cumsum(new_slot) - 1
        self.nnz = int(slot_sorted[-1]) + 1
        self.entry_slot = np.empty(rs.size, dtype=np.int64)
        self.entry_slot[order] = slot_sorted
        self.indices = cs[new_slot]
        uniq_rows = rs[new_slot]
        n = constraints.n_free
        self.indptr = np.zeros(n + 1, dtype=np.int64)
        np.add.at(self.indptr, uniq_rows + 1, 1)
        np.cumsum(self.indptr, out=self.indptr)
        self.shape = (n, n)
        # flat entry offsets per element, for batch slicing
        self.entries_per_el = 81 * 81

    def csr(self, element_values):
        """Assemble the CSR matrix from stacked element matrices."""
        vals = element_values.reshape(-1)[self.keep]
        data = np.bincount(self.entry_slot, weights=vals, minlength=self.nnz)
        return sp.csr_matrix(
            (data, self.indices.copy(), self.indptr.copy()), shape=self.shape
        )


def _tangent_pattern(space, constraints):
    cache = getattr(constraints, "_pattern_cache", None)
    if cache is None:
        cache = {}
        constraints._pattern_cache = cache
    key = id(space)
    if key not in cache:
        cache[key] = _TangentPattern(space, constraints)
    return cache[key]


# ---------------------------------------------------------------------------
# assembly entry points
# ---------------------------------------------------------------------------
def assemble(
    space,
    u_nm1,
    u_n,
    u_np1,
    params,
    cfg,
    dt,
    constraints,
    with_tangent=True,
    batch_elements=64,
):
    """Residual (and tangent) of one time-discrete step at a given guess.

    The unknown is the field at the new time level; ``u_nm1`` and ``u_n``
    are history.  All three fields must live on ``space`` and agree on the
    constrained entries.
    """
    for f in (u_nm1, u_n, u_np1):
        try:
            space.check_field(f)
        except InvalidMeshError as err:
            raise AssemblyError(str(err)) from None
    if dt <= 0:
        raise AssemblyError("dt must be positive")
    model, rho, c = _material(params)
    sym = scheme_is_symmetric(cfg)
    mass_coeff = rho / dt**2 + c / (2.0 * dt)

    n_cp = space.n_control_points
    r_global = np.zeros(n_cp * 3)
    k_blocks = []
    loop = QuadratureLoop(space, batch_elements)
    for batch in loop.batches():
        edofs, D, w = batch.edofs, batch.D, batch.w
        nb, nqp = D.shape[0], D.shape[1]
        lm1 = _gather(u_nm1, edofs)
        ln = _gather(u_n, edofs)
        lp1 = _gather(u_np1, edofs)

        zminus = _qp_zeta(D, 0.5 * (ln + lm1), add_identity=True)
        delta = _qp_zeta(D, 0.5 * (lp1 - lm1), add_identity=False)
        zm_flat = zminus.reshape(nb * nqp, 36)
        dl_flat = delta.reshape(nb * nqp, 36)

        stress = scheme_stress_batch(zm_flat, dl_flat, model, cfg)
        stress = stress.reshape(nb, nqp, 36)

        accel = _qp_fields(D, (lp1 - 2.0 * ln + lm1) / dt**2, 0)
        veloc = _qp_fields(D, (lp1 - lm1) / (2.0 * dt), 0)

        sig = np.empty((nb, nqp, 3, NSIG))
        sig[:, :, :, 0] = rho * accel + c * veloc
        sig[:, :, :, 1:] = stress[:, :, _ZMAP]
        r_el = np.einsum("bq,bqls,bqcs->blc", w, D, sig)
        _scatter_residual(r_global, edofs, r_el)

        if with_tangent:
            theta = scheme_tangent_batch(zm_flat, dl_flat, model, cfg)
            theta = theta.reshape(nb, nqp, 36, 36)
            k_blocks.append(
                _element_tangent(batch, theta, mass_coeff, stress_scale=0.5)
            )

    residual = r_global[constraints.free_ids]
    tangent = None
    if with_tangent:
        pattern = _tangent_pattern(space, constraints)
        tangent = pattern.csr(np.concatenate(k_blocks, axis=0))
    return AssembledSystem(residual, tangent, sym)


def assemble_static(
    space,
    u,
    params,
    constraints,
    Fbar=None,
    with_tangent=True,
    batch_elements=64,
):
    """Residual/tangent of the equilibrium problem (no inertia, no damping).

    With ``Fbar`` given, the state at a point is ``Fbar + grad u`` (periodic
    cell problems); otherwise the reference offset is the identity.
    """
    space.check_field(u)
    model = _material(params)[0]
    n_cp = space.n_control_points
    r_global = np.zeros(n_cp * 3)
    k_blocks = []
    for batch in QuadratureLoop(space, batch_elements).batches():
        edofs, D, w = batch.edofs, batch.D, batch.w
        nb, nqp = D.shape[0], D.shape[1]
        lu = _gather(u, edofs)
        zeta = _qp_zeta(D, lu, add_identity=True, Fbar=Fbar)
        z_flat = zeta.reshape(nb * nqp, 36)
        stress = model.grad(z_flat).reshape(nb, nqp, 36)
        sig = np.zeros((nb, nqp, 3, NSIG))
        sig[:, :, :, 1:] = stress[:, :, _ZMAP]
        r_el = np.einsum("bq,bqls,bqcs->blc", w, D, sig)
        _scatter_residual(r_global, edofs, r_el)
        if with_tangent:
            theta = model.hess(z_flat).reshape(nb, nqp, 36, 36)
            k_blocks.append(_element_tangent(batch, theta, 0.0, stress_scale=1.0))

    residual = r_global[constraints.free_ids]
    tangent = None
    if with_tangent:
        pattern = _tangent_pattern(space, constraints)
        tangent = pattern.csr(np.concatenate(k_blocks, axis=0))
    return AssembledSystem(residual, tangent, True)


# ---------------------------------------------------------------------------
# quadrature integrals of fields
# ---------------------------------------------------------------------------
def integrate_psi(space, coeffs, params, Fbar=None, batch_elements=64):
    """Internal energy: quadrature sum of the density over the domain."""
    model = _material(params)[0]
    total = 0.0
    for _, edofs, D, w in QuadratureLoop(space, batch_elements).batches():
        zeta = _qp_zeta(D, _gather(coeffs, edofs), True, Fbar)
        psi = model.psi(zeta.reshape(-1, 36)).reshape(w.shape)
        total += float(np.sum(w * psi))
    return total


def integrate_dot(space, coeffs_a, coeffs_b, batch_elements=64):
    """Quadrature integral of the pointwise dot product of two fields."""
    total = 0.0
    for _, edofs, D, w in QuadratureLoop(space, batch_elements).batches():
        va = _qp_fields(D, _gather(coeffs_a, edofs), 0)
        vb = _qp_fields(D, _gather(coeffs_b, edofs), 0)
        total += float(np.einsum("bq,bqc,bqc->", w, va, vb))
    return total


def l2_norm(space, coeffs):
    return np.sqrt(max(integrate_dot(space, coeffs, coeffs), 0.0))


def average_stress(space, u, params, Fbar=None, batch_elements=64):
    """Volume averages of the two stress blocks over the (unit) domain.

    Returns (P_avg (3,3), B_avg (3,3,3)).
    """
    model = _material(params)[0]
    P = np.zeros(9)
    B = np.zeros(27)
    vol = 0.0
    for _, edofs, D, w in QuadratureLoop(space, batch_elements).batches():
        zeta = _qp_zeta(D, _gather(u, edofs), True, Fbar)
        g = model.grad(zeta.reshape(-1, 36)).reshape(w.shape + (36,))
        P += np.einsum("bq,bqm->m", w, g[..., :9])
        B += np.einsum("bq,bqm->m", w, g[..., 9:])
        vol += float(w.sum())
    return P.reshape(3, 3) / vol, B.reshape(3, 3, 3) / vol


# ---------------------------------------------------------------------------
# linear and nonlinear solves
# ---------------------------------------------------------------------------
def linear_solve(tangent, rhs, symmetric=False, method="direct"):
    """Solve the tangent system to at least 1e-12 relative residual."""
    rhs = np.asarray(rhs, dtype=float)
    norm_b = np.linalg.norm(rhs)
    if norm_b == 0.0:
        return np.zeros_like(rhs)
    A = sp.csc_matrix(tangent)
    if method == "direct":
        lu = spla.splu(A)
        x = lu.solve(rhs)
        for _ in range(3):
            res = rhs - A @ x
            if np.linalg.norm(res) <= 1e-12 * norm_b:
                return x
            x = x + lu.solve(res)
    elif method in ("minres", "cg"):
        if not symmetric:
            raise LinearSolveError(
                f"{method} requires a symmetric tangent; use the direct path"
            )
        solver = spla.minres if method == "minres" else spla.cg
        x, info = solver(A, rhs, rtol=1e-13, maxiter=20 * rhs.size)
        if info != 0:
            raise LinearSolveError(f"{method} did not converge (info={info})")
    else:
        raise LinearSolveError(f"unknown linear solver {method!r}")
    res = np.linalg.norm(rhs - A @ x)
    if res > 1e-12 * norm_b:
        raise LinearSolveError(
            f"linear solve stalled at relative residual {res / norm_b:.3e}"
        )
    return x


def newton_solve(builder, u_start, ncfg, constraints, trace=None):
    """Drive the residual below tolerance; returns (field, iterations).

    ``builder(u, with_tangent)`` maps a trial field to an
    :class:`AssembledSystem`; the tangent is only requested when another
    correction will actually be computed.  The iteration count excludes the
    free convergence check at the start, so a start at the solution reports
    zero iterations.  With ``trace`` a list, (iteration, residual norm)
    pairs are appended, starting from the unmodified guess.
    """
    u = u_start.copy()
    norm = builder(u, False).residual_norm
    if trace is not None:
        trace.append((0, norm))
    if norm <= ncfg.residual_tol:
        return u, 0
    for it in range(1, ncfg.max_iters + 1):
        system = builder(u, True)
        delta = linear_solve(
            system.tangent,
            -system.residual,
            symmetric=system.symmetric,
            method=ncfg.linear_solver,
        )
        constraints.add_to_field(u, delta)
        norm = builder(u, False).residual_norm
        if trace is not None:
            trace.append((it, norm))
        if norm <= ncfg.residual_tol:
            return u, it
    raise NonconvergenceError(
        f"Newton stalled at |r| = {norm:.3e} after {ncfg.max_iters} iterations",
        residual_norm=norm,
        iterations=ncfg.max_iters,
    )
