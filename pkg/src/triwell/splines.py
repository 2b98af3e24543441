"""Tensor-product quadratic B-spline spaces on the unit cube.

Provides open-knot (clamped) and periodic variants with basis evaluation up
to second derivatives, Gauss-Legendre quadrature tables per element, Greville
collocation, and knot insertion for exact transfer of a field between nested
meshes.  Geometry is always the identity map on [0, 1]^3, so parametric and
physical derivatives coincide.

The degree is fixed at 2: quadratic splines with simple interior knots are
C^1 with element-wise second derivatives, the minimum regularity needed when
the weak form carries second gradients of the test and trial fields.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, InvalidMeshError, RefinementError

DEGREE = 2
QUAD_POINTS_PER_DIR = 3

# FieldCoeffs is a plain array of control-point values with shape
# (d1, d2, d3, 3): one 3-vector per control point.
FieldCoeffs = np.ndarray


def gauss_legendre_01(n):
    """Gauss-Legendre nodes/weights on [0, 1]."""
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


# ---------------------------------------------------------------------------
# 1D knot vectors
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class KnotVector:
    """Knot data for one parametric direction.

    For the open variant ``knots`` is the full clamped knot array with the
    end knots repeated ``degree + 1`` times.  For the periodic variant
    ``knots`` holds the uniform break points 0, 1/n, ..., 1 and the basis is
    the wrapped cardinal quadratic spline; only uniform breaks are supported
    there.
    """

    degree: int
    knots: np.ndarray
    periodic: bool

    def __post_init__(self):
        knots = np.asarray(self.knots, dtype=float)
        object.__setattr__(self, "knots", knots)
        if self.degree != DEGREE:
            raise InvalidMeshError("only degree-2 spaces are supported")
        if np.any(np.diff(knots) < 0):
            raise InvalidMeshError("knots must be non-decreasing")
        if self.periodic:
            widths = np.diff(knots)
            if knots[0] != 0.0 or knots[-1] != 1.0 or widths.size < 2:
                raise InvalidMeshError("periodic breaks must span [0, 1]")
            if not np.allclose(widths, widths[0], rtol=0, atol=1e-14):
                raise InvalidMeshError("periodic variant requires uniform breaks")
        else:
            p = self.degree
            if knots.size < 2 * (p + 1):
                raise InvalidMeshError("too few knots for an open space")
            if not (
                np.all(knots[: p + 1] == knots[0])
                and np.all(knots[-(p + 1):] == knots[-1])
            ):
                raise InvalidMeshError(
                    "open variant needs end knots repeated degree+1 times"
                )

    # -- sizes ----------------------------------------------------------
    @property
    def n_elements(self):
        if self.periodic:
            return self.knots.size - 1
        interior = self.knots[self.degree:-self.degree]
        return int(np.sum(np.diff(interior) > 0))

    @property
    def n_basis(self):
        if self.periodic:
            return self.n_elements
        return self.knots.size - self.degree - 1

    @property
    def breaks(self):
        if self.periodic:
            return self.knots
        return np.unique(self.knots)

    @classmethod
    def uniform(cls, n_elem, periodic):
        if n_elem < 2:
            raise InvalidMeshError("need at least 2 elements per axis")
        interior = np.linspace(0.0, 1.0, n_elem + 1)
        if periodic:
            return cls(DEGREE, interior, True)
        knots = np.concatenate(
            ([0.0] * DEGREE, interior, [1.0] * DEGREE)
        )
        return cls(DEGREE, knots, False)

    # -- evaluation ------------------------------------------------------
    def find_span(self, x):
        """Index of the knot span containing ``x`` (clamped at the right end)."""
        if self.periodic:
            k = int(np.floor(x * self.n_elements))
            return min(max(k, 0), self.n_elements - 1)
        knots, p = self.knots, self.degree
        s = int(np.searchsorted(knots, x, side="right")) - 1
        return min(max(s, p), knots.size - p - 2)

    def eval_at(self, x):
        """All nonzero basis functions at ``x``.

        Returns
        -------
        first : int
            Index of the first nonzero basis function (may need wrapping
            for the periodic variant; use ``dof_indices``).
        table : ndarray (degree+1, 3)
            Columns are value, first and second derivative.
        """
        if x < -1e-12 or x > 1.0 + 1e-12:
            raise DomainError(f"point {x} outside [0, 1]")
        x = min(max(x, 0.0), 1.0)
        if self.periodic:
            return self._eval_periodic(x)
        return self._eval_open(x)

    def _eval_periodic(self, x):
        # periodic parameter lives on the circle: 1.0 wraps to 0.0
        x = x % 1.0
        n = self.n_elements
        k = self.find_span(x)
        xi = x * n - k
        v = np.array([0.5 * (1 - xi) ** 2, 0.5 + xi * (1 - xi), 0.5 * xi**2])
        d1 = n * np.array([xi - 1.0, 1.0 - 2.0 * xi, xi])
        d2 = n * n * np.array([1.0, -2.0, 1.0])
        table = np.stack([v, d1, d2], axis=1)
        return k - 2, table

    def _eval_open(self, x):
        knots, p = self.knots, self.degree
        s = self.find_span(x)

        def dinv(a, b):
            d = knots[b] - knots[a]
            return 1.0 / d if d > 0.0 else 0.0

        # Degree-1 hats built from the degree-0 indicator of span s; the
        # zero-width convention (0/0 -> 0) handles the repeated end knots.
        n1 = np.zeros(4)  # indices s-2 .. s+1, degree 1
        for j, i in enumerate(range(s - 2, s + 2)):
            if i < 0 or i + 2 >= knots.size:
                continue
            acc = 0.0
            if i == s:
                acc += (x - knots[i]) * dinv(i, i + 1)
            if i + 1 == s:
                acc += (knots[i + 2] - x) * dinv(i + 1, i + 2)
            n1[j] = acc
        d1_1 = np.zeros(4)  # derivatives of the degree-1 hats
        for j, i in enumerate(range(s - 2, s + 2)):
            if i < 0 or i + 2 >= knots.size:
                continue
            acc = 0.0
            if i == s:
                acc += dinv(i, i + 1)
            if i + 1 == s:
                acc -= dinv(i + 1, i + 2)
            d1_1[j] = acc

        vals = np.zeros(3)
        der1 = np.zeros(3)
        der2 = np.zeros(3)
        for j, i in enumerate(range(s - 2, s + 1)):
            a = dinv(i, i + 2)
            b = dinv(i + 1, i + 3)
            vals[j] = (
                (x - knots[i]) * a * n1[j] + (knots[i + 3] - x) * b * n1[j + 1]
            )
            der1[j] = p * (a * n1[j] - b * n1[j + 1])
            der2[j] = p * (a * d1_1[j] - b * d1_1[j + 1])
        table = np.stack([vals, der1, der2], axis=1)
        return s - p, table

    def dof_indices(self, first):
        idx = np.arange(first, first + DEGREE + 1)
        if self.periodic:
            return idx % self.n_basis
        return idx

    @property
    def greville(self):
        if self.periodic:
            n = self.n_elements
            return ((np.arange(n) + 1.5) / n) % 1.0
        p = self.degree
        k = self.knots
        return np.array(
            [k[i + 1 : i + p + 1].mean() for i in range(self.n_basis)]
        )


def _axis_tables(kv, nq):
    """Per-element quadrature and basis tables for one direction.

    Returns (points (nel, nq), weights (nel, nq), basis (nel, nq, 3, 3),
    first_dof (nel,)); basis axis order is [element, point, local dof,
    derivative order].
    """
    breaks = kv.breaks
    nel = kv.n_elements
    xg, wg = gauss_legendre_01(nq)
    pts = np.empty((nel, nq))
    wts = np.empty((nel, nq))
    tab = np.empty((nel, nq, DEGREE + 1, 3))
    first = np.empty(nel, dtype=np.int64)
    for e in range(nel):
        a, b = breaks[e], breaks[e + 1]
        h = b - a
        pts[e] = a + h * xg
        wts[e] = h * wg
        for q in range(nq):
            f, t = kv.eval_at(pts[e, q])
            tab[e, q] = t
        first[e] = f
    return pts, wts, tab, first


# ---------------------------------------------------------------------------
# 3D tensor-product space
# ---------------------------------------------------------------------------
@dataclass
class SplineSpace:
    """Tensor product of three quadratic knot vectors with quadrature tables."""

    axes: tuple
    nq: int = QUAD_POINTS_PER_DIR
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.axes = tuple(self.axes)
        if len(self.axes) != 3:
            raise InvalidMeshError("SplineSpace needs exactly 3 axes")
        tabs = [_axis_tables(kv, self.nq) for kv in self.axes]
        self.qpoints = tuple(t[0] for t in tabs)
        self.qweights = tuple(t[1] for t in tabs)
        self.basis_tables = tuple(t[2] for t in tabs)
        self.first_dofs = tuple(t[3] for t in tabs)

    # -- sizes ----------------------------------------------------------
    @property
    def periodic(self):
        return self.axes[0].periodic

    @property
    def dofs_per_axis(self):
        return tuple(kv.n_basis for kv in self.axes)

    @property
    def n_elements(self):
        return tuple(kv.n_elements for kv in self.axes)

    @property
    def n_control_points(self):
        d = self.dofs_per_axis
        return d[0] * d[1] * d[2]

    def flat_dof(self, i1, i2, i3):
        d = self.dofs_per_axis
        return (i1 * d[1] + i2) * d[2] + i3

    @property
    def element_dofs(self):
        """(n_elements_total, 27) flat control-point ids, lexicographic elements."""
        if "element_dofs" not in self._cache:
            n1, n2, n3 = self.n_elements
            idx_axes = []
            for a, kv in enumerate(self.axes):
                rows = np.stack(
                    [kv.dof_indices(f) for f in self.first_dofs[a]]
                )  # (nel_a, 3)
                idx_axes.append(rows)
            i1 = idx_axes[0][:, None, None, :, None, None]
            i2 = idx_axes[1][None, :, None, None, :, None]
            i3 = idx_axes[2][None, None, :, None, None, :]
            d = self.dofs_per_axis
            flat = (i1 * d[1] + i2) * d[2] + i3
            self._cache["element_dofs"] = flat.reshape(n1 * n2 * n3, 27)
        return self._cache["element_dofs"]

    # -- point evaluation -------------------------------------------------
    def _eval_axes(self, X):
        out = []
        for a in range(3):
            f, t = self.axes[a].eval_at(X[a])
            out.append((self.axes[a].dof_indices(f), t))
        return out

    def eval_basis(self, X):
        """All 27 nonzero basis functions at a point.

        Returns a list of ``(dof_index, value, gradient, hessian)`` where
        ``dof_index`` is the (i1, i2, i3) multi-index, ``gradient`` has
        shape (3,) and ``hessian`` is the symmetric (3, 3) matrix of
        second derivatives.
        """
        axes = self._eval_axes(X)
        out = []
        for l1 in range(3):
            for l2 in range(3):
                for l3 in range(3):
                    t1, t2, t3 = axes[0][1][l1], axes[1][1][l2], axes[2][1][l3]
                    val = t1[0] * t2[0] * t3[0]
                    grad = np.array(
                        [
                            t1[1] * t2[0] * t3[0],
                            t1[0] * t2[1] * t3[0],
                            t1[0] * t2[0] * t3[1],
                        ]
                    )
                    hess = np.array(
                        [
                            [t1[2] * t2[0] * t3[0], t1[1] * t2[1] * t3[0], t1[1] * t2[0] * t3[1]],
                            [t1[1] * t2[1] * t3[0], t1[0] * t2[2] * t3[0], t1[0] * t2[1] * t3[1]],
                            [t1[1] * t2[0] * t3[1], t1[0] * t2[1] * t3[1], t1[0] * t2[0] * t3[2]],
                        ]
                    )
                    idx = (
                        int(axes[0][0][l1]),
                        int(axes[1][0][l2]),
                        int(axes[2][0][l3]),
                    )
                    out.append((idx, val, grad, hess))
        return out

    def boundary_cp_mask(self):
        """Control points in the outermost layer (empty for periodic spaces)."""
        d = self.dofs_per_axis
        mask = np.zeros(d, dtype=bool)
        if not self.periodic:
            mask[0, :, :] = mask[-1, :, :] = True
            mask[:, 0, :] = mask[:, -1, :] = True
            mask[:, :, 0] = mask[:, :, -1] = True
        return mask

    # -- field helpers ----------------------------------------------------
    def zero_field(self):
        return np.zeros(self.dofs_per_axis + (3,))

    def check_field(self, coeffs):
        expect = self.dofs_per_axis + (3,)
        if coeffs.shape != expect:
            raise InvalidMeshError(
                f"field shape {coeffs.shape} does not match space {expect}"
            )


def make_uniform_space(n_elem_per_axis, periodic=False):
    """Uniform space with ``n_elem_per_axis`` elements in each direction."""
    kv = KnotVector.uniform(n_elem_per_axis, periodic)
    return SplineSpace((kv, kv, kv))


def interpolate_field(space, coeffs, X):
    """Displacement, gradient and second gradient of a field at a point.

    Returns ``(u, grad_u, hess_u)`` with shapes (3,), (3, 3) and (3, 3, 3);
    ``grad_u[i, J] = u_i,J`` and ``hess_u[i, J, K] = u_i,JK``.
    """
    space.check_field(coeffs)
    axes = space._eval_axes(X)
    idx1, t1 = axes[0]
    idx2, t2 = axes[1]
    idx3, t3 = axes[2]
    local = coeffs[np.ix_(idx1, idx2, idx3)]  # (3,3,3,3comp)

    def contract(o1, o2, o3):
        return np.einsum(
            "a,b,c,abci->i", t1[:, o1], t2[:, o2], t3[:, o3], local
        )

    u = contract(0, 0, 0)
    grad = np.stack([contract(1, 0, 0), contract(0, 1, 0), contract(0, 0, 1)], axis=1)
    orders = {
        (0, 0): (2, 0, 0), (0, 1): (1, 1, 0), (0, 2): (1, 0, 1),
        (1, 1): (0, 2, 0), (1, 2): (0, 1, 1), (2, 2): (0, 0, 2),
    }
    hess = np.zeros((3, 3, 3))
    for (J, K), o in orders.items():
        v = contract(*o)
        hess[:, J, K] = v
        hess[:, K, J] = v
    return u, grad, hess


# ---------------------------------------------------------------------------
# Collocation / interpolation helpers
# ---------------------------------------------------------------------------
def axis_collocation_matrix(kv, points, order=0):
    """Dense matrix N_j^{(order)}(x_i) for one direction."""
    n = kv.n_basis
    A = np.zeros((len(points), n))
    for r, x in enumerate(points):
        f, t = kv.eval_at(x)
        idx = kv.dof_indices(f)
        A[r, idx] = t[:, order]
    return A


def greville_interpolate(space, values_fn):
    """Coefficients whose spline interpolates ``values_fn`` at Greville points.

    ``values_fn`` maps an (n, 3) array of points to (n, 3) displacement
    values.  Interpolation is the standard tensor-product collocation solve,
    one direction at a time.
    """
    grev = [kv.greville for kv in space.axes]
    G1, G2, G3 = np.meshgrid(*grev, indexing="ij")
    pts = np.stack([G1.ravel(), G2.ravel(), G3.ravel()], axis=1)
    vals = np.asarray(values_fn(pts), dtype=float).reshape(
        len(grev[0]), len(grev[1]), len(grev[2]), 3
    )
    coeffs = vals
    for a in range(3):
        A = axis_collocation_matrix(space.axes[a], grev[a])
        moved = np.moveaxis(coeffs, a, 0)
        solved = np.linalg.solve(A, moved.reshape(A.shape[0], -1))
        coeffs = np.moveaxis(solved.reshape(moved.shape), 0, a)
    return coeffs


def sample_on_lattice(space, coeffs, samples_per_axis):
    """Evaluate a field on a regular lattice; returns (points, u) arrays.

    The lattice has ``samples_per_axis`` points per direction including both
    faces.  Evaluation factorizes per axis, so this is cheap even for fine
    lattices.
    """
    space.check_field(coeffs)
    m = samples_per_axis
    xs = np.linspace(0.0, 1.0, m)
    mats = [axis_collocation_matrix(kv, xs) for kv in space.axes]
    u = np.einsum("ai,bj,ck,ijkx->abcx", *mats, coeffs)
    X1, X2, X3 = np.meshgrid(xs, xs, xs, indexing="ij")
    points = np.stack([X1.ravel(), X2.ravel(), X3.ravel()], axis=1)
    return points, u.reshape(-1, 3)


# ---------------------------------------------------------------------------
# Knot insertion
# ---------------------------------------------------------------------------
def _single_insertion_matrix(knots, p, xbar):
    """Boehm insertion of one knot; returns (new_knots, A) with Q = A @ P."""
    m = knots.size - p - 1
    k = int(np.searchsorted(knots, xbar, side="right")) - 1
    k = min(max(k, p), knots.size - p - 2)
    A = np.zeros((m + 1, m))
    for i in range(m + 1):
        if i <= k - p:
            alpha = 1.0
        elif i >= k + 1:
            alpha = 0.0
        else:
            alpha = (xbar - knots[i]) / (knots[i + p] - knots[i])
        if alpha != 0.0 and i < m:
            A[i, i] = alpha
        if alpha != 1.0 and i > 0:
            A[i, i - 1] += 1.0 - alpha
    new_knots = np.insert(knots, k + 1, xbar)
    return new_knots, A


def _axis_insertion_matrix(coarse_kv, fine_kv):
    if coarse_kv.periodic or fine_kv.periodic:
        raise RefinementError("knot insertion is only supported for open spaces")
    ck = list(coarse_kv.knots)
    fk = list(fine_kv.knots)
    # multiset difference fine - coarse; fails if coarse is not a subset
    to_insert = fk.copy()
    for x in ck:
        try:
            to_insert.remove(x)
        except ValueError:
            raise RefinementError(
                "fine knots are not a superset of coarse knots"
            ) from None
    knots = np.asarray(ck)
    T = np.eye(coarse_kv.n_basis)
    for x in sorted(to_insert):
        knots, A = _single_insertion_matrix(knots, DEGREE, x)
        T = A @ T
    if T.shape[0] != fine_kv.n_basis:
        raise RefinementError("inserted space does not match the fine space")
    return T


def knot_insert(coarse_space, coarse_coeffs, fine_space):
    """Represent a coarse-space field exactly on a nested fine space."""
    coarse_space.check_field(coarse_coeffs)
    coeffs = coarse_coeffs
    for a in range(3):
        T = _axis_insertion_matrix(coarse_space.axes[a], fine_space.axes[a])
        moved = np.moveaxis(coeffs, a, 0)
        out = (T @ moved.reshape(T.shape[1], -1)).reshape(
            (T.shape[0],) + moved.shape[1:]
        )
        coeffs = np.moveaxis(out, 0, a)
    return coeffs
