"""Sparse multivariate polynomials with exact rational-free arithmetic.

Polynomials are stored as a map from exponent multi-indices (one small
integer per variable) to float coefficients.  The class supports the
operations needed to build the energy density symbolically at startup and
to differentiate/evaluate it in tests: ring arithmetic, partial and
directional derivatives, and vectorized evaluation on batches of points.

Terms whose coefficient collapses to exactly 0.0 are dropped, so the
stored support is always minimal.
"""

from __future__ import annotations

import numpy as np


class SparsePolynomial:
    """Polynomial in ``nvars`` variables, keyed by exponent tuples.

    Parameters
    ----------
    nvars : int
        Number of variables.
    terms : dict, optional
        Map ``exponent tuple -> coefficient``.  Zero coefficients are
        discarded.
    """

    __slots__ = ("nvars", "terms")

    def __init__(self, nvars, terms=None):
        self.nvars = int(nvars)
        self.terms = {}
        if terms:
            for expo, coeff in terms.items():
                if coeff != 0.0:
                    self.terms[tuple(expo)] = float(coeff)

    # ------------------------------------------------------------------
    # constructors
    # ------------------------------------------------------------------
    @classmethod
    def constant(cls, value, nvars):
        p = cls(nvars)
        if value != 0.0:
            p.terms[(0,) * nvars] = float(value)
        return p

    @classmethod
    def variable(cls, index, nvars):
        if not 0 <= index < nvars:
            raise IndexError(f"variable index {index} out of range")
        expo = [0] * nvars
        expo[index] = 1
        return cls(nvars, {tuple(expo): 1.0})

    def copy(self):
        p = SparsePolynomial(self.nvars)
        p.terms = dict(self.terms)
        return p

    # ------------------------------------------------------------------
    # ring arithmetic
    # ------------------------------------------------------------------
    def _require_same_vars(self, other):
        if self.nvars != other.nvars:
            raise ValueError("polynomials over different variable sets")

    def __add__(self, other):
        if np.isscalar(other):
            other = SparsePolynomial.constant(other, self.nvars)
        self._require_same_vars(other)
        out = self.copy()
        for expo, coeff in other.terms.items():
            new = out.terms.get(expo, 0.0) + coeff
            if new == 0.0:
                out.terms.pop(expo, None)
            else:
                out.terms[expo] = new
        return out

    __radd__ = __add__

    def __neg__(self):
        return SparsePolynomial(
            self.nvars, {e: -c for e, c in self.terms.items()}
        )

    def __sub__(self, other):
        if np.isscalar(other):
            other = SparsePolynomial.constant(other, self.nvars)
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if np.isscalar(other):
            if other == 0.0:
                return SparsePolynomial(self.nvars)
            return SparsePolynomial(
                self.nvars, {e: c * other for e, c in self.terms.items()}
            )
        self._require_same_vars(other)
        out = {}
        for ea, ca in self.terms.items():
            for eb, cb in other.terms.items():
                expo = tuple(x + y for x, y in zip(ea, eb))
                out[expo] = out.get(expo, 0.0) + ca * cb
        return SparsePolynomial(self.nvars, out)

    __rmul__ = __mul__

    def __pow__(self, exponent):
        if exponent < 0 or exponent != int(exponent):
            raise ValueError("only non-negative integer powers")
        result = SparsePolynomial.constant(1.0, self.nvars)
        base = self
        e = int(exponent)
        while e:
            if e & 1:
                result = result * base
            base = base * base if e > 1 else base
            e >>= 1
        return result

    # ------------------------------------------------------------------
    # calculus
    # ------------------------------------------------------------------
    def diff(self, var):
        """Partial derivative with respect to variable ``var``."""
        out = {}
        for expo, coeff in self.terms.items():
            k = expo[var]
            if k == 0:
                continue
            new = list(expo)
            new[var] = k - 1
            new = tuple(new)
            out[new] = out.get(new, 0.0) + coeff * k
        return SparsePolynomial(self.nvars, out)

    def directional_derivative(self, direction):
        """Return ``sum_i direction[i] * d/dx_i`` applied to this polynomial."""
        direction = np.asarray(direction, dtype=float)
        if direction.shape != (self.nvars,):
            raise ValueError("direction length must match nvars")
        out = SparsePolynomial(self.nvars)
        for i in np.nonzero(direction)[0]:
            out = out + self.diff(int(i)) * direction[i]
        return out

    # ------------------------------------------------------------------
    # queries
    # ------------------------------------------------------------------
    def total_degree(self):
        return max((sum(e) for e in self.terms), default=0)

    def degree_in(self, variables):
        """Maximum combined exponent over the given variable indices."""
        idx = list(variables)
        return max((sum(e[i] for i in idx) for e in self.terms), default=0)

    def __len__(self):
        return len(self.terms)

    # ------------------------------------------------------------------
    # evaluation
    # ------------------------------------------------------------------
    def evaluate(self, points):
        """Evaluate at one point (1d array) or a batch (n, nvars).

        Uses per-variable power tables so repeated exponents cost one
        multiply each; exact for integer powers.
        """
        pts = np.asarray(points, dtype=float)
        single = pts.ndim == 1
        if single:
            pts = pts[None, :]
        if pts.shape[1] != self.nvars:
            raise ValueError(f"points must have {self.nvars} columns")
        n = pts.shape[0]

        max_exp = np.zeros(self.nvars, dtype=int)
        for expo in self.terms:
            np.maximum(max_exp, expo, out=max_exp)
        powers = {}
        for v in np.nonzero(max_exp)[0]:
            v = int(v)
            tab = np.empty((max_exp[v] + 1, n))
            tab[0] = 1.0
            for k in range(1, max_exp[v] + 1):
                tab[k] = tab[k - 1] * pts[:, v]
            powers[v] = tab

        out = np.zeros(n)
        for expo, coeff in self.terms.items():
            term = np.full(n, coeff)
            for v, k in enumerate(expo):
                if k:
                    term = term * powers[v][k]
            out += term
        return out[0] if single else out

    def __call__(self, points):
        return self.evaluate(points)

    def __repr__(self):
        return (
            f"SparsePolynomial(nvars={self.nvars}, nterms={len(self.terms)}, "
            f"total_degree={self.total_degree()})"
        )
