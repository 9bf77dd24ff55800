"""Sparse Dirichlet Schrodinger operators ``-Delta_a + V + C`` on a lattice."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import LinearOperator

from . import kernels
from .lattice import LatticeGrid, PotentialField
from .renorm import RenormConstant, zero_renorm

DENSE_LIMIT = 10_000


@dataclass(frozen=True)
class HamiltonianOperator:
    """``(H u)_i = a^-2 sum_{j~i} (u_i - u_j) + (V_i + C) u_i`` with zero outside the box.

    ``diag`` holds ``2d/a^2 + V + C`` flattened in C order; the operator is
    never stored as a dense matrix.
    """

    grid: LatticeGrid
    potential: PotentialField
    renorm: RenormConstant
    diag: np.ndarray

    @property
    def size(self):
        return self.grid.size

    @property
    def inv_a2(self):
        return 1.0 / self.grid.a**2

    def matvec(self, u, out=None):
        return matvec(self, u, out)

    def gershgorin_bounds(self):
        """Interval containing the whole spectrum."""
        spread = 2 * self.grid.d * self.inv_a2
        return float(self.diag.min() - spread), float(self.diag.max() + spread)

    def as_linear_operator(self):
        return LinearOperator((self.size, self.size), matvec=self.matvec, rmatvec=self.matvec,
                              dtype=np.float64)

    def to_sparse(self, shift=0.0):
        """CSR matrix of ``H - shift``."""
        n, d = self.grid.n, self.grid.d
        lap1 = sparse.diags([np.ones(n - 1), np.ones(n - 1)], [-1, 1], format="csr")
        eye = sparse.identity(n, format="csr")
        off = sparse.csr_matrix((self.size, self.size))
        for axis in range(d):
            factors = [eye] * d
            factors[axis] = lap1
            term = factors[0]
            for f in factors[1:]:
                term = sparse.kron(term, f, format="csr")
            off = off + term
        return (sparse.diags(self.diag - shift, format="csr") - self.inv_a2 * off).tocsr()

    def dense(self):
        if self.size > DENSE_LIMIT:
            raise MemoryError(f"refusing to densify an operator with {self.size} sites")
        return self.to_sparse().toarray()

    def rayleigh_quotient(self, u):
        u = np.asarray(u, dtype=float).reshape(-1)
        return float(u @ self.matvec(u) / (u @ u))

    def with_potential(self, values):
        """Same grid and renormalisation, new potential values."""
        field = PotentialField(self.grid, values, "deterministic", {})
        return assemble(self.grid, field, self.renorm)


def assemble(grid, potential, renorm=None):
    """Build ``-Delta_a + V + C`` for ``potential`` on ``grid``."""
    if potential.grid != grid:
        raise ValueError("potential lives on a different grid")
    if renorm is None:
        renorm = zero_renorm(grid.d, grid.a)
    if renorm.d != grid.d:
        raise ValueError("renormalisation constant has the wrong dimension")
    diag = 2.0 * grid.d / grid.a**2 + potential.flat + renorm.value
    diag = np.ascontiguousarray(diag, dtype=np.float64)
    diag.flags.writeable = False
    return HamiltonianOperator(grid, potential, renorm, diag)


def matvec(H, u, out=None):
    """Apply the stencil to a site vector of length ``H.size``."""
    u = np.ascontiguousarray(u, dtype=np.float64).reshape(-1)
    if u.shape[0] != H.size:
        raise ValueError(f"vector of length {u.shape[0]} for {H.size} sites")
    return kernels.stencil_matvec(H.diag, u, H.inv_a2, H.grid.d, H.grid.n, out)
