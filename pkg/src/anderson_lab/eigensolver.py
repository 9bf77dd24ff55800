"""Smallest eigenpairs of lattice Hamiltonians.

The solver is a thick-restart Lanczos iteration with full (two-pass
Gram-Schmidt) reorthogonalisation.  It runs either on ``H`` directly or on the
shifted inverse ``(H - sigma)^{-1}`` with ``sigma`` below the Gershgorin
bound, so ``H - sigma`` is positive definite and the ordering of the wanted
eigenvalues is preserved.  Inner solves use a sparse LU factorisation or
matrix-free conjugate gradients on the compiled stencil.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg
from scipy.sparse.linalg import LinearOperator, cg, splu

from . import kernels

DEFAULT_TOL = 1e-10


class ConvergenceError(RuntimeError):
    """Raised when the requested residual tolerance is not met.

    ``residuals`` holds the best residual reached for each wanted pair.
    """

    def __init__(self, message, eigenvalues=None, residuals=None):
        super().__init__(message)
        self.eigenvalues = eigenvalues
        self.residuals = residuals


class DegenerateEigenvalueError(ValueError):
    """Raised when a derivative is requested for a (numerically) multiple eigenvalue."""


@dataclass
class SpectralResult:
    """k smallest eigenpairs; eigenvectors normalised so that ``a^d sum phi^2 = 1``."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    residuals: np.ndarray
    centers: list
    center_coordinates: np.ndarray
    grid: object = None
    solver_stats: dict = field(default_factory=dict)

    @property
    def k(self):
        return len(self.eigenvalues)

    def vector(self, n, shaped=True):
        """``phi_n`` (1-based ``n``) as a grid-shaped array."""
        v = self.eigenvectors[:, n - 1]
        return v.reshape(self.grid.shape) if shaped and self.grid is not None else v


def _orthonormalize_against(V, w):
    """Two passes of classical Gram-Schmidt; returns (w, coefficients)."""
    if V.shape[0] == 0:
        return w, np.zeros(0)
    h = V @ w
    w = w - h @ V
    h2 = V @ w
    w = w - h2 @ V
    return w, h + h2


class _ShiftInvert:
    def __init__(self, H, sigma, inner, inner_tol):
        self.H = H
        self.sigma = sigma
        self.inner = inner
        self.inner_tol = inner_tol
        self.inner_iterations = 0
        if inner == "splu":
            self._lu = splu(H.to_sparse(shift=sigma).tocsc(), permc_spec="MMD_AT_PLUS_A")
        elif inner == "cg":
            n = H.size
            shifted = H.diag - sigma
            self._op = LinearOperator(
                (n, n), dtype=np.float64,
                matvec=lambda u: kernels.stencil_matvec(shifted, np.ascontiguousarray(u),
                                                        H.inv_a2, H.grid.d, H.grid.n))
        else:
            raise ValueError(f"unknown inner solver {inner!r}")

    def __call__(self, v):
        if self.inner == "splu":
            return self._lu.solve(v)
        count = [0]

        def cb(_):
            count[0] += 1

        x, _ = cg(self._op, v, rtol=self.inner_tol, atol=0.0, maxiter=20 * self.H.size,
                  callback=cb)
        self.inner_iterations += count[0]
        return x


def _lanczos(apply, n, nev, largest, basis_size, max_restarts, rng, converged, deflate=None):
    """Thick-restart Lanczos for the ``nev`` extreme eigenpairs of a symmetric ``apply``.

    ``converged(theta, Y)`` returns a boolean mask over the wanted Ritz pairs;
    ``deflate`` is an optional orthonormal block (rows) kept out of the basis.
    """
    m = min(basis_size, n - (0 if deflate is None else deflate.shape[0]))
    m = max(m, nev + 1) if n > nev else nev
    V = np.zeros((m + 1, n))
    T = np.zeros((m, m))

    def fresh(basis_rows):
        v = rng.standard_normal(n)
        for block in (deflate, basis_rows):
            if block is not None and block.shape[0]:
                v, _ = _orthonormalize_against(block, v)
        return v / np.linalg.norm(v)

    V[0] = fresh(None)
    p = 0
    applications = 0
    theta = Y = None
    for restart in range(max_restarts + 1):
        beta = 0.0
        j = p
        while j < m:
            w = apply(V[j])
            applications += 1
            if deflate is not None:
                w, _ = _orthonormalize_against(deflate, w)
            w, h = _orthonormalize_against(V[: j + 1], w)
            T[: j + 1, j] = h
            T[j, : j + 1] = h
            beta = np.linalg.norm(w)
            if beta <= 1e-13 * max(1.0, np.abs(h).max()):
                # invariant subspace: continue with an unrelated direction
                V[j + 1] = fresh(V[: j + 1])
                beta = 0.0
            else:
                V[j + 1] = w / beta
            j += 1
        evals, S = linalg.eigh(T[:m, :m])
        order = np.argsort(evals)[::-1] if largest else np.argsort(evals)
        evals, S = evals[order], S[:, order]
        theta = evals[:nev]
        Y = S[:, :nev].T @ V[:m]
        mask = converged(theta, Y, np.abs(beta * S[m - 1, :nev]))
        if np.all(mask) or restart == max_restarts or m >= n:
            break
        # keep the best Ritz vectors plus the continuation vector
        p = min(max(nev + (m - nev) // 2, nev + 1), m - 1)
        keep = S[:, :p]
        Vp = keep.T @ V[:m]
        last = V[m].copy()
        V[:] = 0.0
        V[:p] = Vp
        V[p] = last
        T[:] = 0.0
        # couplings between kept Ritz vectors and V[p] are recomputed on expansion
        T[:p, :p] = np.diag(evals[:p])
    return theta, Y, applications, restart


def _explicit_residuals(H, Y):
    lam = np.array([y @ H.matvec(y) for y in Y])
    res = np.array([np.linalg.norm(H.matvec(y) - l * y) for y, l in zip(Y, lam)])
    return lam, res


def _rayleigh_ritz(H, Y):
    """Refine a block of approximate eigenvectors with a Rayleigh-Ritz step on H."""
    Q, _ = np.linalg.qr(Y.T)
    HQ = np.column_stack([H.matvec(q) for q in Q.T])
    evals, S = linalg.eigh(Q.T @ HQ)
    return evals, (Q @ S).T


def smallest_eigenpairs(H, k=1, tol=DEFAULT_TOL, max_iter=None, mode="shift_invert",
                        inner="auto", seed=0, basis_size=None, check_multiplicity=None):
    """The ``k`` algebraically smallest eigenpairs of ``H``.

    Parameters
    ----------
    H : HamiltonianOperator
    k : int
        Number of eigenpairs.
    tol : float
        Absolute residual ``||H u - lambda u||`` for l2-unit ``u``.  It is raised
        to ``32 eps ||H||`` when the requested value is below round-off.
    max_iter : int, optional
        Maximum number of restarts.
    mode : {"shift_invert", "plain"}
    inner : {"auto", "splu", "cg"}
        Inner solver in shift-invert mode; ``auto`` uses LU for d <= 2.
    seed : int
        Seed of the Lanczos start vector; the result is deterministic given it.
    check_multiplicity : bool, optional
        Run a deflated search for eigenvalues missed because of exact
        degeneracy.  Defaults to ``d >= 2`` (Dirichlet tridiagonal matrices in
        d = 1 have simple spectrum).

    Returns
    -------
    SpectralResult
    """
    n = H.size
    if not 1 <= k <= n:
        raise ValueError(f"k={k} outside [1, {n}]")
    if not tol > 0:
        raise ValueError("tol must be positive")
    lo, hi = H.gershgorin_bounds()
    norm_est = max(abs(lo), abs(hi))
    tol_eff = max(tol, 32 * np.finfo(float).eps * norm_est)
    if check_multiplicity is None:
        check_multiplicity = H.grid.d >= 2
    rng = np.random.default_rng(seed)
    stats = {"mode": mode, "tol": tol_eff}

    if n <= 24:
        evals, vecs = linalg.eigh(H.dense())
        Y = vecs[:, :k].T
        stats.update(method="dense", iterations=0, restarts=0)
        return _finish(H, evals[:k], Y, stats)

    if mode == "shift_invert":
        if inner == "auto":
            inner = "splu" if H.grid.d <= 2 else "cg"
        sigma = lo - 1.0
        op = _ShiftInvert(H, sigma, inner, inner_tol=1e-14)
        apply, largest = op, True
        m = basis_size or max(2 * k + 20, 40)
        restarts = max_iter or 60
        stats.update(inner=inner, shift=sigma)
    elif mode == "plain":
        apply, largest = H.matvec, False
        m = basis_size or max(4 * k + 60, 100)
        restarts = max_iter or 400
    else:
        raise ValueError(f"unknown mode {mode!r}")

    best = {}

    def converged(theta, Y, est):
        lam, res = _explicit_residuals(H, Y)
        best["lam"], best["res"] = lam, res
        return res <= tol_eff

    theta, Y, applications, used = _lanczos(apply, n, k, largest, m, restarts, rng, converged)
    lam, Y = _rayleigh_ritz(H, Y)
    _, res = _explicit_residuals(H, Y)
    if check_multiplicity and k < n:
        lam, Y, extra = _multiplicity_sweep(H, apply, largest, lam, Y, tol_eff, m, restarts, rng)
        applications += extra
        _, res = _explicit_residuals(H, Y)
    stats.update(method="lanczos", iterations=applications, restarts=used)
    if isinstance(apply, _ShiftInvert):
        stats["inner_iterations"] = apply.inner_iterations
    if np.any(res > tol_eff):
        raise ConvergenceError(
            f"residuals {res} above tolerance {tol_eff:.2e} after {used} restarts",
            eigenvalues=lam, residuals=res)
    return _finish(H, lam, Y, stats)


def _multiplicity_sweep(H, apply, largest, lam, Y, tol, m, restarts, rng):
    """Search the orthogonal complement of ``Y`` for eigenvalues below ``lam[-1]``."""
    k = len(lam)
    applications = 0
    for _ in range(k):
        Q, _ = np.linalg.qr(Y.T)
        block = Q.T.copy()

        def conv(theta, Z, est):
            _, res = _explicit_residuals(H, Z)
            return res <= tol

        _, Z, used_apps, _ = _lanczos(apply, H.size, 1, largest, m, restarts, rng, conv,
                                      deflate=block)
        applications += used_apps
        z_lam = Z[0] @ H.matvec(Z[0])
        if z_lam >= lam[-1] - tol:
            break
        Y = np.vstack([Y, Z])
        lam, Y = _rayleigh_ritz(H, Y)
        lam, Y = lam[:k], Y[:k]
    return lam, Y, applications


def _finish(H, lam, Y, stats):
    grid = H.grid
    order = np.argsort(lam, kind="stable")
    lam = np.asarray(lam)[order]
    Y = np.asarray(Y)[order]
    Y = Y / np.linalg.norm(Y, axis=1)[:, None]
    centers, coords = [], []
    for i in range(len(Y)):
        flat = int(np.argmax(np.abs(Y[i])))
        if Y[i, flat] < 0:
            Y[i] = -Y[i]
        idx = tuple(int(c) for c in np.unravel_index(flat, grid.shape))
        centers.append(idx)
        coords.append(grid.site_coordinate(idx))
    _, res = _explicit_residuals(H, Y)
    vecs = (Y * grid.a ** (-grid.d / 2.0)).T
    return SpectralResult(eigenvalues=lam, eigenvectors=np.ascontiguousarray(vecs),
                          residuals=res, centers=centers,
                          center_coordinates=np.array(coords), grid=grid, solver_stats=stats)


def principal_eigenvalue(H, tol=DEFAULT_TOL, **kw):
    return float(smallest_eigenpairs(H, 1, tol=tol, **kw).eigenvalues[0])


def eigenvalue_gradient(H, pair_index=1, spectrum=None, tol=DEFAULT_TOL):
    """Derivative of ``lambda_n`` with respect to each site value ``V_i``.

    First-order perturbation gives ``a^d phi_n(i)^2``; the entries sum to one.
    Raises :class:`DegenerateEigenvalueError` if ``lambda_n`` is within
    ``10 tol`` of a neighbour.
    """
    n = pair_index
    if spectrum is None or spectrum.k < n + 1:
        spectrum = smallest_eigenpairs(H, min(n + 1, H.size), tol=tol)
    lam = spectrum.eigenvalues
    gaps = []
    if n >= 2:
        gaps.append(lam[n - 1] - lam[n - 2])
    if n < len(lam):
        gaps.append(lam[n] - lam[n - 1])
    if gaps and min(gaps) <= 10 * tol:
        raise DegenerateEigenvalueError(f"lambda_{n} is not simple (gap {min(gaps):.2e})")
    phi = spectrum.vector(n)
    return H.grid.cell_volume * phi**2


def count_below(H, x):
    """Number of eigenvalues ``< x`` for a d = 1 operator (Sturm sequence)."""
    if H.grid.d != 1:
        raise ValueError("Sturm counts are only available for d = 1")
    return int(kernels.sturm_count(np.ascontiguousarray(H.diag), -H.inv_a2, float(x)))
