"""Dirichlet lattices for boxes ``offset + (0, L)^d`` and noise fields on them."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import integrate, ndimage

SURFACE_AREA = {1: 2.0, 2: 2.0 * np.pi, 3: 4.0 * np.pi}


@dataclass(frozen=True)
class LatticeGrid:
    """Interior sites of a cubic box with Dirichlet boundary.

    Site ``i`` on every axis sits at ``offset + a * (i + 1)`` for
    ``i = 0 .. n - 1``, so the box edges ``offset`` and ``offset + L`` carry the
    (implicit) zero boundary values.
    """

    d: int
    L: float
    n: int
    a: float
    offset: tuple

    def __post_init__(self):
        if self.d not in (1, 2, 3):
            raise ValueError(f"dimension must be 1, 2 or 3, got {self.d}")
        if self.n < 1:
            raise ValueError("need at least one interior point per side")
        if not self.a > 0:
            raise ValueError("spacing must be positive")
        if len(self.offset) != self.d:
            raise ValueError("offset must have one coordinate per axis")

    @property
    def shape(self):
        return (self.n,) * self.d

    @property
    def size(self):
        return self.n**self.d

    @property
    def cell_volume(self):
        return self.a**self.d

    def axis(self, j=0):
        """Coordinates of the interior sites along axis ``j``."""
        return self.offset[j] + self.a * np.arange(1, self.n + 1)

    def coordinates(self):
        """Array of shape ``(size, d)`` with site coordinates in C order."""
        axes = [self.axis(j) for j in range(self.d)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.reshape(-1) for m in mesh], axis=1)

    def site_coordinate(self, index):
        return np.array([self.offset[j] + self.a * (index[j] + 1) for j in range(self.d)])

    def to_dict(self):
        return {"d": self.d, "L": self.L, "n": self.n, "a": self.a, "offset": list(self.offset)}


def build_grid(d, L, points_per_unit, offset=None):
    """Grid with ``n = round(L * points_per_unit) - 1`` interior points per side.

    ``offset`` is the lower corner (scalar or per-axis); by default the box is
    centred, ``(-L/2, L/2)^d``.
    """
    if d not in (1, 2, 3):
        raise ValueError(f"dimension must be 1, 2 or 3, got {d}")
    if not L > 0:
        raise ValueError("box length must be positive")
    if points_per_unit < 2:
        raise ValueError("points_per_unit must be at least 2")
    n = int(round(L * points_per_unit)) - 1
    if n < 1:
        raise ValueError(f"L={L}, points_per_unit={points_per_unit} gives no interior point")
    if offset is None:
        offset = (-L / 2.0,) * d
    elif np.isscalar(offset):
        offset = (float(offset),) * d
    offset = tuple(float(o) for o in offset)
    return LatticeGrid(d=d, L=float(L), n=n, a=float(L) / (n + 1), offset=offset)


@dataclass(frozen=True)
class PotentialField:
    """Per-site potential values on a grid.

    ``kind`` is one of ``"white_noise"``, ``"mollified"``, ``"deterministic"``;
    ``params`` records how the field was produced (beta, seed, eps, ...).
    """

    grid: LatticeGrid
    values: np.ndarray
    kind: str = "deterministic"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.size != self.grid.size:
            raise ValueError(f"{vals.size} values for {self.grid.size} sites")
        vals = vals.reshape(self.grid.shape)
        if vals.flags.writeable:
            vals = vals.copy()
            vals.flags.writeable = False
        object.__setattr__(self, "values", vals)

    @property
    def flat(self):
        return self.values.reshape(-1)

    def l2_norm_sq(self):
        """Discrete ``||V||^2 = a^d sum V_i^2``."""
        return float(self.grid.cell_volume * np.sum(self.values**2))


def deterministic_field(grid, values):
    return PotentialField(grid, np.asarray(values, dtype=float), "deterministic", {})


def sample_white_noise(grid, beta, seed):
    """I.i.d. centred Gaussians with standard deviation ``beta * a^(-d/2)``.

    ``seed`` may be an int, a ``SeedSequence`` or a ``Generator``; equal seeds
    give bit-identical fields.
    """
    if not beta > 0:
        raise ValueError("beta must be positive")
    rng = np.random.default_rng(seed)
    std = beta * grid.a ** (-grid.d / 2.0)
    values = std * rng.standard_normal(grid.shape)
    params = {"beta": float(beta)}
    if isinstance(seed, (int, np.integer)):
        params["seed"] = int(seed)
    return PotentialField(grid, values, "white_noise", params)


# --- mollifier ---------------------------------------------------------------


def _bump(r):
    r = np.asarray(r, dtype=float)
    out = np.zeros_like(r)
    inside = r < 1.0
    out[inside] = np.exp(-1.0 / (1.0 - r[inside] ** 2))
    return out


@lru_cache(maxsize=None)
def bump_normalization(d):
    """Constant ``c`` making ``c * exp(-1/(1-|x|^2))`` a unit-mass density on R^d."""
    radial, _ = integrate.quad(lambda r: r ** (d - 1) * np.exp(-1.0 / (1.0 - r * r)), 0.0, 1.0,
                               epsabs=0.0, epsrel=1e-13, limit=200)
    return 1.0 / (SURFACE_AREA[d] * radial)


@dataclass(frozen=True)
class MollifierSpec:
    """Even, compactly supported unit-mass kernel ``rho_eps = eps^-d rho(x/eps)``."""

    eps: float
    d: int = 1

    def __post_init__(self):
        if not self.eps > 0:
            raise ValueError("mollifier scale must be positive")

    def profile(self, r):
        """``rho(r)`` at unit scale, as a function of the radius."""
        return bump_normalization(self.d) * _bump(r)

    def __call__(self, x):
        """Evaluate ``rho_eps`` at points ``x`` (shape ``(..., d)`` or radii for d=1)."""
        x = np.asarray(x, dtype=float)
        r = np.abs(x) if self.d == 1 and x.ndim <= 1 else np.linalg.norm(x, axis=-1)
        return self.eps ** (-self.d) * self.profile(r / self.eps)

    def self_convolution_at_zero(self):
        """``rho_eps * rho_eps (0) = int rho_eps^2`` by radial quadrature."""
        d = self.d
        c = bump_normalization(d)
        val, _ = integrate.quad(lambda r: r ** (d - 1) * (c * _bump(r)) ** 2, 0.0, 1.0,
                                epsabs=0.0, epsrel=1e-12, limit=200)
        return SURFACE_AREA[d] * val * self.eps ** (-d)


def mollifier_weights(grid, moll):
    """Mollifier sampled on the lattice around the origin, normalised to unit discrete mass."""
    half = int(np.floor(moll.eps / grid.a))
    ticks = grid.a * np.arange(-half, half + 1)
    mesh = np.meshgrid(*([ticks] * grid.d), indexing="ij")
    pts = np.stack(mesh, axis=-1)
    w = moll(pts if grid.d > 1 else pts[..., 0])
    total = w.sum()
    if total <= 0:
        # eps == a: only the centre survives
        w = np.zeros_like(w)
        w[(half,) * grid.d] = 1.0
        return w
    return w / total


def mollify_noise(field, moll):
    """Discrete convolution of a white-noise field with ``rho_eps``.

    Near the boundary the truncated kernel is renormalised by its remaining
    mass, so constants are reproduced exactly everywhere.
    """
    if field.kind != "white_noise":
        raise ValueError("mollify_noise expects a white-noise field")
    grid = field.grid
    if moll.d != grid.d:
        raise ValueError("mollifier and grid dimensions differ")
    if moll.eps < 2 * grid.a:
        raise ValueError(f"eps={moll.eps} below 2a={2 * grid.a}: mollifier not resolvable")
    return _apply_mollifier(field, moll)


def _apply_mollifier(field, moll):
    grid = field.grid
    w = mollifier_weights(grid, moll)
    num = ndimage.correlate(np.asarray(field.values), w, mode="constant", cval=0.0)
    mass = ndimage.correlate(np.ones(grid.shape), w, mode="constant", cval=0.0)
    params = dict(field.params)
    params["eps"] = float(moll.eps)
    return PotentialField(grid, num / mass, "mollified", params)


# --- sub-boxes ----------------------------------------------------------------


def _lattice_steps(length, a, what):
    steps = length / a
    k = int(round(steps))
    if abs(steps - k) > 1e-8 * max(1.0, abs(steps)):
        raise ValueError(f"{what} ({length}) is not a multiple of the spacing {a}")
    return k


def sub_grid(master, lower, upper):
    """Grid of the box ``prod_j (lower_j, upper_j)`` on the lattice of ``master``.

    Both corners must be lattice points of ``master`` (or its box edges) and
    the box must lie inside the master box.
    """
    d = master.d
    lower = np.broadcast_to(np.asarray(lower, dtype=float), (d,))
    upper = np.broadcast_to(np.asarray(upper, dtype=float), (d,))
    sizes = []
    for j in range(d):
        i0 = _lattice_steps(lower[j] - master.offset[j], master.a, "sub-box corner offset")
        i1 = _lattice_steps(upper[j] - master.offset[j], master.a, "sub-box corner offset")
        if i0 < 0 or i1 > master.n + 1:
            raise ValueError("sub-box leaves the master box")
        sizes.append(i1 - i0)
    if len(set(sizes)) != 1:
        raise ValueError("sub-box must be a cube")
    if sizes[0] < 2:
        raise ValueError("sub-box has no interior site")
    L = sizes[0] * master.a
    offset = tuple(master.offset[j] + master.a * round((lower[j] - master.offset[j]) / master.a)
                   for j in range(d))
    return LatticeGrid(d=d, L=float(L), n=sizes[0] - 1, a=master.a, offset=offset)


def restrict_field(field, sub):
    """Values of ``field`` on the interior sites of the aligned sub-grid ``sub``.

    The result shares the master's random sample, so potentials on nested or
    disjoint boxes are coupled exactly.
    """
    master = field.grid
    if sub.d != master.d or abs(sub.a - master.a) > 1e-12 * master.a:
        raise ValueError("sub-grid spacing or dimension differs from the master grid")
    start = []
    for j in range(master.d):
        i0 = _lattice_steps(sub.offset[j] - master.offset[j], master.a, "sub-grid offset")
        if i0 < 0 or i0 + sub.n > master.n:
            raise ValueError("sub-grid leaves the master box")
        start.append(i0)
    idx = tuple(slice(s, s + sub.n) for s in start)
    params = dict(field.params)
    params["restricted_from"] = master.to_dict()
    return PotentialField(sub, np.asarray(field.values)[idx], field.kind, params)
