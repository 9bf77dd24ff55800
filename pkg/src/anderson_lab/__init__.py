"""Smallest eigenvalues of lattice approximations to the Anderson Hamiltonian ``-Delta + xi``."""

__version__ = "0.1.0"

from .kernels import BACKEND  # noqa: E402
from .lattice import LatticeGrid, PotentialField, build_grid, sample_white_noise  # noqa: E402
from .hamiltonian import HamiltonianOperator, assemble  # noqa: E402
from .eigensolver import SpectralResult, smallest_eigenpairs  # noqa: E402
from .renorm import RenormConstant, renorm_constant  # noqa: E402

__all__ = [
    "__version__", "BACKEND", "LatticeGrid", "PotentialField", "build_grid", "sample_white_noise",
    "HamiltonianOperator", "assemble", "SpectralResult", "smallest_eigenpairs", "RenormConstant",
    "renorm_constant",
]
