"""Quench dynamics and dynamical topology of a 3D chiral topological model.

Modules
-------
model       Bloch Hamiltonian, gamma matrices, equilibrium winding oracle.
dynamics    Quench evolution and time-averaged spin textures.
prep        Pre-quench state preparation and pulse compilation.
bismesh     Band-inversion surface reconstruction as a closed triangle mesh.
invariants  Spin textures on the surface and their windings.
charges     Topological charges in the bulk and their trajectories.
noise       Photon-count readout emulation and Monte Carlo error propagation.
cli         Command-line front end.
"""

__version__ = "0.1.0"

from .model import GAMMA, GapClosedError, ModelParams, equilibrium_winding, h_vector  # noqa: E402
from .dynamics import QuenchSpec, time_avg_polarization  # noqa: E402

__all__ = [
    "GAMMA",
    "GapClosedError",
    "ModelParams",
    "QuenchSpec",
    "equilibrium_winding",
    "h_vector",
    "time_avg_polarization",
    "__version__",
]
