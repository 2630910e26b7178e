"""Three-directional deep low-rank tensor representation for tensor inpainting.

Submodules are imported on demand (``from deeprep import model``) so that the
command-line entry point can cap BLAS threads before numpy loads.
"""

__version__ = "0.1.0"
