"""Light-field baseline extension by view extrapolation on sheared EPI volumes."""

from .kernels import BACKEND

__version__ = "0.1.0"

__all__ = ["BACKEND", "__version__"]
