"""Cross-modal knowledge distillation with mutual learning."""
from .nn_core import get_backend, set_backend

__version__ = "0.1.0"
__all__ = ["get_backend", "set_backend"]
