"""Long-horizon renewable forecasting + actor-critic grid dispatch toolkit."""

__version__ = "0.1.0"

from .kernels import BACKEND  # noqa: F401
