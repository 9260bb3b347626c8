"""Multiscale infrared flow for truncated Pauli-Fierz fiber Hamiltonians."""

from .errors import *  # noqa: F401,F403
from .params import ModelParams

__version__ = "0.1.0"
