"""Non-parallel speech enhancement with cascaded magnitude and complex cycles."""

from . import attention, complex_nn, data, discriminators, dsp, generators
from . import losses, metrics, toy, training

__all__ = ["attention", "complex_nn", "data", "discriminators", "dsp",
           "generators", "losses", "metrics", "toy", "training"]

__version__ = "0.1.0"
