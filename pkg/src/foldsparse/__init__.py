"""Folding and sparsity design-space exploration for dataflow QNN accelerators."""

from importlib import resources

__version__ = "0.1.0"


def lenet5_path():
    """Path of the bundled LeNet-5 descriptor."""
    return resources.files(__name__) / "data" / "lenet5" / "lenet5.json"
