"""Gray-value rank relations between object classes in infrared images.

Extract class/background gray statistics from annotated images, measure how
stable the pairwise class order is across a dataset, and turn rank agreement
and stability into per-sample training weights.
"""

from importlib import resources

from .errors import (
    DomainError,
    InputError,
    ProcessingError,
    ThermorankError,
)

__version__ = "0.1.0"


def fixture_path(name: str):
    """Path to a bundled fixture such as ``"scene.json"``."""
    return resources.files(__package__) / "fixtures" / name


__all__ = [
    "DomainError",
    "InputError",
    "ProcessingError",
    "ThermorankError",
    "fixture_path",
    "__version__",
]
