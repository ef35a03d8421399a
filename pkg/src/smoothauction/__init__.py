"""Revenue of lottery menus versus simple mechanisms under smoothed valuations."""

from . import analysis, constructions, distributions, geometry, mechanisms, perturbation

__all__ = ["analysis", "constructions", "distributions", "geometry", "mechanisms", "perturbation"]
__version__ = "0.1.0"
