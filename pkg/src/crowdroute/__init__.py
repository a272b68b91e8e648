"""Route planning over road networks enriched with spatial relations mined
from travel blogs."""

from .mixture import EmConfig, GreedyGaussianMixture, MixtureModel, greedy_fit
from .features import PairFeatures

__version__ = "0.1.0"

__all__ = ["EmConfig", "GreedyGaussianMixture", "MixtureModel", "PairFeatures", "greedy_fit",
           "__version__"]
