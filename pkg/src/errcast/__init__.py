"""errcast: anticipate language-model errors from input-side token likelihoods.

The library turns per-token likelihood traces of a prompt into information
measures (surprisal, entropy, confidence-weighted surprisal, contextual
influence), assembles span-localized feature vectors, and trains small
classifiers that predict whether the model will answer the prompt wrong --
before any generation happens.
"""

__version__ = "0.1.0"

from errcast.corpus import ErrorLabel, ExampleRecord, UNPARSEABLE
from errcast.measures import CwsConfig, Measure, MeasureSeries
from errcast.toy_lm import BigramModel
from errcast.trace import TokenStep, TokenTrace

__all__ = [
    "BigramModel",
    "CwsConfig",
    "ErrorLabel",
    "ExampleRecord",
    "Measure",
    "MeasureSeries",
    "TokenStep",
    "TokenTrace",
    "UNPARSEABLE",
]
