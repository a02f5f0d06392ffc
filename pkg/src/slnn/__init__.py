"""slnn: gridded sea-level-anomaly forecasting.

Hand-built LSTM and CNN+ConvLSTM forecasting networks (reverse-mode
autodiff, Adam, masked losses) plus a per-cell harmonic regression
baseline, a binary grid-series format, and the evaluation protocol that
compares them.
"""

__version__ = "0.1.0"

from slnn.backend import BACKEND, USE_NUMBA

__all__ = ["BACKEND", "USE_NUMBA", "__version__"]
