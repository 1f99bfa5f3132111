"""Lane-change forecasting on highway trajectories with a from-scratch stacked LSTM."""

__version__ = "0.1.0"
