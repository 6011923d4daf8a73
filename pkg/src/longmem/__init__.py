"""Long-memory process generators, classical Hurst estimators and a CNN estimator."""

__version__ = "0.1.0"
