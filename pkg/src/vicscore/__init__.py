"""Clinical risk scores from ensemble Shapley variable importance."""

__version__ = "0.1.0"
