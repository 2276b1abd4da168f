"""Graph convolutional ADMET property prediction with random forest and MLP comparators."""

__version__ = "0.1.0"
