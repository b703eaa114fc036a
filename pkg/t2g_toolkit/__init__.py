# T2G Toolkit - graph-guided transformers for tabular data, on numpy
__version__ = "0.1.0"
