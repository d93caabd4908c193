"""Benchmarking toolkit for hyperparameter optimizers.

Synthetic multi-fidelity test functions, tabular and surrogate benchmark
instances derived from them, single- and multi-objective baseline optimizers,
and the rank/regret analysis used to compare benchmark flavours.
"""

__version__ = "0.1.0"
