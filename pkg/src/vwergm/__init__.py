"""Glauber dynamics on vertex-weighted exponential random graphs with edge and triangle terms.

Modules: :mod:`~vwergm.model` (Gibbs measure, update rule, free energy),
:mod:`~vwergm.analysis` (fixed points, phases, critical curve),
:mod:`~vwergm.exactchain` (exact projected chain and brute-force oracle),
:mod:`~vwergm.dynamics` (simulation), :mod:`~vwergm.experiments` (sweeps and
fits) and :mod:`~vwergm.cli`.
"""

__version__ = "0.1.0"

from .model import DomainError, ModelParams, SpinConfiguration  # noqa: E402

__all__ = ["__version__", "DomainError", "ModelParams", "SpinConfiguration"]
