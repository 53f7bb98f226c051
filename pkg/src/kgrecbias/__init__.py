"""Benchmark a fixed walk-embedding item-similarity recommender across knowledge graphs.

The building blocks live in submodules: :mod:`kgrecbias.kg` (N-Triples
ingestion), :mod:`kgrecbias.walker`, :mod:`kgrecbias.embedder`,
:mod:`kgrecbias.recommender`, :mod:`kgrecbias.evalkit`, :mod:`kgrecbias.bias`
and the experiment runner in :mod:`kgrecbias.pipeline`.
"""

__version__ = "0.1.0"
