"""Gloss laboratory: definition generation and reverse-dictionary regression.

Two model families over CODWOE-style dictionary data (gloss text plus
256-dim embedding vectors), with all supporting machinery self-contained:
corpus transformation, unigram subword tokenization, GloVe token vectors,
a small reverse-mode autodiff engine, evaluation metrics, and Bayesian
hyperparameter search.
"""

__version__ = "0.1.0"
