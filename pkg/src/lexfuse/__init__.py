"""Retrieval pipeline for case-law and statute search.

Stages: heuristic document cleaning, inverted-index lexical scoring
(BM25, query likelihood, n-gram BM25), feature assembly, gradient-boosted
learning-to-rank fusion, heuristic rank post-processing with grid-search
tuning, and micro/macro retrieval metrics.
"""

__version__ = "0.1.0"
