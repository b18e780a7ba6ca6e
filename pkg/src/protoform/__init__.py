"""Protoform reconstruction toolkit.

Reconstructs ancestral word forms from cognate sets of daughter languages
with a from-scratch transformer, evaluates against non-neural baselines
with string and articulatory-feature metrics, and probes trained models
for phylogenetic signal.
"""

__version__ = "0.1.0"
