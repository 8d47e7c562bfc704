"""Trainer for packed pollen z-stack datasets.

Consumes the three-file packed dataset contract (.pstk blob, .index.tsv,
.split.tsv), fine-tunes 3D convolutional models, and writes prediction
files in the evaluator's tab-separated wire format.
"""

__version__ = "0.1.0"
