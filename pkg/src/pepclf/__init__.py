"""Anticancer peptide classification from k-mer embeddings.

The pipeline: tokenize peptides into residue k-mers, train skip-gram / CBOW
/ subword embeddings over them, feed the vectors into numpy-only CNN, LSTM
or stacked-BiLSTM classifiers, and score everything with a repeated
stratified-holdout protocol (ACC/SEN/SPE/MCC/AUC).
"""

from . import datasets, embeddings, evaluation, models, nn, seqdata

__version__ = "0.1.0"

__all__ = [
    "datasets",
    "embeddings",
    "evaluation",
    "models",
    "nn",
    "seqdata",
    "__version__",
]
