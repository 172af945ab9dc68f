"""Seeded bag-of-words text embeddings used as the contrastive and alignment targets."""
import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.feature_extraction.text import HashingVectorizer

from ..metrics import tokenize_eval


class HashingTextEmbedder(BaseEstimator, TransformerMixin):
    """Hash each evaluation token into one of ``dim`` signed buckets, then L2-normalise.

    The seed is mixed into every token before hashing, so different seeds give
    different (but fixed) projections. Texts with no tokens map to the zero vector.
    """

    def __init__(self, dim=8, seed=0):
        self.dim = dim
        self.seed = seed

    def _analyzer(self, text):
        return [f"{self.seed}:{tok}" for tok in tokenize_eval(text)]

    def fit(self, X=None, y=None):
        return self

    def transform(self, X):
        vec = HashingVectorizer(n_features=self.dim, analyzer=self._analyzer, alternate_sign=True, norm="l2")
        return vec.transform(list(X)).toarray().astype(np.float64)
