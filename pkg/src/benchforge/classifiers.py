"""Bag-of-words logistic regression over hashed TF-IDF vectors.

Used by the artefact audit and by the bootstrap difficulty scorer. Training
is plain seeded SGD with fixed hyperparameters so runs are reproducible and
comparable; L2 decay is applied to the features touched by each update.
"""
from __future__ import annotations

import math
import random

import numpy as np

from . import retrieval

DEFAULT_LEARNING_RATE = 0.1
DEFAULT_EPOCHS = 50
DEFAULT_L2 = 1e-4


class TfidfFeaturizer:
    """Hashed unigram+bigram TF-IDF with df fitted on a text collection."""

    def __init__(self, num_bins: int = retrieval.DEFAULT_NUM_BINS):
        self.num_bins = num_bins
        self.doc_freq: dict[int, int] = {}
        self.n_texts = 0

    def fit(self, texts: list[str]) -> "TfidfFeaturizer":
        self.n_texts = len(texts)
        self.doc_freq = {}
        for text in texts:
            for b in retrieval.bin_counts(text, self.num_bins):
                self.doc_freq[b] = self.doc_freq.get(b, 0) + 1
        return self

    def _idf(self, b: int) -> float:
        df = self.doc_freq.get(b, 0)
        return max(0.0, math.log((self.n_texts - df + 0.5) / (df + 0.5)))

    def transform(self, text: str) -> dict[int, float]:
        vec = {}
        for b, c in retrieval.bin_counts(text, self.num_bins).items():
            w = (1.0 + math.log(c)) * self._idf(b)
            if w > 0.0:
                vec[b] = w
        norm = math.sqrt(sum(w * w for w in vec.values()))
        if norm > 0.0:
            vec = {b: w / norm for b, w in vec.items()}
        return vec


def _sigmoid(z: float) -> float:
    if z >= 0:
        return 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z)
    return e / (1.0 + e)


class SparseLogisticRegression:
    def __init__(
        self,
        learning_rate: float = DEFAULT_LEARNING_RATE,
        epochs: int = DEFAULT_EPOCHS,
        l2: float = DEFAULT_L2,
        seed: int = 0,
    ):
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.l2 = l2
        self.seed = seed
        self._bin_index: dict[int, int] = {}
        self._weights = np.zeros(0)
        self._bias = 0.0

    @property
    def hyperparameters(self) -> dict:
        return {
            "learning_rate": self.learning_rate,
            "epochs": self.epochs,
            "l2": self.l2,
            "seed": self.seed,
        }

    def fit(self, vectors: list[dict[int, float]], labels: list[int]) -> "SparseLogisticRegression":
        if len(vectors) != len(labels):
            raise ValueError("vectors and labels differ in length")
        bins = sorted({b for vec in vectors for b in vec})
        self._bin_index = {b: i for i, b in enumerate(bins)}
        self._weights = np.zeros(len(bins))
        self._bias = 0.0

        idx = [np.array([self._bin_index[b] for b in sorted(vec)], dtype=np.int64) for vec in vectors]
        val = [np.array([vec[b] for b in sorted(vec)]) for vec in vectors]

        rng = random.Random(self.seed)
        order = list(range(len(vectors)))
        lr, l2 = self.learning_rate, self.l2
        for _ in range(self.epochs):
            rng.shuffle(order)
            for i in order:
                ix, xv = idx[i], val[i]
                z = float(self._weights[ix] @ xv) + self._bias
                g = _sigmoid(z) - labels[i]
                self._weights[ix] = self._weights[ix] * (1.0 - lr * l2) - lr * g * xv
                self._bias -= lr * g
        return self

    def predict_proba(self, vec: dict[int, float]) -> float:
        z = self._bias
        for b in sorted(vec):
            i = self._bin_index.get(b)
            if i is not None:
                z += self._weights[i] * vec[b]
        return _sigmoid(z)

    def predict(self, vec: dict[int, float], threshold: float = 0.5) -> bool:
        return self.predict_proba(vec) >= threshold
