"""Pure numeric core: cosine distance, semantic stability, the token-level
KL alternative, and the stability/success correlation statistic.

All functions here are pure and reentrant; nothing touches a backend.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    DimensionMismatchError,
    EmptyOutputError,
    InsufficientSamplesError,
    UndefinedCorrelationError,
    ZeroVectorError,
)

VectorLike = "EmbeddingVector | Sequence[float] | np.ndarray"


@dataclass(frozen=True)
class EmbeddingVector:
    """A dense semantic vector for one text sample."""

    components: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "components", tuple(float(c) for c in self.components))

    @property
    def dim(self) -> int:
        return len(self.components)

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(np.asarray(self.components)))

    def to_json_dict(self) -> dict:
        return {"components": list(self.components), "dim": self.dim}

    @classmethod
    def from_json_dict(cls, data: dict) -> "EmbeddingVector":
        vec = cls(tuple(data["components"]))
        if "dim" in data and int(data["dim"]) != vec.dim:
            raise DimensionMismatchError(
                f"declared dim {data['dim']} != component count {vec.dim}"
            )
        return vec


def _as_array(v) -> np.ndarray:
    if isinstance(v, EmbeddingVector):
        return np.asarray(v.components, dtype=float)
    return np.asarray(v, dtype=float)


def cosine_distance(v, w) -> float:
    """1 - cos(v, w). Result lies in [0, 2]; symmetric; invariant under
    positive rescaling of either argument.

    Raises DimensionMismatchError on unequal dims and ZeroVectorError if
    either argument has zero norm.
    """
    a = _as_array(v)
    b = _as_array(w)
    if a.shape != b.shape or a.ndim != 1:
        raise DimensionMismatchError(f"dims differ: {a.shape} vs {b.shape}")
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise ZeroVectorError("cosine distance undefined for zero-norm vectors")
    d = 1.0 - float(np.dot(a, b)) / (float(na) * float(nb))
    # float error can push d a hair outside [0, 2]; the contract says it can't.
    return min(2.0, max(0.0, d))


@dataclass(frozen=True)
class StabilityScore:
    """Semantic stability of a prompt: 1 minus the mean pairwise cosine
    distance over N repeated outputs, with full per-pair provenance."""

    value: float
    sample_count: int
    pair_distances: tuple[tuple[int, int, float], ...]

    def __post_init__(self):
        n = self.sample_count
        expected = n * (n - 1) // 2
        if len(self.pair_distances) != expected:
            raise ValueError(
                f"expected {expected} pair distances for N={n}, got {len(self.pair_distances)}"
            )
        for i, j, d in self.pair_distances:
            if not 0.0 <= d <= 2.0:
                raise ValueError(f"pair distance d_{i}{j}={d} outside [0, 2]")

    def to_json_dict(self) -> dict:
        return {
            "value": self.value,
            "sample_count": self.sample_count,
            "pair_distances": [[i, j, d] for i, j, d in self.pair_distances],
        }

    @classmethod
    def from_json_dict(cls, data: dict) -> "StabilityScore":
        return cls(
            value=float(data["value"]),
            sample_count=int(data["sample_count"]),
            pair_distances=tuple((int(i), int(j), float(d)) for i, j, d in data["pair_distances"]),
        )


def semantic_stability(vectors: Sequence) -> StabilityScore:
    """Average pairwise cosine similarity over N >= 2 output embeddings.

    value = 1 - (2 / (N (N-1))) * sum_{i<j} d_ij, i.e. 1 minus the mean pair
    distance. Permutation of the input list leaves the value exactly unchanged
    (the mean is computed with an exactly rounded sum over the pair multiset).
    """
    n = len(vectors)
    if n < 2:
        raise InsufficientSamplesError(f"need at least 2 samples, got {n}")
    arrays = [_as_array(v) for v in vectors]
    pairs = []
    for i in range(n):
        for j in range(i + 1, n):
            pairs.append((i, j, cosine_distance(arrays[i], arrays[j])))
    mean_d = math.fsum(d for _, _, d in pairs) / len(pairs)
    return StabilityScore(value=1.0 - mean_d, sample_count=n, pair_distances=tuple(pairs))


def tokenize(text: str) -> list[str]:
    """Whitespace tokenization after lowercasing; shared by the KL metric and
    the hash embedder."""
    return text.lower().split()


@dataclass(frozen=True)
class TokenDistribution:
    """Add-alpha smoothed unigram distribution over a fixed vocabulary."""

    vocabulary: tuple[str, ...]
    probabilities: tuple[float, ...]
    smoothing_alpha: float

    def __post_init__(self):
        if self.smoothing_alpha <= 0:
            raise ValueError("smoothing_alpha must be positive")
        if len(self.vocabulary) != len(self.probabilities):
            raise ValueError("vocabulary and probabilities must align")
        total = math.fsum(self.probabilities)
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"probabilities sum to {total}, not 1")
        if any(p <= 0 for p in self.probabilities):
            raise ValueError("smoothed probabilities must all be positive")

    @classmethod
    def from_text(cls, text: str, vocabulary: Sequence[str], alpha: float) -> "TokenDistribution":
        vocab = tuple(vocabulary)
        counts = {tok: 0 for tok in vocab}
        for tok in tokenize(text):
            counts[tok] += 1
        total = sum(counts.values()) + alpha * len(vocab)
        probs = tuple((counts[tok] + alpha) / total for tok in vocab)
        return cls(vocabulary=vocab, probabilities=probs, smoothing_alpha=alpha)


def symmetrized_kl(p: TokenDistribution, q: TokenDistribution) -> float:
    """KL(p||q) + KL(q||p), natural log, over a shared vocabulary."""
    if p.vocabulary != q.vocabulary:
        raise DimensionMismatchError("distributions must share a vocabulary")
    total = 0.0
    for pi, qi in zip(p.probabilities, q.probabilities):
        total += pi * math.log(pi / qi) + qi * math.log(qi / pi)
    return total


def kl_stability(outputs: Sequence[str], alpha: float = 1.0) -> float:
    """Average pairwise symmetrized KL divergence between add-alpha smoothed
    unigram distributions of the outputs, over their union vocabulary.

    Returns 0 iff all outputs have identical token multisets; always >= 0.
    Lower means more stable. Tokenization is whitespace + lowercase.
    """
    if len(outputs) < 2:
        raise InsufficientSamplesError(f"need at least 2 outputs, got {len(outputs)}")
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    for out in outputs:
        if not out.strip():
            raise EmptyOutputError("cannot build a token distribution from an empty output")
    vocab = sorted({tok for out in outputs for tok in tokenize(out)})
    dists = [TokenDistribution.from_text(out, vocab, alpha) for out in outputs]
    n = len(dists)
    divergences = []
    for i in range(n):
        for j in range(i + 1, n):
            divergences.append(symmetrized_kl(dists[i], dists[j]))
    value = math.fsum(divergences) / len(divergences)
    return max(0.0, value)


def kl_stability_score(outputs: Sequence[str], alpha: float = 1.0) -> StabilityScore:
    """kl_stability repackaged on the same scale as semantic_stability, so the
    two metrics are interchangeable behind one threshold gate.

    Each pairwise divergence J is squashed to J / (1 + J), which lies in
    [0, 1) and is 0 iff the pair's token multisets agree; the score value is
    1 minus the mean squashed divergence. Identical outputs score exactly 1.
    """
    if len(outputs) < 2:
        raise InsufficientSamplesError(f"need at least 2 outputs, got {len(outputs)}")
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    for out in outputs:
        if not out.strip():
            raise EmptyOutputError("cannot build a token distribution from an empty output")
    vocab = sorted({tok for out in outputs for tok in tokenize(out)})
    dists = [TokenDistribution.from_text(out, vocab, alpha) for out in outputs]
    n = len(dists)
    pairs = []
    for i in range(n):
        for j in range(i + 1, n):
            divergence = max(0.0, symmetrized_kl(dists[i], dists[j]))
            pairs.append((i, j, divergence / (1.0 + divergence)))
    value = 1.0 - math.fsum(d for _, _, d in pairs) / len(pairs)
    return StabilityScore(value=value, sample_count=n, pair_distances=tuple(pairs))


def pearson_correlation(xs: Sequence[float], ys: Sequence[float]) -> float:
    """Standard Pearson r. Raises UndefinedCorrelationError if either series
    is constant."""
    if len(xs) != len(ys):
        raise DimensionMismatchError(f"series lengths differ: {len(xs)} vs {len(ys)}")
    if len(xs) < 2:
        raise InsufficientSamplesError("need at least 2 points")
    x = np.asarray(xs, dtype=float)
    y = np.asarray(ys, dtype=float)
    xc = x - x.mean()
    yc = y - y.mean()
    sx = float(np.sqrt(np.dot(xc, xc)))
    sy = float(np.sqrt(np.dot(yc, yc)))
    if sx == 0.0 or sy == 0.0:
        raise UndefinedCorrelationError("correlation undefined for a constant series")
    return float(np.dot(xc, yc)) / (sx * sy)
