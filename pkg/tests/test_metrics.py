"""Metric tests. Expected values below are hand-derived from the definitions
(derivations inline) and were frozen before being checked against the code.
"""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from promptor import (
    DimensionMismatchError,
    EmbeddingVector,
    EmptyOutputError,
    InsufficientSamplesError,
    StabilityScore,
    TokenDistribution,
    UndefinedCorrelationError,
    ZeroVectorError,
    cosine_distance,
    kl_stability,
    pearson_correlation,
    semantic_stability,
    symmetrized_kl,
    tokenize,
)

TOL = 1e-9

# cos angle between (1,1) and (1,0) is 1/sqrt(2), so distance is 1 - 1/sqrt(2)
DIAGONAL_VS_AXIS = 1.0 - 1.0 / math.sqrt(2.0)

# e1,e1,e2: pair distances {0, 1, 1}, mean 2/3, stability 1/3
BASIS_TRIPLE_STABILITY = 1.0 / 3.0

# "a a" vs "b b", alpha=1, vocab {a,b}: P=(3/4,1/4), Q=(1/4,3/4);
# J = sum (p-q) ln(p/q) = (1/2) ln 3 + (1/2) ln 3 = ln 3
TWO_TOKEN_JEFFREYS = math.log(3.0)

# P=(1/2,1/2), Q=(1/4,3/4): J = 0*ln2 + (1/4) ln 3 (terms worked by hand)
HALF_QUARTER_JEFFREYS = math.log(3.0) / 4.0


# -- cosine_distance ----------------------------------------------------------


def test_cosine_identity():
    assert abs(cosine_distance((1.0, 0.0), (1.0, 0.0))) <= TOL


def test_cosine_orthogonal():
    assert abs(cosine_distance((1.0, 0.0), (0.0, 1.0)) - 1.0) <= TOL


def test_cosine_diagonal():
    assert abs(cosine_distance((1.0, 1.0), (1.0, 0.0)) - DIAGONAL_VS_AXIS) <= TOL


def test_cosine_antipodal():
    assert abs(cosine_distance((2.0, -1.0), (-2.0, 1.0)) - 2.0) <= TOL


def test_cosine_accepts_embedding_vectors_and_arrays():
    v = EmbeddingVector((1.0, 1.0))
    w = np.array([1.0, 0.0])
    assert abs(cosine_distance(v, w) - DIAGONAL_VS_AXIS) <= TOL


def test_cosine_dimension_mismatch():
    with pytest.raises(DimensionMismatchError):
        cosine_distance((1.0, 0.0), (1.0, 0.0, 0.0))


def test_cosine_zero_vector():
    with pytest.raises(ZeroVectorError):
        cosine_distance((0.0, 0.0), (1.0, 0.0))


finite_coords = st.floats(
    min_value=-100.0, max_value=100.0, allow_nan=False, allow_infinity=False
)


def _nonzero_vectors(dim: int):
    return (
        st.lists(finite_coords, min_size=dim, max_size=dim)
        .map(tuple)
        .filter(lambda v: np.linalg.norm(v) > 1e-3)
    )


nonzero_vector_pairs = st.integers(min_value=2, max_value=8).flatmap(
    lambda dim: st.tuples(_nonzero_vectors(dim), _nonzero_vectors(dim))
)


@given(nonzero_vector_pairs)
def test_cosine_symmetry(pair):
    v, w = pair
    assert cosine_distance(v, w) == cosine_distance(w, v)


@given(
    nonzero_vector_pairs,
    st.floats(min_value=1e-3, max_value=1e3),
    st.floats(min_value=1e-3, max_value=1e3),
)
def test_cosine_scale_invariance(pair, a, b):
    v, w = pair
    scaled = cosine_distance(tuple(a * x for x in v), tuple(b * x for x in w))
    assert abs(scaled - cosine_distance(v, w)) <= 1e-12


@given(nonzero_vector_pairs)
def test_cosine_range(pair):
    d = cosine_distance(*pair)
    assert 0.0 <= d <= 2.0


@given(nonzero_vector_pairs)
def test_cosine_self_distance_zero(pair):
    v, _ = pair
    assert abs(cosine_distance(v, v)) <= 1e-12


# -- semantic_stability -------------------------------------------------------


def test_stability_identical_vectors():
    score = semantic_stability([(1.0, 2.0, 3.0)] * 3)
    assert abs(score.value - 1.0) <= TOL
    assert score.sample_count == 3
    assert len(score.pair_distances) == 3


def test_stability_basis_triple():
    score = semantic_stability([(1.0, 0.0), (1.0, 0.0), (0.0, 1.0)])
    assert abs(score.value - BASIS_TRIPLE_STABILITY) <= TOL


def test_stability_orthogonal_pair_is_zero():
    score = semantic_stability([(1.0, 0.0), (0.0, 1.0)])
    assert abs(score.value) <= TOL


def test_stability_opposed_pair_is_negative_one():
    # value ranges over [-1, 1]; no clamping at 0
    score = semantic_stability([(1.0, 0.0), (-1.0, 0.0)])
    assert abs(score.value - (-1.0)) <= TOL


def test_stability_pair_provenance():
    score = semantic_stability([(1.0, 0.0), (1.0, 0.0), (0.0, 1.0)])
    as_dict = {(i, j): d for i, j, d in score.pair_distances}
    assert set(as_dict) == {(0, 1), (0, 2), (1, 2)}
    assert abs(as_dict[(0, 1)]) <= TOL
    assert abs(as_dict[(0, 2)] - 1.0) <= TOL


def test_stability_insufficient_samples():
    with pytest.raises(InsufficientSamplesError):
        semantic_stability([(1.0, 0.0)])


def test_stability_score_validates_pair_count():
    with pytest.raises(ValueError):
        StabilityScore(value=1.0, sample_count=3, pair_distances=((0, 1, 0.0),))


def test_stability_score_json_round_trip():
    score = semantic_stability([(1.0, 0.0), (0.0, 1.0), (1.0, 1.0)])
    assert StabilityScore.from_json_dict(score.to_json_dict()) == score


vector_lists = st.integers(min_value=2, max_value=6).flatmap(
    lambda dim: st.lists(_nonzero_vectors(dim), min_size=2, max_size=6)
)


@given(vector_lists, st.randoms(use_true_random=False))
def test_stability_permutation_exact(vectors, rnd):
    shuffled = list(vectors)
    rnd.shuffle(shuffled)
    assert semantic_stability(shuffled).value == semantic_stability(vectors).value


@given(vector_lists)
def test_stability_range(vectors):
    assert -1.0 <= semantic_stability(vectors).value <= 1.0


def test_embedding_vector_json_round_trip():
    v = EmbeddingVector((0.5, -1.25, 3.0))
    assert EmbeddingVector.from_json_dict(v.to_json_dict()) == v
    with pytest.raises(DimensionMismatchError):
        EmbeddingVector.from_json_dict({"components": [1.0, 2.0], "dim": 3})


# -- kl_stability -------------------------------------------------------------


def test_kl_identical_outputs_zero():
    assert kl_stability(["a b", "a b"]) == 0.0


def test_kl_same_multiset_different_order_zero():
    assert kl_stability(["b a", "a b"]) == 0.0


def test_kl_two_token_oracle():
    assert abs(kl_stability(["a a", "b b"], alpha=1.0) - TWO_TOKEN_JEFFREYS) <= TOL


def test_kl_case_insensitive():
    assert kl_stability(["A B", "a b"]) == 0.0


def test_kl_empty_output_rejected():
    with pytest.raises(EmptyOutputError):
        kl_stability(["a b", "   "])


def test_kl_insufficient_samples():
    with pytest.raises(InsufficientSamplesError):
        kl_stability(["a b"])


def test_kl_alpha_must_be_positive():
    with pytest.raises(ValueError):
        kl_stability(["a", "b"], alpha=0.0)


def test_symmetrized_kl_oracle():
    p = TokenDistribution(("a", "b"), (0.5, 0.5), 1.0)
    q = TokenDistribution(("a", "b"), (0.25, 0.75), 1.0)
    assert abs(symmetrized_kl(p, q) - HALF_QUARTER_JEFFREYS) <= TOL
    assert abs(symmetrized_kl(q, p) - HALF_QUARTER_JEFFREYS) <= TOL


def test_token_distribution_from_text():
    # counts a=2, b=1, c=0 with alpha=1 over 3 types: (3, 2, 1)/6
    dist = TokenDistribution.from_text("a a b", ("a", "b", "c"), alpha=1.0)
    assert dist.probabilities == (0.5, 2.0 / 6.0, 1.0 / 6.0)


def test_token_distribution_validates_sum():
    with pytest.raises(ValueError):
        TokenDistribution(("a", "b"), (0.5, 0.6), 1.0)


def test_tokenize_lowercases_and_splits():
    assert tokenize("The  quick\tFox") == ["the", "quick", "fox"]


texts = st.lists(
    st.text(alphabet="abcd ", min_size=1, max_size=12).filter(lambda s: s.strip()),
    min_size=2,
    max_size=5,
)


@given(texts)
def test_kl_non_negative(outputs):
    assert kl_stability(outputs) >= 0.0


@given(texts)
def test_kl_order_invariant(outputs):
    assert kl_stability(list(reversed(outputs))) == pytest.approx(
        kl_stability(outputs), abs=1e-12
    )


@given(st.text(alphabet="abc ", min_size=1, max_size=20).filter(lambda s: s.strip()))
def test_kl_zero_iff_identical_multisets(text):
    assert kl_stability([text, text]) == 0.0
    other = text + " zzz"
    assert kl_stability([text, other]) > 0.0


# -- pearson_correlation ------------------------------------------------------


def test_pearson_perfect_positive():
    assert abs(pearson_correlation((1.0, 2.0, 3.0), (2.0, 4.0, 6.0)) - 1.0) <= TOL


def test_pearson_perfect_negative():
    assert abs(pearson_correlation((1.0, 2.0, 3.0), (3.0, 2.0, 1.0)) + 1.0) <= TOL


def test_pearson_hand_oracle():
    # centered dx=(-1.5,-.5,.5,1.5), dy=(-1.5,.5,-.5,1.5): cov 4, var 5 each
    assert abs(pearson_correlation((1, 2, 3, 4), (1, 3, 2, 4)) - 0.8) <= TOL


def test_pearson_constant_series():
    with pytest.raises(UndefinedCorrelationError):
        pearson_correlation((1.0, 2.0, 3.0), (5.0, 5.0, 5.0))


def test_pearson_length_mismatch():
    with pytest.raises(DimensionMismatchError):
        pearson_correlation((1.0, 2.0), (1.0, 2.0, 3.0))


def test_pearson_too_short():
    with pytest.raises(InsufficientSamplesError):
        pearson_correlation((1.0,), (2.0,))


# integer-valued series keep the variance well away from underflow
int_series = st.lists(
    st.integers(min_value=-100, max_value=100).map(float), min_size=3, max_size=20
)


@given(int_series, int_series)
def test_pearson_bounded(xs, ys):
    n = min(len(xs), len(ys))
    xs, ys = xs[:n], ys[:n]
    if len(set(xs)) < 2 or len(set(ys)) < 2:
        return
    r = pearson_correlation(xs, ys)
    assert -1.0 - 1e-12 <= r <= 1.0 + 1e-12


@settings(max_examples=50)
@given(
    int_series,
    st.floats(min_value=0.1, max_value=10.0),
    st.floats(min_value=-5.0, max_value=5.0),
)
def test_pearson_affine_invariance(xs, scale, shift):
    if len(set(xs)) < 2:
        return
    ys = [scale * x + shift for x in xs]
    assert pearson_correlation(xs, ys) == pytest.approx(1.0, abs=1e-9)
