import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from omsearch.features import (
    DimensionError,
    FeatureError,
    MultiModalFeature,
    concat_score,
    modality_scores,
    normalize_feature,
)

from conftest import random_feature


def test_normalize_scales_to_unit_length():
    f = normalize_feature(MultiModalFeature.from_parts(face=[3, 4]))
    np.testing.assert_allclose(f.face, [0.6, 0.8], atol=1e-15)
    assert f.presence == (True, False, False)
    assert f.body is None and f.audio is None


def test_normalize_leaves_unit_vectors_alone(rng):
    f = random_feature(rng, 8)
    g = normalize_feature(f)
    assert np.max(np.abs(g.vectors - f.vectors)) <= 1e-12


@pytest.mark.parametrize("bad, msg", [([0.0, 0.0], "zero-norm face vector"), ([np.nan, 1.0], "non-finite face")])
def test_normalize_rejects_degenerate_vectors(bad, msg):
    with pytest.raises(FeatureError, match=msg):
        normalize_feature(MultiModalFeature.from_parts(face=bad))


def test_mixed_dimensions_rejected():
    with pytest.raises(DimensionError):
        MultiModalFeature.from_parts(face=[1, 0], body=[1, 0, 0])


def test_absent_rows_are_zero():
    f = MultiModalFeature(np.ones((3, 4)), (True, False, True))
    assert np.all(f.vectors[1] == 0)


def test_concat_score_self_is_three(rng):
    f = random_feature(rng, 5)
    assert concat_score(f, f) == pytest.approx(3.0, abs=1e-12)


def test_concat_score_disjoint_presence_is_zero(rng):
    a = random_feature(rng, 5, (True, False, False))
    b = random_feature(rng, 5, (False, False, True))
    assert concat_score(a, b) == 0.0


def test_concat_score_matches_hand_dot(rng):
    a = random_feature(rng, 5, (True, True, False))
    b = random_feature(rng, 5, (True, True, True))
    expected = 0.0
    for m in range(3):
        if a.presence[m] and b.presence[m]:
            for k in range(5):
                expected += a.vectors[m][k] * b.vectors[m][k]
    assert concat_score(a, b) == pytest.approx(expected, abs=1e-12)


def test_concat_score_dimension_mismatch(rng):
    with pytest.raises(DimensionError):
        concat_score(random_feature(rng, 4), random_feature(rng, 5))


def test_modality_scores_identical():
    f = normalize_feature(MultiModalFeature.from_parts([1, 2], [3, 1], [0, 1]))
    s = modality_scores(f, f)
    assert s.per_modality == pytest.approx((1.0, 1.0, 1.0))
    assert s.combined == pytest.approx(1.0)
    assert s.shared_modalities == 3


def test_modality_scores_presence_intersection(rng):
    a = random_feature(rng, 6, (True, True, False))
    b = random_feature(rng, 6, (True, False, False))
    s = modality_scores(a, b)
    assert s.shared_modalities == 1
    assert s.per_modality[1] is None and s.per_modality[2] is None
    assert s.combined == pytest.approx(float(a.face @ b.face), abs=1e-12)


def test_modality_scores_nothing_shared(rng):
    s = modality_scores(random_feature(rng, 6, (True, False, False)), random_feature(rng, 6, (False, True, True)))
    assert s.combined == 0.0 and s.shared_modalities == 0


presence = st.tuples(st.booleans(), st.booleans(), st.booleans())


@settings(max_examples=200, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), pa=presence, pb=presence, d=st.integers(2, 12))
def test_score_properties(seed, pa, pb, d):
    rng = np.random.default_rng(seed)
    a = random_feature(rng, d, pa)
    b = random_feature(rng, d, pb)
    s = modality_scores(a, b)
    # combined * shared equals the raw concatenated dot
    assert s.combined * s.shared_modalities == pytest.approx(concat_score(a, b), abs=1e-12)
    assert concat_score(a, b) == concat_score(b, a)
    assert modality_scores(b, a) == s
    for p in s.per_modality:
        if p is not None:
            assert abs(p) <= 1 + 1e-9
    assert -1 - 1e-9 <= s.combined <= 1 + 1e-9


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_absent_slot_contents_never_matter(seed):
    rng = np.random.default_rng(seed)
    a = random_feature(rng, 6, (True, False, True))
    b = random_feature(rng, 6, (True, True, True))
    garbage = np.array(a.vectors)
    garbage[1] = rng.standard_normal(6)
    a2 = MultiModalFeature(garbage, a.presence)
    assert concat_score(a2, b) == concat_score(a, b)
    assert modality_scores(a2, b) == modality_scores(a, b)
