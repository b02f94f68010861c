import numpy as np
import pytest

from omsearch.cache import CacheError, UncertainCache
from omsearch.controller import manual_gate3
from omsearch.features import MultiModalFeature, normalize_feature
from omsearch.memory import init_memory

from conftest import random_feature


def face(*v):
    return normalize_feature(MultiModalFeature.from_parts(face=list(v)))


def manual_release(gamma, tau):
    return lambda scores, dt: manual_gate3([s.combined for s in scores], dt, gamma, tau)


def test_push_counts(rng):
    c = UncertainCache()
    c.push(random_feature(rng, 3), "x", 0)
    assert len(c) == 1 and c.push_count == 1


def test_pop_keeps_cumulative_count(rng):
    bank = init_memory({"a": face(1, 0, 0)})
    c = UncertainCache()
    c.push(face(1, 0, 0), "x", 0)
    c.push(face(0, 1, 0), "y", 0)
    popped, _ = c.recall(bank, 10, manual_release(0.6, 0.08))
    assert [e.instance_id for e, _ in popped] == ["x"]
    assert len(c) == 1 and c.push_count == 2
    assert c.conserved()


def test_duplicate_push_rejected(rng):
    c = UncertainCache()
    c.push(random_feature(rng, 3), "x", 0)
    with pytest.raises(CacheError):
        c.push(random_feature(rng, 3), "x", 1)


def test_recall_empty():
    bank = init_memory({"a": face(1, 0)})
    popped, c = UncertainCache().recall(bank, 3, manual_release(0.6, 0.08))
    assert popped == [] and len(c) == 0


def test_tau_zero_never_releases(rng):
    bank = init_memory({"a": face(1, 0, 0)})
    c = UncertainCache()
    c.push(face(1, 0, 0), "x", 0)
    for t in range(1, 500, 7):
        popped, _ = c.recall(bank, t, manual_release(0.6, 0.0))
        assert popped == []
    assert len(c) == 1


def test_single_entry_released_by_aging():
    # tau * dt * p = 0.08 * 10 * 0.9 = 0.72 > 0.6
    bank = init_memory({"a": face(1, 0)})
    c = UncertainCache()
    f = face(0.9, np.sqrt(1 - 0.81))
    c.push(f, "x", 5)
    popped, _ = c.recall(bank, 15, manual_release(0.6, 0.08))
    assert len(popped) == 1
    assert popped[0][1][0].combined == pytest.approx(0.9)


def test_recall_records_age_and_order(rng):
    bank = init_memory({"a": face(1, 0)})
    c = UncertainCache()
    seen = []

    def gate(scores, dt):
        seen.append(dt)
        return 0

    for t, iid in enumerate("pqr"):
        c.push(random_feature(rng, 2, (True, False, False)), iid, t)
    c.recall(bank, 9, gate)
    assert seen == [9, 8, 7]
    assert [e.instance_id for e in c.entries] == ["p", "q", "r"]


def test_flush(rng):
    bank = init_memory({"a": face(1, 0), "b": face(0, 1)})
    c = UncertainCache()
    assert c.flush(bank) == []
    feats = [random_feature(rng, 2, (True, False, False)) for _ in range(4)]
    for i, f in enumerate(feats):
        c.push(f, f"i{i}", i)
    out = c.flush(bank)
    assert [e.instance_id for e, _ in out] == ["i0", "i1", "i2", "i3"]
    for (e, scores), f in zip(out, feats):
        assert scores == bank.predict(f)
    assert len(c) == 0 and c.conserved()
