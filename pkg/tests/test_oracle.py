import io
import pickle

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from steallab.autodiff.functional import _softmax_np
from steallab.models import ClassifierSpec, build_classifier
from steallab.oracle import BudgetExceeded, QueryLedger, VictimOracle, approx_logits


@pytest.fixture
def victim():
    return build_classifier(ClassifierSpec((3,), 4, "tiny"), 0)


def test_budget_arithmetic(victim):
    oracle = VictimOracle(victim, 512)
    oracle.query(np.zeros((256, 3)))
    assert oracle.ledger.remaining == 256


def test_over_budget_rejected_whole(victim):
    oracle = VictimOracle(victim, 100)
    with pytest.raises(BudgetExceeded) as info:
        oracle.query(np.zeros((256, 3)))
    assert (info.value.requested, info.value.remaining) == (256, 100)
    assert oracle.ledger.used == 0


def test_posteriors_are_distributions(victim):
    rng = np.random.default_rng(0)
    oracle = VictimOracle(victim, 10_000)
    for _ in range(5):
        p = oracle.query(rng.uniform(-1, 1, (64, 3)))
        np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-12, rtol=0)
        assert (p >= 0).all()


def test_ledger_exactness_over_sequence(victim):
    rng = np.random.default_rng(1)
    oracle = VictimOracle(victim, 1000)
    sizes = []
    for n in rng.integers(1, 200, 20):
        try:
            oracle.query(np.zeros((int(n), 3)))
            sizes.append(int(n))
        except BudgetExceeded:
            pass
    assert oracle.ledger.used == sum(sizes) <= 1000


def test_transcript_stream(victim):
    buf = io.StringIO()
    oracle = VictimOracle(victim, 10, transcript=buf)
    oracle.query(np.zeros((4, 3)))
    oracle.query(np.zeros((6, 3)))
    assert buf.getvalue() == "4,6\n6,0\n"
    assert [(e.batch_size, e.remaining) for e in oracle.transcript] == [(4, 6), (6, 0)]


def test_invalid_ledger_state():
    with pytest.raises(ValueError):
        QueryLedger(5, used=6)


def test_query_shape_checked(victim):
    with pytest.raises(ValueError, match="expected a batch"):
        VictimOracle(victim, 10).query(np.zeros((2, 5)))


def test_information_hiding(victim):
    oracle = VictimOracle(victim, 10_000)
    public = [n for n in dir(oracle) if not n.startswith("_")]
    assert sorted(public) == ["input_shape", "ledger", "num_classes", "query", "transcript"]
    with pytest.raises(TypeError):
        pickle.dumps(oracle)
    x = np.random.default_rng(3).uniform(-1, 1, (16, 3))
    # output depends only on the input batch: same rows, any order or company
    a = oracle.query(x)
    b = oracle.query(x[::-1])[::-1]
    c = oracle.query(np.concatenate([x[:1], x[:1]]))
    np.testing.assert_allclose(a, b, atol=1e-15)
    np.testing.assert_allclose(c[0], a[0], atol=1e-15)


# -- approx_logits ----------------------------------------------------------------

def test_approx_logits_uniform_row():
    np.testing.assert_allclose(approx_logits(np.full((1, 4), 0.25)), np.zeros((1, 4)), atol=1e-15)


def test_approx_logits_hand_example():
    # log p = [-0.3567, -1.6094, -2.3026]; mean -1.4229
    p = np.array([[0.7, 0.2, 0.1]])
    logs = [np.log(0.7), np.log(0.2), np.log(0.1)]
    mean = sum(logs) / 3
    expected = [v - mean for v in logs]
    np.testing.assert_allclose(approx_logits(p)[0], expected, atol=1e-12)
    np.testing.assert_allclose(approx_logits(p)[0], [1.0662, -0.1865, -0.8797], atol=1e-4)


def test_approx_logits_rejects_malformed():
    with pytest.raises(ValueError, match="sums"):
        approx_logits(np.array([[0.5, 0.6]]))
    with pytest.raises(ValueError):
        approx_logits(np.array([[-0.1, 1.1]]))


logit_batches = arrays(np.float64, st.tuples(st.integers(1, 5), st.integers(2, 10)),
                       elements=st.floats(-15, 15, allow_nan=False))


@given(logit_batches)
@settings(max_examples=200, deadline=None)
def test_approx_logits_round_trip_and_zero_mean(z):
    p = _softmax_np(z)
    pseudo = approx_logits(p)
    assert np.abs(pseudo.mean(axis=1)).max() <= 1e-12
    np.testing.assert_allclose(_softmax_np(pseudo), p, atol=1e-9, rtol=0)
