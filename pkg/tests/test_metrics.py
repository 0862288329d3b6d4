import json
import math

import numpy as np
import pytest

from steallab import datasets as ds
from steallab.autodiff import Tensor
from steallab.metrics import (REPORT_COLUMNS, MetricRow, ReportSchemaError, accuracy, agreement, emit_report,
                              entropy_of_mean, median, predict, query_set_entropy, read_report)
from steallab.models import ClassifierSpec, build_classifier

BLOBS4 = ds.TaskSpec("gaussian_blobs", 4, 2, separation=4.0)


class ConstantModel:
    """Always predicts the same class; enough surface for predict()."""

    def __init__(self, k, cls=0):
        self.spec = ClassifierSpec((2,), k)
        self.cls = cls
        self.training = False

    def eval(self):
        return self

    def train(self, mode=True):
        return self

    def classify(self, x):
        out = np.zeros((x.shape[0], self.spec.num_classes))
        out[:, self.cls] = 1.0
        return Tensor(out)


def test_constant_model_accuracy_quarter():
    _, test = ds.generate(BLOBS4)
    assert accuracy(ConstantModel(4), test) == 0.25


def test_random_models_near_chance_ten_seeds():
    _, test = ds.generate(BLOBS4)
    accs = [accuracy(build_classifier(ClassifierSpec((2,), 4, "tiny"), s), test) for s in range(10)]
    assert abs(np.mean(accs) - 0.25) <= 0.05


def test_random_models_near_chance_many_seeds():
    _, test = ds.generate(BLOBS4)
    accs = [accuracy(build_classifier(ClassifierSpec((2,), 4, "tiny"), s), test) for s in range(400)]
    assert abs(np.mean(accs) - 0.25) <= 0.05


def test_accuracy_class_mismatch():
    _, test = ds.generate(BLOBS4)
    with pytest.raises(ValueError):
        accuracy(ConstantModel(3), test)


def test_agreement_with_itself_and_negation():
    model = build_classifier(ClassifierSpec((2,), 2, "tiny"), 0)
    x = np.random.default_rng(0).uniform(-1, 1, (500, 2))
    assert agreement(model, model, x) == 1.0
    neg = build_classifier(ClassifierSpec((2,), 2, "tiny"), 0)
    last = neg.named_parameters()[-2:]
    for _, p in last:
        p.data *= -1
    assert agreement(model, neg, x) <= 0.01


def test_agreement_range_and_label_reference():
    a = build_classifier(ClassifierSpec((2,), 4), 1)
    b = build_classifier(ClassifierSpec((2,), 4), 2)
    x = np.random.default_rng(1).uniform(-1, 1, (300, 2))
    v = agreement(a, b, x)
    assert 0.0 <= v <= 1.0
    assert agreement(a, predict(b, x), x) == v


def test_ties_break_low():
    x = np.zeros((3, 2))
    tie = ConstantModel(3)
    tie.classify = lambda x: Tensor(np.ones((x.shape[0], 3)))
    assert predict(tie, x).tolist() == [0, 0, 0]
    assert agreement(tie, tie, x) == 1.0


def test_entropy_examples():
    assert query_set_entropy(np.full((7, 10), 0.1)) == pytest.approx(math.log(10), abs=1e-12)
    assert round(query_set_entropy(np.full((1, 10), 0.1)), 2) == 2.30
    assert query_set_entropy(np.tile(np.eye(10)[3], (4, 1))) == pytest.approx(0.0, abs=1e-10)
    half = np.zeros((2, 10))
    half[0, 0] = half[1, 1] = 1.0
    assert query_set_entropy(half) == pytest.approx(math.log(2), abs=1e-12)
    with pytest.raises(ValueError):
        entropy_of_mean(np.array([[0.3, 0.3]]))


def test_entropy_permutation_invariance():
    rng = np.random.default_rng(0)
    p = rng.dirichlet(np.ones(6), size=40)
    h = query_set_entropy(p)
    assert query_set_entropy(p[rng.permutation(40)]) == pytest.approx(h, abs=1e-12)
    assert query_set_entropy(p[:, rng.permutation(6)]) == pytest.approx(h, abs=1e-12)


# -- reports ----------------------------------------------------------------------

ROWS = [MetricRow(f"r{i}", 1000 * (i + 1), 0.1234567 * i, 1 / 3, math.pi / (i + 1), 0.5, "abc") for i in range(3)]


def test_csv_report_lines_and_round_trip(tmp_path):
    path = emit_report(ROWS, tmp_path / "r.csv")
    lines = path.read_text().splitlines()
    assert len(lines) == 4
    assert lines[0] == ",".join(REPORT_COLUMNS)
    back = read_report(path)
    for a, b in zip(ROWS, back):
        assert a.run_id == b.run_id and a.queries_used == b.queries_used
        for f in ("accuracy", "agreement", "entropy_nats", "elapsed_s"):
            # six significant digits: half a unit in the sixth place
            assert getattr(b, f) == pytest.approx(getattr(a, f), rel=5e-6)


def test_json_report_keys(tmp_path):
    path = emit_report(ROWS, tmp_path / "r.json", "json")
    data = json.loads(path.read_text())
    assert isinstance(data, list) and len(data) == 3
    assert all(list(rec) == list(REPORT_COLUMNS) for rec in data)
    assert read_report(path)[2].entropy_nats == pytest.approx(math.pi / 3, rel=5e-6)


def test_report_errors(tmp_path):
    with pytest.raises(ValueError):
        emit_report([], tmp_path / "x.csv")
    with pytest.raises(OSError):
        emit_report(ROWS, tmp_path / "missing-dir" / "x.csv")
    bad = tmp_path / "bad.csv"
    bad.write_text("run_id,queries_used,accuracy,agreement,entropy,elapsed_s,config_fingerprint\n")
    with pytest.raises(ReportSchemaError, match="entropy_nats"):
        read_report(bad)


def test_median():
    assert median([3.0, 1.0, 2.0]) == 2.0
    assert median([1.0, 2.0, 3.0, 10.0]) == 2.5
