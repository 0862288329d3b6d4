"""Clone quality metrics and CSV/JSON report files."""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .autodiff.functional import _softmax_np
from .autodiff.tensor import Tensor, no_grad

REPORT_COLUMNS = ("run_id", "queries_used", "accuracy", "agreement", "entropy_nats", "elapsed_s", "config_fingerprint")


class ReportSchemaError(ValueError):
    pass


@dataclass
class MetricRow:
    run_id: str
    queries_used: int
    accuracy: float
    agreement: float
    entropy_nats: float
    elapsed_s: float
    config_fingerprint: str


def fingerprint(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def predict(model, inputs: np.ndarray, batch_size: int = 1024) -> np.ndarray:
    """Eval-mode argmax labels; ties go to the lowest class index."""
    was_training = model.training
    model.eval()
    out = []
    with no_grad():
        for i in range(0, len(inputs), batch_size):
            out.append(model.classify(Tensor(inputs[i:i + batch_size])).data.argmax(axis=1))
    model.train(was_training)
    return np.concatenate(out)


def posteriors(model, inputs: np.ndarray, batch_size: int = 1024) -> np.ndarray:
    was_training = model.training
    model.eval()
    out = []
    with no_grad():
        for i in range(0, len(inputs), batch_size):
            out.append(_softmax_np(model.classify(Tensor(inputs[i:i + batch_size])).data))
    model.train(was_training)
    return np.concatenate(out)


def accuracy(model, dataset) -> float:
    if model.spec.num_classes != dataset.num_classes:
        raise ValueError(f"model has {model.spec.num_classes} classes, dataset has {dataset.num_classes}")
    return float(np.mean(predict(model, dataset.inputs) == dataset.labels))


def agreement(clone, reference, inputs: np.ndarray) -> float:
    """Fraction of ``inputs`` where clone and reference argmax agree.

    ``reference`` is a classifier model or a precomputed label array.
    """
    clone_labels = predict(clone, inputs)
    if isinstance(reference, np.ndarray):
        ref_labels = reference
    else:
        ref_labels = predict(reference, inputs)
    if ref_labels.shape != clone_labels.shape:
        raise ValueError(f"agreement: {clone_labels.shape} clone labels vs {ref_labels.shape} reference labels")
    return float(np.mean(clone_labels == ref_labels))


def entropy_of_mean(p: np.ndarray, eps: float = 1e-12) -> float:
    """Shannon entropy (nats) of the column mean of row distributions ``p``."""
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 2 or p.shape[0] == 0:
        raise ValueError(f"expected a non-empty (M, K) array, got shape {p.shape}")
    if np.any(p < 0) or np.any(np.abs(p.sum(axis=1) - 1.0) > 1e-9):
        raise ValueError("rows must be probability distributions")
    alpha = p.mean(axis=0)
    return float(-(alpha * np.log(np.maximum(alpha, eps))).sum())


def query_set_entropy(oracle_posteriors: np.ndarray) -> float:
    return entropy_of_mean(oracle_posteriors)


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------

def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


def emit_report(rows: Sequence[MetricRow], path, fmt: str = "csv") -> Path:
    if not rows:
        raise ValueError("emit_report needs at least one row")
    path = Path(path)
    records = [asdict(r) for r in rows]
    if fmt == "csv":
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(REPORT_COLUMNS)
            for rec in records:
                writer.writerow([_fmt(rec[c]) for c in REPORT_COLUMNS])
    elif fmt == "json":
        out = [{c: (float(_fmt(rec[c])) if isinstance(rec[c], float) else rec[c]) for c in REPORT_COLUMNS}
               for rec in records]
        path.write_text(json.dumps(out, indent=1) + "\n")
    else:
        raise ValueError(f"unknown report format {fmt!r}")
    return path


def append_rows(rows: Iterable[MetricRow], path) -> None:
    """Append rows to a CSV report, writing the header if the file is new."""
    path = Path(path)
    new = not path.exists() or path.stat().st_size == 0
    with path.open("a", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        if new:
            writer.writerow(REPORT_COLUMNS)
        for r in rows:
            rec = asdict(r)
            writer.writerow([_fmt(rec[c]) for c in REPORT_COLUMNS])


def read_report(path) -> list[MetricRow]:
    path = Path(path)
    if path.suffix == ".json":
        records = json.loads(path.read_text())
        header = list(records[0].keys()) if records else []
    else:
        with path.open(newline="") as fh:
            reader = csv.DictReader(fh)
            header = list(reader.fieldnames or [])
            records = list(reader)
    missing = [c for c in REPORT_COLUMNS if c not in header]
    extra = [c for c in header if c not in REPORT_COLUMNS]
    if missing:
        raise ReportSchemaError(f"{path}: missing column {missing[0]!r}")
    if extra:
        raise ReportSchemaError(f"{path}: unexpected column {extra[0]!r}")
    rows = []
    for rec in records:
        rows.append(MetricRow(
            run_id=str(rec["run_id"]),
            queries_used=int(rec["queries_used"]),
            accuracy=float(rec["accuracy"]),
            agreement=float(rec["agreement"]),
            entropy_nats=float(rec["entropy_nats"]),
            elapsed_s=float(rec["elapsed_s"]),
            config_fingerprint=str(rec["config_fingerprint"]),
        ))
    return rows


def median(values: Sequence[float]) -> float:
    v = sorted(values)
    if not v:
        return math.nan
    mid = len(v) // 2
    return v[mid] if len(v) % 2 else 0.5 * (v[mid - 1] + v[mid])
