"""Black-box victim access: posteriors only, every sample paid for."""

from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Optional, TextIO

import numpy as np

from .autodiff.functional import _softmax_np
from .autodiff.tensor import Tensor, no_grad
from .models import ClassifierModel


class BudgetExceeded(RuntimeError):
    def __init__(self, requested: int, remaining: int):
        super().__init__(f"query of {requested} samples exceeds remaining budget {remaining}")
        self.requested = requested
        self.remaining = remaining


class QueryLedger:
    """Counts individual samples against a fixed budget. Updates are atomic."""

    def __init__(self, budget: int, used: int = 0):
        if budget < 0 or used < 0 or used > budget:
            raise ValueError(f"invalid ledger state: budget={budget}, used={used}")
        self.budget = int(budget)
        self.used = int(used)
        self._lock = threading.Lock()

    @property
    def remaining(self) -> int:
        return self.budget - self.used

    def charge(self, n: int) -> int:
        """Reserve ``n`` samples or raise without touching the count."""
        with self._lock:
            if n > self.budget - self.used:
                raise BudgetExceeded(n, self.budget - self.used)
            self.used += n
            return self.budget - self.used

    def snapshot(self) -> dict:
        return {"budget": self.budget, "used": self.used, "remaining": self.remaining}


@dataclass(frozen=True)
class TranscriptEntry:
    batch_size: int
    remaining: int


class VictimOracle:
    """Softmax posteriors of a wrapped victim, charged per sample.

    The victim is held in a closure, so nothing on this object hands out its
    parameters, logits or gradients.
    """

    def __init__(self, victim: ClassifierModel, budget: int, transcript: Optional[TextIO] = None):
        victim.eval()
        input_shape = victim.spec.input_shape
        num_classes = victim.spec.num_classes

        def _posteriors(x: np.ndarray) -> np.ndarray:
            with no_grad():
                logits = victim.classify(Tensor(x)).data
            return _softmax_np(logits)

        self._posteriors = _posteriors
        self.input_shape = input_shape
        self.num_classes = num_classes
        self.ledger = QueryLedger(budget)
        self.transcript: list[TranscriptEntry] = []
        self._transcript_io = transcript

    def __getstate__(self):
        raise TypeError("VictimOracle cannot be pickled")

    def query(self, x) -> np.ndarray:
        x = x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)
        if x.ndim < 2 or tuple(x.shape[1:]) != self.input_shape:
            raise ValueError(f"query: expected a batch of shape (N, {self.input_shape}), got {x.shape}")
        n = x.shape[0]
        remaining = self.ledger.charge(n)
        entry = TranscriptEntry(n, remaining)
        self.transcript.append(entry)
        if self._transcript_io is not None:
            self._transcript_io.write(f"{entry.batch_size},{entry.remaining}\n")
        return self._posteriors(x)


def _check_distributions(p: np.ndarray, what: str, atol: float = 1e-9) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 2 or p.shape[1] < 1 or p.shape[0] < 1:
        raise ValueError(f"{what}: expected a non-empty (N, K) array, got shape {p.shape}")
    if np.any(p < 0) or not np.all(np.isfinite(p)):
        raise ValueError(f"{what}: rows must be non-negative and finite")
    sums = p.sum(axis=1)
    bad = np.flatnonzero(np.abs(sums - 1.0) > atol)
    if bad.size:
        raise ValueError(f"{what}: row {bad[0]} sums to {sums[bad[0]]!r}, not 1")
    return p


def approx_logits(posteriors, eps: float = 1e-12) -> np.ndarray:
    """Zero-mean pseudo-logits ``log p - mean(log p)`` per row."""
    p = _check_distributions(posteriors, "approx_logits")
    logp = np.log(np.maximum(p, eps))
    return logp - logp.mean(axis=1, keepdims=True)
