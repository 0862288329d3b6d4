"""Supervised victim training."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .autodiff import SGD, LrSchedule
from .autodiff import functional as F
from .autodiff.tensor import Tensor
from .datasets import LabeledDataset
from .metrics import accuracy
from .models import ClassifierModel

log = logging.getLogger(__name__)


@dataclass
class VictimTrainConfig:
    epochs: int = 30
    batch_size: int = 64
    lr: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 5e-4


def train_classifier(model: ClassifierModel, data: LabeledDataset, config: VictimTrainConfig,
                     rng: np.random.Generator) -> float:
    """Cross-entropy training with SGD and a cosine schedule; returns train accuracy."""
    opt = SGD(model.parameters(), lr=config.lr, momentum=config.momentum, weight_decay=config.weight_decay)
    n = len(data)
    steps_per_epoch = max(1, -(-n // config.batch_size))
    schedule = LrSchedule("cosine", config.epochs * steps_per_epoch)
    step = 0
    model.train()
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        for i in range(0, n, config.batch_size):
            idx = order[i:i + config.batch_size]
            if len(idx) < 2:
                continue
            schedule.apply(opt, step)
            loss = F.cross_entropy(model.classify(Tensor(data.inputs[idx])), data.labels[idx])
            loss.backward()
            opt.step()
            step += 1
        log.debug("epoch %d loss %.4f", epoch, loss.item())
    model.eval()
    return accuracy(model, data)
