"""Collaborative generator/clone training against a budgeted oracle.

Each round runs ``n_g`` generator steps that push the clone's batch
predictions towards high entropy, then ``n_c`` clone steps that regress the
clone's logits onto pseudo-logits recovered from victim posteriors. Every
step draws a fresh latent batch.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .autodiff import SGD, Adam, LrSchedule
from .autodiff import functional as F
from .autodiff.tensor import Tensor, as_tensor, no_grad
from .metrics import MetricRow, agreement, entropy_of_mean, fingerprint, predict
from .models import ClassifierModel, GeneratorModel, save_model
from .oracle import VictimOracle, approx_logits
from .seeding import substream

log = logging.getLogger(__name__)

DIVERSITY_VARIANTS = ("batch", "sample", "label")
CLONE_LOSSES = ("l1", "l2", "kl")


class AttackDiverged(RuntimeError):
    def __init__(self, message: str, checkpoints: tuple[str, ...] = ()):
        super().__init__(message)
        self.checkpoints = checkpoints


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

def _as_probs(p, what: str) -> Tensor:
    p = as_tensor(p)
    a = p.data
    if a.ndim != 2 or a.shape[0] == 0:
        raise ValueError(f"{what}: expected a non-empty (N, K) batch, got shape {a.shape}")
    if np.any(a < -1e-12) or np.any(np.abs(a.sum(axis=1) - 1.0) > 1e-9):
        raise ValueError(f"{what}: rows must be non-negative and sum to 1")
    return p


def _neg_entropy(alpha: Tensor) -> Tensor:
    return (alpha * alpha.log()).sum(axis=-1)


def diversity_loss_batch(probs) -> Tensor:
    """Negative entropy of the batch-mean class distribution."""
    p = _as_probs(probs, "diversity_loss_batch")
    return _neg_entropy(p.mean(axis=0))


def diversity_loss_sample(probs) -> Tensor:
    """Mean over rows of each row's negative entropy."""
    p = _as_probs(probs, "diversity_loss_sample")
    return _neg_entropy(p).mean()


def hard_label_frequencies(probs: np.ndarray) -> np.ndarray:
    # argmax picks the lowest index on ties
    n, k = probs.shape
    return np.bincount(probs.argmax(axis=1), minlength=k) / n


def diversity_loss_label(probs, gradient: str = "straight_through") -> Tensor:
    """Negative entropy of argmax-label frequencies.

    The forward value is exact. Gradients: ``"straight_through"`` evaluates the
    derivative at the hard frequencies and routes it through the soft batch
    mean; ``"soft"`` uses the batch-level loss's gradient unchanged.
    """
    p = _as_probs(probs, "diversity_loss_label")
    hard = hard_label_frequencies(p.data)
    soft = p.mean(axis=0)
    if gradient == "straight_through":
        return _neg_entropy(F.straight_through(hard, soft))
    if gradient == "soft":
        exact = float((hard * np.log(np.maximum(hard, 1e-12))).sum())
        surrogate = _neg_entropy(soft)
        return F.straight_through(np.asarray(exact), surrogate)
    raise ValueError(f"unknown label-loss gradient mode {gradient!r}")


def diversity_loss(variant: str, probs, label_gradient: str = "straight_through") -> Tensor:
    if variant == "batch":
        return diversity_loss_batch(probs)
    if variant == "sample":
        return diversity_loss_sample(probs)
    if variant == "label":
        return diversity_loss_label(probs, label_gradient)
    raise ValueError(f"unknown diversity variant {variant!r}")


def clone_loss(variant: str, victim_logits, clone_logits) -> Tensor:
    """Batch-mean discrepancy between victim pseudo-logits and clone logits."""
    v = as_tensor(victim_logits)
    c = as_tensor(clone_logits)
    if v.shape != c.shape or v.ndim != 2:
        raise ValueError(f"clone_loss: shape mismatch {v.shape} vs {c.shape}")
    n = v.shape[0]
    if variant == "l1":
        return (v - c).abs().sum() * (1.0 / n)
    if variant == "l2":
        return ((v - c) ** 2).sum() * (1.0 / n)
    if variant == "kl":
        pv = F.softmax(v)
        return (pv * (F.log_softmax(v) - F.log_softmax(c))).sum() * (1.0 / n)
    raise ValueError(f"unknown clone loss {variant!r}")


# ---------------------------------------------------------------------------
# configuration and results
# ---------------------------------------------------------------------------

@dataclass
class AttackConfig:
    budget: int
    batch_size: int = 256
    n_g: int = 1
    n_c: int = 5
    diversity: str = "batch"
    clone_loss: str = "l1"
    label_gradient: str = "straight_through"
    generator_lr: float = 1e-4
    generator_betas: tuple[float, float] = (0.9, 0.999)
    clone_lr: float = 0.1
    clone_momentum: float = 0.9
    clone_weight_decay: float = 5e-4
    lr_milestones: tuple[float, ...] = (0.1, 0.3, 0.5)
    lr_factor: float = 0.3
    seed: int = 0
    eval_every: int = 10

    def __post_init__(self):
        self.generator_betas = tuple(self.generator_betas)
        self.lr_milestones = tuple(self.lr_milestones)
        self.validate()

    def validate(self) -> None:
        if self.n_g < 0:
            raise ValueError("n_g must be >= 0")
        if self.n_c < 1:
            raise ValueError("n_c must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.budget < self.n_c * self.batch_size:
            raise ValueError(f"budget {self.budget} is below one round of clone queries "
                             f"(n_c * batch_size = {self.n_c * self.batch_size})")
        if self.diversity not in DIVERSITY_VARIANTS:
            raise ValueError(f"diversity must be one of {DIVERSITY_VARIANTS}, got {self.diversity!r}")
        if self.clone_loss not in CLONE_LOSSES:
            raise ValueError(f"clone_loss must be one of {CLONE_LOSSES}, got {self.clone_loss!r}")
        if self.label_gradient not in ("straight_through", "soft"):
            raise ValueError(f"label_gradient must be straight_through or soft, got {self.label_gradient!r}")
        if self.eval_every < 1:
            raise ValueError("eval_every must be >= 1")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["generator_betas"] = list(self.generator_betas)
        d["lr_milestones"] = list(self.lr_milestones)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "AttackConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ValueError(f"unknown attack config field {unknown[0]!r}")
        return cls(**d)

    def fingerprint(self) -> str:
        d = self.to_dict()
        d.pop("seed")
        return fingerprint(d)


def round_plan(config: AttackConfig) -> tuple[int, int]:
    """(full rounds, clone steps in the trailing partial round)."""
    per_round = config.n_c * config.batch_size
    full = config.budget // per_round
    partial = (config.budget - full * per_round) // config.batch_size
    return full, partial


def expected_queries(config: AttackConfig) -> int:
    full, partial = round_plan(config)
    return (full * config.n_c + partial) * config.batch_size


@dataclass
class EvalSet:
    """Held-out inputs with their true labels and the victim's labels."""

    inputs: np.ndarray
    labels: np.ndarray
    victim_labels: np.ndarray

    @classmethod
    def from_victim(cls, victim: ClassifierModel, dataset) -> "EvalSet":
        return cls(dataset.inputs, dataset.labels, predict(victim, dataset.inputs))


@dataclass
class AttackResult:
    clone: ClassifierModel
    generator: Optional[GeneratorModel]
    trace: list[MetricRow] = field(default_factory=list)
    ledger: dict = field(default_factory=dict)
    losses: dict = field(default_factory=dict)

    @property
    def final(self) -> MetricRow:
        return self.trace[-1]


# ---------------------------------------------------------------------------
# the loop
# ---------------------------------------------------------------------------

def _sample_noise(rng: np.random.Generator, n: int, shape: tuple) -> np.ndarray:
    return rng.uniform(-1.0, 1.0, (n,) + tuple(shape))


def _run(
    config: AttackConfig,
    oracle: VictimOracle,
    clone: ClassifierModel,
    gen: Optional[GeneratorModel],
    eval_data: EvalSet,
    *,
    run_id: str,
    clock: Callable[[], float],
    on_row: Optional[Callable[[MetricRow], None]],
    checkpoint_dir: Optional[Path],
    fingerprint_extra: Optional[dict],
) -> AttackResult:
    config.validate()
    if oracle.ledger.remaining < config.n_c * config.batch_size:
        raise ValueError(f"oracle has {oracle.ledger.remaining} queries left, "
                         f"below one round ({config.n_c * config.batch_size})")
    if gen is not None and config.batch_size < 2 and any(".running_" in k for k, _ in gen.named_parameters()):
        raise ValueError("batch_size 1 cannot train a generator with batchnorm; use num_conv_blocks=0")
    cfg = replace(config, budget=min(config.budget, oracle.ledger.remaining))
    full, partial = round_plan(cfg)
    total_rounds = full + (1 if partial else 0)
    z_rng = substream(config.seed, "z-stream")
    n = cfg.batch_size

    fp_src = config.to_dict()
    fp_src.pop("seed")
    if fingerprint_extra:
        fp_src.update(fingerprint_extra)
    fp = fingerprint(fp_src)

    clone.train()
    clone_opt = SGD(clone.parameters(), lr=cfg.clone_lr, momentum=cfg.clone_momentum,
                    weight_decay=cfg.clone_weight_decay)
    schedule = LrSchedule("multistep", total_rounds, cfg.lr_milestones, cfg.lr_factor)
    gen_opt = None
    if gen is not None:
        gen.train()
        if cfg.n_g > 0:
            gen_opt = Adam(gen.parameters(), lr=cfg.generator_lr, betas=cfg.generator_betas)

    def synthesize() -> np.ndarray:
        if gen is None:
            return _sample_noise(z_rng, n, oracle.input_shape)
        with no_grad():
            return gen.generate(gen.sample_latent(n, z_rng)).data

    def checkpoint(tag: str = "") -> tuple[str, ...]:
        if checkpoint_dir is None:
            return ()
        checkpoint_dir.mkdir(parents=True, exist_ok=True)
        paths = [checkpoint_dir / f"clone{tag}.stlm"]
        save_model(clone, paths[0])
        if gen is not None:
            paths.append(checkpoint_dir / f"generator{tag}.stlm")
            save_model(gen, paths[1])
        return tuple(str(p) for p in paths)

    def abort(what: str, rnd: int):
        paths = checkpoint("_diverged")
        raise AttackDiverged(f"{what} loss became non-finite in round {rnd}", paths)

    trace: list[MetricRow] = []
    div_values: list[float] = []
    clone_values: list[float] = []
    window_sum = np.zeros(oracle.num_classes)
    window_count = 0
    start = clock()

    def evaluate():
        nonlocal window_sum, window_count
        agr = agreement(clone, eval_data.victim_labels, eval_data.inputs)
        acc = float(np.mean(predict(clone, eval_data.inputs) == eval_data.labels))
        alpha = window_sum / window_count
        ent = float(-(alpha * np.log(np.maximum(alpha, 1e-12))).sum())
        row = MetricRow(run_id, oracle.ledger.used, acc, agr, ent, clock() - start, fp)
        trace.append(row)
        window_sum = np.zeros(oracle.num_classes)
        window_count = 0
        checkpoint()
        if on_row is not None:
            on_row(row)
        log.info("%s queries=%d acc=%.4f agr=%.4f H=%.4f", run_id, row.queries_used, acc, agr, ent)

    for rnd in range(total_rounds):
        schedule.apply(clone_opt, rnd)
        if gen_opt is not None:
            schedule.apply(gen_opt, rnd)
            for _ in range(cfg.n_g):
                z = gen.sample_latent(n, z_rng)
                x = gen.generate(z)
                probs = F.softmax(clone.classify(x))
                loss = diversity_loss(cfg.diversity, probs, cfg.label_gradient)
                if not math.isfinite(loss.item()):
                    abort("diversity", rnd)
                div_values.append(loss.item())
                log.debug("round %d diversity_loss=%.12g", rnd, loss.item())
                loss.backward()
                gen_opt.step()
                clone.zero_grad()

        steps = cfg.n_c if rnd < full else partial
        for _ in range(steps):
            x = synthesize()
            post = oracle.query(x)
            window_sum += post.sum(axis=0)
            window_count += post.shape[0]
            target = approx_logits(post)
            loss = clone_loss(cfg.clone_loss, target, clone.classify(Tensor(x)))
            if not math.isfinite(loss.item()):
                abort("clone", rnd)
            clone_values.append(loss.item())
            loss.backward()
            clone_opt.step()

        if (rnd + 1) % cfg.eval_every == 0 or rnd + 1 == total_rounds:
            evaluate()

    clone.train()
    return AttackResult(clone, gen, trace, oracle.ledger.snapshot(),
                        {"diversity": div_values, "clone": clone_values})


def run_attack(
    config: AttackConfig,
    oracle: VictimOracle,
    clone: ClassifierModel,
    gen: GeneratorModel,
    eval_data: EvalSet,
    *,
    run_id: str = "db-dfms",
    clock: Callable[[], float] = time.monotonic,
    on_row: Optional[Callable[[MetricRow], None]] = None,
    checkpoint_dir=None,
    fingerprint_extra: Optional[dict] = None,
) -> AttackResult:
    """Steal ``oracle``'s victim into ``clone`` using queries from ``gen``.

    With ``n_g == 0`` the generator stays frozen and the run degenerates to
    stealing with a fixed query distribution.
    """
    return _run(config, oracle, clone, gen, eval_data, run_id=run_id, clock=clock, on_row=on_row,
                checkpoint_dir=Path(checkpoint_dir) if checkpoint_dir else None,
                fingerprint_extra=fingerprint_extra)


def run_random_noise_baseline(
    config: AttackConfig,
    oracle: VictimOracle,
    clone: ClassifierModel,
    eval_data: EvalSet,
    *,
    run_id: str = "random-noise",
    clock: Callable[[], float] = time.monotonic,
    on_row: Optional[Callable[[MetricRow], None]] = None,
    checkpoint_dir=None,
    fingerprint_extra: Optional[dict] = None,
) -> AttackResult:
    """Same clone loop with queries drawn uniformly from [-1, 1] per coordinate."""
    extra = {"baseline": "random-noise", **(fingerprint_extra or {})}
    return _run(config, oracle, clone, None, eval_data, run_id=run_id, clock=clock, on_row=on_row,
                checkpoint_dir=Path(checkpoint_dir) if checkpoint_dir else None,
                fingerprint_extra=extra)
