"""Deterministic desk-scale training loop.

AdamW with decoupled weight decay, a per-epoch cosine-annealed learning
rate, gradient accumulation over four bags (batch size one), per-epoch patch
subsampling to a cap, and early stopping on the validation loss ("improve"
means strictly lower than the best seen so far, zero tolerance).  The whole
run is driven by one seed; repeated runs are bitwise identical.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .. import rng as rngmod
from ..errors import ClassMissing, EmptySplit, NonFiniteLoss
from ..scores import PredictionSet, RunKey
from .bags import Bag
from .model import AggregatorParams, ModelDims, _forward_graph, init_params, loss_and_grad

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass(frozen=True)
class CosineAnneal:
    T_max: int = 30
    eta_min: float = 0.0


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    weight_decay: float = 1e-2
    max_epochs: int = 30
    early_stop_patience: int = 10
    grad_accum: int = 4
    batch_size: int = 1
    cosine_anneal: CosineAnneal = field(default_factory=CosineAnneal)
    max_patches: int = 8192
    rng_seed: int = 0
    val_fraction: float = 0.2

    def __post_init__(self):
        positive = ("lr", "weight_decay", "max_epochs", "early_stop_patience",
                    "grad_accum", "batch_size", "max_patches")
        for name in positive:
            if getattr(self, name) <= 0 and name != "weight_decay":
                raise ValueError(f"{name} must be positive")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")
        if not 0.0 < self.val_fraction < 1.0:
            raise ValueError("val_fraction must be in (0, 1)")

    @staticmethod
    def from_json(text: str) -> "TrainConfig":
        raw = json.loads(text)
        if "cosine_anneal" in raw:
            raw["cosine_anneal"] = CosineAnneal(**raw["cosine_anneal"])
        return TrainConfig(**raw)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)


def cosine_lr(epoch_index: int, config: TrainConfig) -> float:
    """Annealed rate for a 0-based epoch index; lr(0) = lr, lr(T_max) = eta_min."""
    ca = config.cosine_anneal
    t = min(epoch_index, ca.T_max)
    return ca.eta_min + (config.lr - ca.eta_min) * 0.5 * (1.0 + math.cos(math.pi * t / ca.T_max))


class AdamW:
    """Decoupled weight decay: the decay step bypasses the moment estimates,
    so with weight_decay=0 the trajectory is exactly plain Adam."""

    def __init__(self, params: AggregatorParams, weight_decay: float):
        self.weight_decay = weight_decay
        self.m = {k: np.zeros_like(v) for k, v in params.tensors.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.tensors.items()}
        self.t = 0

    def step(self, params: AggregatorParams, grads: dict[str, np.ndarray], lr: float):
        self.t += 1
        bc1 = 1.0 - ADAM_BETA1 ** self.t
        bc2 = 1.0 - ADAM_BETA2 ** self.t
        for key, tensor in params.tensors.items():
            g = grads[key]
            self.m[key] = ADAM_BETA1 * self.m[key] + (1.0 - ADAM_BETA1) * g
            self.v[key] = ADAM_BETA2 * self.v[key] + (1.0 - ADAM_BETA2) * g * g
            update = (self.m[key] / bc1) / (np.sqrt(self.v[key] / bc2) + ADAM_EPS)
            tensor -= lr * (update + self.weight_decay * tensor)
            if not np.all(np.isfinite(tensor)):
                raise NonFiniteLoss(f"parameter {key!r} left the finite range")


def _subsample(bag_patches: np.ndarray, max_patches: int, gen: np.random.Generator):
    n = bag_patches.shape[0]
    if n <= max_patches:
        return bag_patches
    idx = gen.choice(n, size=max_patches, replace=False)
    return bag_patches[np.sort(idx)]


def _mean_loss(params, bags) -> float:
    total = 0.0
    for bag in bags:
        probs, _, _ = _forward_graph(params, bag.patches, False, None)
        total += -math.log(max(float(probs[bag.label]), 1e-300))
    return total / len(bags)


def train(bags_train: list[Bag], bags_val: list[Bag], config: TrainConfig,
          variant: str, dims: ModelDims, patch_provider=None):
    """Train one aggregator; returns (best params, per-epoch history).

    ``patch_provider(bag, epoch, gen) -> (n, d) array`` optionally replaces a
    bag's training features each epoch (used to resample augmentations);
    subsampling to ``max_patches`` happens after it.  History rows are
    ``(epoch, train_loss, val_loss, lr)`` with 1-based epochs.
    """
    if not bags_train or not bags_val:
        raise EmptySplit("need non-empty train and validation bags")
    present = {bag.label for bag in bags_train}
    missing = set(range(dims.n_classes)) - present
    if missing:
        raise ClassMissing(f"classes {sorted(missing)} absent from training bags")

    init_gen = rngmod.substream(config.rng_seed, "init", variant)
    params = init_params(variant, dims, init_gen)
    optimizer = AdamW(params, config.weight_decay)

    best_val = math.inf
    best_epoch = 0
    best_params = params.copy()
    bad_epochs = 0
    history = []

    order = np.arange(len(bags_train))
    for epoch in range(1, config.max_epochs + 1):
        lr = cosine_lr(epoch - 1, config)
        epoch_gen = rngmod.substream(config.rng_seed, "epoch", variant, epoch)
        epoch_gen.shuffle(order)

        accum = None
        accum_count = 0
        epoch_loss = 0.0

        def flush():
            nonlocal accum, accum_count
            if accum_count == 0:
                return
            for key in accum:
                accum[key] /= accum_count
            optimizer.step(params, accum, lr)
            accum = None
            accum_count = 0

        for bag_pos in order:
            bag = bags_train[bag_pos]
            patches = bag.patches if patch_provider is None else patch_provider(bag, epoch, epoch_gen)
            patches = _subsample(patches, config.max_patches, epoch_gen)
            step_bag = Bag(bag.patient_id, patches, bag.label)
            loss, grads = loss_and_grad(params, step_bag, train_mode=True, rng=epoch_gen)
            epoch_loss += loss
            if accum is None:
                accum = grads
            else:
                for key in accum:
                    accum[key] += grads[key]
            accum_count += 1
            if accum_count == config.grad_accum:
                flush()
        flush()  # partial remainder still triggers an update

        val_loss = _mean_loss(params, bags_val)
        history.append((epoch, epoch_loss / len(bags_train), val_loss, lr))
        if val_loss < best_val:
            best_val = val_loss
            best_epoch = epoch
            best_params = params.copy()
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs >= config.early_stop_patience:
                break

    return best_params, {"history": history, "best_epoch": best_epoch, "best_val_loss": best_val}


def evaluate(params: AggregatorParams, bags: list[Bag], key: RunKey | None = None) -> PredictionSet:
    """Score bags deterministically (full bags, dropout off).

    The score is the positive-class probability.  Returned without the
    label-diversity check so degenerate evaluation sets can still be
    inspected; AUROC itself rejects them.
    """
    key = key or RunKey("adhoc", "attmil", "adhoc", 1, "none", "low")
    samples = []
    for bag in bags:
        probs, _, _ = _forward_graph(params, bag.patches, False, None)
        samples.append((bag.patient_id, float(probs[1]), bag.label))
    return PredictionSet(key=key, samples=tuple(sorted(samples, key=lambda s: s[0])))


def split_train_val(bags: list[Bag], val_fraction: float, gen: np.random.Generator):
    """Shuffled train/validation split (at least one bag on each side)."""
    if len(bags) < 2:
        raise EmptySplit("need at least two bags to split")
    order = np.arange(len(bags))
    gen.shuffle(order)
    n_val = max(1, int(round(len(bags) * val_fraction)))
    n_val = min(n_val, len(bags) - 1)
    val_idx = set(order[:n_val].tolist())
    train = [bags[i] for i in range(len(bags)) if i not in val_idx]
    val = [bags[i] for i in range(len(bags)) if i in val_idx]
    return train, val
