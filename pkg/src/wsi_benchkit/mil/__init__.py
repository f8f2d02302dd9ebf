from .bags import Bag, make_bag
from .model import AggregatorParams, ModelDims, forward, init_params, loss_and_grad
from .training import CosineAnneal, TrainConfig, cosine_lr, evaluate, train

__all__ = [
    "Bag", "make_bag",
    "AggregatorParams", "ModelDims", "forward", "init_params", "loss_and_grad",
    "CosineAnneal", "TrainConfig", "cosine_lr", "evaluate", "train",
]
