from dataclasses import asdict, dataclass, replace

from .errors import ConfigError

LR_GRID = (1e-2, 1e-3, 1e-4)
WEIGHT_DECAY_GRID = (1e-3, 1e-4, 1e-5)


@dataclass(frozen=True)
class TrainConfig:
    """Optimization settings shared by every trainable model."""

    lr: float = 1e-3
    weight_decay: float = 1e-4
    epochs: int = 200
    batch_size: int = 2048
    negatives: int = 1
    seed: int = 0
    layers: int = 2
    patience: int = 10
    eval_every: int = 1

    def __post_init__(self):
        if self.lr <= 0:
            raise ConfigError(f"learning rate must be positive, got {self.lr}")
        if self.weight_decay < 0:
            raise ConfigError(f"weight decay must be non-negative, got {self.weight_decay}")
        if self.epochs < 0 or self.batch_size < 1 or self.negatives < 1:
            raise ConfigError("epochs >= 0, batch_size >= 1 and negatives >= 1 are required")

    def on_grid(self):
        return self.lr in LR_GRID and self.weight_decay in WEIGHT_DECAY_GRID

    def with_(self, **changes):
        return replace(self, **changes)

    def to_dict(self):
        return asdict(self)
