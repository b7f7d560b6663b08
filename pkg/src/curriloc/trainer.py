"""Online triplet training of the embedding encoder with plain SGD."""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .core import ImageRecord
from .data import DEFAULT_GRID, feature_matrix
from .encoder import (DEFAULT_DIM, DEFAULT_HIDDEN, EncoderParams, _backward, _forward,
                      encoder_init, sgd_step)
from .errors import ConfigError, NonFinite
from .losses import LossParams, LossSpec, TripletBatch, loss_and_gradient
from .mining import MiningConfig, make_sampler


@dataclass(frozen=True)
class TrainConfig:
    loss: LossSpec = field(default_factory=lambda: LossSpec("TL", LossParams(margin=0.5)))
    learning_rate: float = 0.001
    batch_size: int = 8
    total_triplets: int = 50000
    seed: int = 0
    hidden: tuple[int, ...] = DEFAULT_HIDDEN
    dim: int = DEFAULT_DIM
    grid: tuple[int, int] = DEFAULT_GRID

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ConfigError(f"learning rate must be >= 0, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ConfigError(f"batch size must be positive, got {self.batch_size}")
        if self.total_triplets < 1:
            raise ConfigError(f"total triplets must be positive, got {self.total_triplets}")
        if self.dim < 1 or any(h < 1 for h in self.hidden):
            raise ConfigError("layer widths must be positive")

    @property
    def steps(self) -> int:
        return math.ceil(self.total_triplets / self.batch_size)

    def encoder_shape(self, input_dim: int) -> tuple[int, ...]:
        return (input_dim,) + tuple(self.hidden) + (self.dim,)


@dataclass
class TrainLog:
    steps: list[int] = field(default_factory=list)
    weights: list[float] = field(default_factory=list)
    losses: list[float] = field(default_factory=list)
    validation: list[tuple[int, float]] = field(default_factory=list)
    duration: float = 0.0
    best_params: EncoderParams | None = None
    best_step: int | None = None

    def to_csv(self) -> str:
        lines = ["step,w,loss"]
        lines += [f"{s},{w!r},{l!r}" for s, w, l in zip(self.steps, self.weights, self.losses)]
        return "\n".join(lines) + "\n"


def train(dataset: Sequence[ImageRecord], mining: MiningConfig, config: TrainConfig,
          encoder_seed: int | None = None, *,
          validate: Callable[[EncoderParams], float] | None = None,
          init: EncoderParams | None = None,
          on_batch: Callable[[int, np.ndarray], None] | None = None) -> tuple[EncoderParams, TrainLog]:
    """Run ``ceil(T / N)`` SGD steps on freshly sampled triplets.

    The curriculum weight at step ``s`` is taken after ``s * N`` of the ``T``
    triplets have been consumed.  ``validate`` (higher is better) is called
    every 10% of the steps; the best parameters are kept on the log.
    ``on_batch`` sees the (N, 3) index array of each batch.
    """
    records = list(dataset)
    sampler = make_sampler(records, mining)  # fails fast on unusable datasets
    x = feature_matrix(records, config.grid)
    if init is None:
        seed = config.seed if encoder_seed is None else encoder_seed
        params = encoder_init(config.encoder_shape(x.shape[1]), seed)
    else:
        params = init.copy()
    if params.input_dim != x.shape[1]:
        raise ConfigError(f"encoder expects {params.input_dim} inputs but features have {x.shape[1]}")

    rng = np.random.default_rng(mining.seed)
    n, total = config.batch_size, config.total_triplets
    spec = config.loss
    steps = config.steps
    cadence = max(1, math.ceil(steps / 10))
    log = TrainLog()
    best = -math.inf
    start = time.perf_counter()

    for step in range(steps):
        idx = np.array([sampler.sample_indices(rng) for _ in range(n)])
        if on_batch is not None:
            on_batch(step, idx)
        w = spec.schedule.weight(step * n, total) if spec.is_curriculum else 1.0
        inputs = x[idx.T.ravel()]  # anchors, then positives, then negatives
        desc, cache = _forward(params, inputs)
        batch = TripletBatch(desc[:n], desc[n:2 * n], desc[2 * n:])
        value, grads = loss_and_gradient(spec, batch, w)
        upstream = np.concatenate(grads, axis=0)
        params = sgd_step(params, _backward(params, cache, upstream), config.learning_rate)
        if not (math.isfinite(value) and params.all_finite()):
            raise NonFinite(f"training diverged at step {step}")
        log.steps.append(step)
        log.weights.append(w)
        log.losses.append(value)
        if validate is not None and ((step + 1) % cadence == 0 or step == steps - 1):
            score = float(validate(params))
            log.validation.append((step, score))
            if score > best:
                best = score
                log.best_params = params.copy()
                log.best_step = step
    log.duration = time.perf_counter() - start
    return params, log


def train_coarse(dataset, config: TrainConfig, mining_seed: int = 0, encoder_seed: int | None = None,
                 **kwargs) -> tuple[EncoderParams, TrainLog]:
    """Room-discriminative model: triplets by room label."""
    mining = MiningConfig(stage="coarse", seed=mining_seed, count=config.total_triplets)
    return train(dataset, mining, config, encoder_seed, **kwargs)


def train_fine(dataset, config: TrainConfig, mining_seed: int = 0, encoder_seed: int | None = None,
               r_plus: float = 0.4, r_minus: float = 0.4, positive_same_room: bool = True,
               **kwargs) -> tuple[EncoderParams, TrainLog]:
    """Position-discriminative model: triplets by metric distance."""
    mining = MiningConfig(stage="fine", r_plus=r_plus, r_minus=r_minus, seed=mining_seed,
                          count=config.total_triplets, positive_same_room=positive_same_room)
    return train(dataset, mining, config, encoder_seed, **kwargs)


def with_loss(config: TrainConfig, loss: LossSpec) -> TrainConfig:
    return replace(config, loss=loss)
