"""Hyperparameter grids over TrainConfig fields."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field, replace

from ..errors import ArgumentError
from ..neural.training import TrainConfig

DEFAULT_BUDGET = 64


@dataclass(frozen=True)
class GridSpec:
    axes: dict = field(default_factory=dict)
    budget: int = DEFAULT_BUDGET

    def __post_init__(self):
        known = TrainConfig.field_types()
        for name, values in self.axes.items():
            if name not in known or name == "seed":
                raise ArgumentError(f"unknown grid axis {name!r}")
            if len(values) == 0:
                raise ArgumentError(f"grid axis {name!r} has no values")
        if self.size > self.budget:
            raise ArgumentError(f"grid has {self.size} points, budget is {self.budget}")

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(sorted(self.axes))

    @property
    def size(self) -> int:
        return math.prod(len(v) for v in self.axes.values()) if self.axes else 1

    def points(self) -> list[tuple]:
        """Every combination as a value tuple (axis names sorted), in lexicographic order."""
        return sorted(itertools.product(*(sorted(set(self.axes[n])) for n in self.names)))

    def as_dict(self, point: tuple) -> dict:
        return dict(zip(self.names, point))

    def apply(self, base: TrainConfig, point: tuple) -> TrainConfig:
        return replace(base, **self.as_dict(point))


def select_best(scores: dict) -> tuple:
    """Argmin of mean validation loss; ``None`` marks a failed point. Ties go to the smaller tuple."""
    valid = [(loss, point) for point, loss in scores.items() if loss is not None and math.isfinite(loss)]
    if not valid:
        raise ArgumentError("every grid point failed")
    return min(valid)[1]
