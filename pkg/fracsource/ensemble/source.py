import logging
from typing import Callable, List, Optional

import numpy as np

from .request import RealizationBatch, BatchResult


class RealizationSource:
    """Hands out realization batches and collects their traces into disjoint rows."""

    def __init__(self,
                 count: int,
                 steps: int,
                 noise_fn: Callable[[int], np.ndarray],
                 batch_size: int = 64,
                 keep_final: bool = False,
                 field_size: Optional[int] = None):
        """
        Initialize a realization source.

        Args:
            count: Number of realizations R
            steps: Number of time steps N
            noise_fn: Maps a realization index to its N standard normal draws
            batch_size: Maximum realizations per batch
            keep_final: Preallocate storage for final-time fields
            field_size: Length of a field vector (required with keep_final)
        """
        if count < 1:
            raise ValueError(f"realization count must be >= 1, got {count}")
        if batch_size < 1:
            raise ValueError(f"batch size must be >= 1, got {batch_size}")
        self.count = count
        self.steps = steps
        self.noise_fn = noise_fn
        self.batch_size = batch_size
        self.trajectories = np.full((count, steps + 1), np.nan)
        self.final_fields = np.zeros((count, field_size)) if keep_final else None
        self.saved = 0
        self._next_index = 0
        self.logger = logging.getLogger(__name__)

    def get_next_batches(self, max_batches: int = 1) -> List[RealizationBatch]:
        """Return up to ``max_batches`` new batches; empty once every index was issued."""
        batches = []
        while len(batches) < max_batches and not self.is_exhausted:
            start = self._next_index
            stop = min(start + self.batch_size, self.count)
            indices = list(range(start, stop))
            noise = np.column_stack([self.noise_fn(i) for i in indices])
            batches.append(RealizationBatch(indices, noise))
            self._next_index = stop
        return batches

    def save_batch_result(self, result: BatchResult) -> None:
        indices = result.batch.indices
        self.trajectories[indices] = result.traces
        if self.final_fields is not None and result.final_fields is not None:
            self.final_fields[indices] = result.final_fields
        self.saved += len(indices)

    @property
    def is_exhausted(self) -> bool:
        """True once every realization index has been issued."""
        return self._next_index >= self.count

    @property
    def is_complete(self) -> bool:
        return self.saved == self.count
