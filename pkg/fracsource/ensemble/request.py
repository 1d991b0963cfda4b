"""
Work items exchanged between the ensemble runner and a forward backend.

A ``RealizationBatch`` carries the realization indices it covers together with
their standard normal draws; a ``BatchResult`` carries the observed traces back.
"""
from typing import Any, List, Optional

import numpy as np


class RealizationBatch:
    """
    A block of realizations to be stepped together.

    Contains everything a backend needs: which realizations, and the noise
    that drives them.
    """
    def __init__(self, indices: List[int], noise: np.ndarray, context: Optional[Any] = None):
        """
        Initialize a batch.

        Args:
            indices: Realization indices covered by this batch
            noise: (N, len(indices)) standard normal draws, one column per realization
            context: Optional context passed through to the result
        """
        if noise.ndim != 2 or noise.shape[1] != len(indices):
            raise ValueError(f"noise must have one column per realization, got shape {noise.shape}")
        self.indices = list(indices)
        self.noise = noise
        self.context = context

    @property
    def size(self) -> int:
        return len(self.indices)


class BatchResult:
    """
    Outcome of processing a ``RealizationBatch``.

    Holds the observed traces on success, or the error that stopped the batch.
    """
    def __init__(self,
                 batch: RealizationBatch,
                 traces: Optional[np.ndarray] = None,
                 error: Optional[Exception] = None,
                 final_fields: Optional[np.ndarray] = None):
        """
        Initialize a result.

        Args:
            batch: The batch that produced this result
            traces: (len(indices), N+1) observed values u(x0, t_0..t_N)
            error: Exception if the batch failed
            final_fields: Optional (len(indices), m) fields at t_N
        """
        self.batch = batch
        self.traces = traces
        self.error = error
        self.final_fields = final_fields

    @property
    def is_success(self) -> bool:
        return self.error is None and self.traces is not None

    @classmethod
    def from_error(cls, batch: RealizationBatch, error: Exception) -> 'BatchResult':
        """Create a result representing an error."""
        return cls(batch=batch, traces=None, error=error)
