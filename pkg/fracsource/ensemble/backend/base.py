from abc import ABC, abstractmethod

from ..request import RealizationBatch, BatchResult


class ForwardBackend(ABC):
    """Turns realization batches into observed traces."""

    @abstractmethod
    def process(self, batch: RealizationBatch) -> BatchResult:
        """
        Step a batch of realizations and return their traces.

        Failures are returned as ``BatchResult.from_error`` rather than raised.
        """
        pass

    @abstractmethod
    def is_healthy(self) -> bool:
        """True if the backend holds a usable factorization."""
        pass
