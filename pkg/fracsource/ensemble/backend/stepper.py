import logging

import numpy as np

from fracsource.fractime import L1Stepper, stochastic_amplitudes
from .base import ForwardBackend
from ..request import RealizationBatch, BatchResult


class StepperBackend(ForwardBackend):
    """Steps every realization of a batch through the L1 recursion (right-hand sides batched)."""

    def __init__(self,
                 stepper: L1Stepper,
                 load: np.ndarray,
                 observation: np.ndarray,
                 g1: np.ndarray,
                 g2: np.ndarray,
                 keep_final: bool = False):
        """
        Args:
            stepper: Factorized L1 stepper shared by all batches
            load: Source vector in the stepper's space
            observation: Vector mapping a field to u(x0)
            g1, g2: Time signals sampled at t_1..t_N
            keep_final: Also return each realization's field at t_N
        """
        self.stepper = stepper
        self.load = load
        self.observation = observation
        self.g1 = np.asarray(g1, dtype=float)
        self.g2 = np.asarray(g2, dtype=float)
        self.keep_final = keep_final
        self.logger = logging.getLogger(__name__)

    def process(self, batch: RealizationBatch) -> BatchResult:
        try:
            amplitudes = stochastic_amplitudes(self.stepper.grid, self.g1, self.g2, batch.noise)
            result = self.stepper.march(
                self.load, amplitudes, observation=self.observation, keep_fields=self.keep_final
            )
            final = result.fields[-1].T.copy() if self.keep_final else None
            return BatchResult(batch, traces=result.trace.T.copy(), final_fields=final)
        except Exception as e:
            self.logger.debug(f"Batch {batch.indices[0]}..{batch.indices[-1]} failed: {e}")
            return BatchResult.from_error(batch, e)

    def is_healthy(self) -> bool:
        return self.stepper.system is not None
