import logging

import numpy as np

from fracsource.fractime import L1Stepper, impulse_response, response_matrix, stochastic_amplitudes
from .base import ForwardBackend
from ..request import RealizationBatch, BatchResult


class ResponseBackend(ForwardBackend):
    """Evaluates realizations through the observed impulse response.

    The stochastic scheme is linear in the scalar forcing and its weights
    depend only on lags, so ``u(x0, t_n) = sum_k h_{n-k+1} s_k``. One recursion
    yields h; each realization is then a lower-triangular Toeplitz product.
    """

    def __init__(self,
                 stepper: L1Stepper,
                 load: np.ndarray,
                 observation: np.ndarray,
                 g1: np.ndarray,
                 g2: np.ndarray):
        self.grid = stepper.grid
        self.g1 = np.asarray(g1, dtype=float)
        self.g2 = np.asarray(g2, dtype=float)
        self.logger = logging.getLogger(__name__)
        self.response = impulse_response(stepper, load, observation)
        self._H = response_matrix(self.response)
        self.logger.debug(f"Impulse response ready (N={self.grid.N}, |h|_inf={np.abs(self.response).max():.3e})")

    def process(self, batch: RealizationBatch) -> BatchResult:
        try:
            amplitudes = stochastic_amplitudes(self.grid, self.g1, self.g2, batch.noise)
            traces = np.zeros((batch.size, self.grid.N + 1))
            traces[:, 1:] = (self._H @ amplitudes).T
            return BatchResult(batch, traces=traces)
        except Exception as e:
            self.logger.debug(f"Batch {batch.indices[0]}..{batch.indices[-1]} failed: {e}")
            return BatchResult.from_error(batch, e)

    def is_healthy(self) -> bool:
        return bool(np.all(np.isfinite(self.response)))
