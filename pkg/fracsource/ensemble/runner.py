import logging
import time
from concurrent.futures import FIRST_COMPLETED, Future, ThreadPoolExecutor, wait
from typing import Dict

from fracsource.errors import RealizationFailed
from .backend.base import ForwardBackend
from .request import RealizationBatch, BatchResult
from .source import RealizationSource


class EnsembleRunner:
    """
    Runs realization batches on worker threads.
    Keeps every worker busy, stores results as they complete and aborts on the
    first failed batch.
    """

    def __init__(self, num_workers: int = 4, progress_interval: float = 10.0):
        """
        Initialize the EnsembleRunner.

        Args:
            num_workers: Maximum number of concurrent worker threads
            progress_interval: Seconds between progress log lines
        """
        self.num_workers = max(1, num_workers)
        self.progress_interval = progress_interval
        self.pending_futures: Dict[Future, RealizationBatch] = {}
        self.logger = logging.getLogger(__name__)

    def run(self, source: RealizationSource, backend: ForwardBackend) -> None:
        """
        Process every realization of ``source`` with ``backend``.

        Raises:
            RealizationFailed: a batch failed; remaining batches are cancelled
        """
        if not backend.is_healthy():
            raise RealizationFailed([], RuntimeError("forward backend is not healthy"))
        started = time.monotonic()
        last_report = started
        self.logger.info(f"Running {source.count} realizations on {self.num_workers} workers "
                         f"(batch size {source.batch_size})")

        with ThreadPoolExecutor(max_workers=self.num_workers) as executor:
            try:
                while True:
                    # 1. Keep workers busy
                    free = self.num_workers - len(self.pending_futures)
                    for batch in source.get_next_batches(free):
                        future = executor.submit(backend.process, batch)
                        self.pending_futures[future] = batch
                        self.logger.debug(f"Submitted realizations {batch.indices[0]}..{batch.indices[-1]}")

                    if not self.pending_futures:
                        break

                    # 2. Store completed batches
                    done, _ = wait(list(self.pending_futures), return_when=FIRST_COMPLETED)
                    for future in done:
                        self._store(future, source)

                    # 3. Progress
                    now = time.monotonic()
                    if now - last_report >= self.progress_interval:
                        self.logger.info(f"Realizations done: {source.saved}/{source.count} "
                                         f"({now - started:.1f}s elapsed)")
                        last_report = now
            except BaseException:
                for future in self.pending_futures:
                    future.cancel()
                self.pending_futures.clear()
                raise

        self.logger.info(f"All {source.count} realizations completed in {time.monotonic() - started:.1f}s")

    def _store(self, future: Future, source: RealizationSource) -> None:
        batch = self.pending_futures.pop(future)
        try:
            result = future.result()
        except Exception as e:
            # Backends should wrap errors in a BatchResult; treat a raised one the same way.
            result = BatchResult.from_error(batch, e)
        if not result.is_success:
            raise RealizationFailed(batch.indices, result.error)
        source.save_batch_result(result)
