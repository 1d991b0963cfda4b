from .backend import ForwardBackend, ResponseBackend, StepperBackend
from .request import RealizationBatch, BatchResult
from .runner import EnsembleRunner
from .source import RealizationSource

__all__ = [
    'EnsembleRunner',
    'RealizationSource',
    'ForwardBackend',
    'ResponseBackend',
    'StepperBackend',
    'RealizationBatch',
    'BatchResult',
]
