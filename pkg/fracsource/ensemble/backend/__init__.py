from .base import ForwardBackend
from .response import ResponseBackend
from .stepper import StepperBackend

__all__ = ["ForwardBackend", "ResponseBackend", "StepperBackend"]
