from .app import create_app
from .scorers import ClipScorer, StubScorer, softmax

__all__ = ["ClipScorer", "StubScorer", "create_app", "softmax"]
