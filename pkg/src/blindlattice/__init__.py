"""Blind measurement-based quantum computation on latticed cluster units, simulated classically."""

from .angles import ALL_ANGLES, HALF_PI, PI, Angle8
from .protocol import ProtocolConfig, ServerStrategy, Transcript, run_protocol

__version__ = "0.1.0"

__all__ = ["ALL_ANGLES", "Angle8", "HALF_PI", "PI", "ProtocolConfig", "ServerStrategy", "Transcript", "run_protocol", "__version__"]
