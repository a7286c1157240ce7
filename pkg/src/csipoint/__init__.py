"""Point clouds from WiFi CSI through latent-space alignment with a PointNet autoencoder."""

from .errors import ContractError, EstimationError, NonFiniteError, ParseError, TrainingDiverged

__version__ = "0.1.0"

__all__ = ["ContractError", "EstimationError", "NonFiniteError", "ParseError", "TrainingDiverged", "__version__"]
