"""Multiple-hypothesis prediction for recurrent sequence models, on plain numpy."""
from .errors import ContractViolation, NonFiniteError
from .mhp import MhpConfig, meta_loss
from .numerics import Graph, Tensor, backward

__version__ = "0.1.0"
