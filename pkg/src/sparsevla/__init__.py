"""Token-sparse multi-view vision-language-action stack, desk scale.

Instruction-guided token selection, multi-view geometric fusion with a
cosine-decay schedule, block-causal aggregation, structured-mask attention
with auxiliary dynamic/depth objectives, a deterministic synthetic world,
and analytical token/FLOPs auditing.
"""

from .config import FullConfig, micro_config, toy_config
from .model import VLAModel
from .tensor import ConfigError, ContractError, Tape, Tensor, backward

__all__ = [
    "FullConfig", "micro_config", "toy_config", "VLAModel",
    "ConfigError", "ContractError", "Tape", "Tensor", "backward",
]

__version__ = "0.1.0"
