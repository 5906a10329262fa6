"""GFlowNet training with optimal-transport path regularization on the hypergrid."""

from .estimator import HypergridGFlowNet
from .hypergrid import EnvSpec, State
from .path_reg import RegularizerConfig
from .policy import PolicyModel
from .train import TrainConfig, train

__all__ = ["EnvSpec", "HypergridGFlowNet", "PolicyModel", "RegularizerConfig", "State", "TrainConfig", "train"]
__version__ = "0.1.0"
