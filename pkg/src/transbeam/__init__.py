"""Learned Transformer beamforming optimiser for multi-user MISO downlinks."""
from .baselines import mmse_beamformer, mrt_beamformer, wmmse, wmmse_batch
from .channel import SystemConfig, make_batch, sample_channel
from .l2o import L2OModel, pga_refine, rollout
from .objectives import mse_objective, sum_rate, sum_rate_grad
from .trainer import TrainConfig, evaluate, train
from .transformer import ModelConfig, block_forward

__version__ = "0.1.0"

__all__ = [
    "L2OModel", "ModelConfig", "SystemConfig", "TrainConfig", "block_forward", "evaluate",
    "make_batch", "mmse_beamformer", "mrt_beamformer", "mse_objective", "pga_refine",
    "rollout", "sample_channel", "sum_rate", "sum_rate_grad", "train", "wmmse", "wmmse_batch",
]
