from .checkpoint import read_checkpoint, write_checkpoint
from .gradcheck import grad_check
from .optim import AdamState, adam_step
from .train import TrainConfig, TrainHistory, TrainingAborted, denoise, train
from .unet import Arch, DenoiserParams, l2_loss, net_backward, net_forward, net_init

__all__ = [
    "AdamState", "Arch", "DenoiserParams", "TrainConfig", "TrainHistory", "TrainingAborted",
    "adam_step", "denoise", "grad_check", "l2_loss", "net_backward", "net_forward", "net_init",
    "read_checkpoint", "train", "write_checkpoint",
]
