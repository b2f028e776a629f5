"""Autodiff substrate, models, losses, optimizer and checkpoint I/O."""

from .checkpoint import load_checkpoint, save_checkpoint
from .dnn import DnnConfig, dnn_forward, init_dnn
from .losses import TaskWeights, mae_loss, task_losses, total_loss
from .optim import AdamState, adam_step, zero_grads
from .tensor import GraphError, NumericalError, Tensor
from .vit import TASKS, VitConfig, attention, encoder_block, init_vit, multi_head, patch_embed, vit_forward

__all__ = [
    "AdamState", "DnnConfig", "GraphError", "NumericalError", "TASKS", "TaskWeights", "Tensor",
    "VitConfig", "adam_step", "attention", "dnn_forward", "encoder_block", "init_dnn", "init_vit",
    "load_checkpoint", "mae_loss", "multi_head", "patch_embed", "save_checkpoint", "task_losses",
    "total_loss", "vit_forward", "zero_grads",
]
