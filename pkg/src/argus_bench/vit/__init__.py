"""Micro 3D vision transformer with hand-written gradients."""
from .gradcheck import grad_check
from .model import (Trace, alignment_loss, backward, connector_forward, contrastive_loss, encode, flip_loss,
                    mae_loss, perceiver_resample, trace_align, trace_flip, trace_mae)
from .params import EncoderConfig, ParameterSet, init_params, load_checkpoint, save_checkpoint
from .train import Stage, TrainPlan, pretrain_plan, schedule_plan, train

__all__ = [
    "EncoderConfig", "ParameterSet", "Stage", "Trace", "TrainPlan", "alignment_loss", "backward",
    "connector_forward", "contrastive_loss", "encode", "flip_loss", "grad_check", "init_params",
    "load_checkpoint", "mae_loss", "perceiver_resample", "pretrain_plan", "save_checkpoint", "schedule_plan",
    "trace_align", "trace_flip", "trace_mae", "train",
]
