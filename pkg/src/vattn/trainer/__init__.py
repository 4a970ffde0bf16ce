"""Model assembly, objectives, optimizer, checkpoints and the training pipelines."""

from vattn.trainer.config import TrainConfig, load_config
from vattn.trainer.losses import (
    Batch,
    LossWeights,
    density_loss,
    inva_total_loss,
    make_batch,
    total_loss,
    va_total_loss,
)
from vattn.trainer.loop import evaluate, model_from_checkpoint, run_dkpnet, train
from vattn.trainer.model import Model, ModelConfig

__all__ = [
    "Batch",
    "LossWeights",
    "Model",
    "ModelConfig",
    "TrainConfig",
    "density_loss",
    "evaluate",
    "inva_total_loss",
    "load_config",
    "make_batch",
    "model_from_checkpoint",
    "run_dkpnet",
    "total_loss",
    "train",
    "va_total_loss",
]
