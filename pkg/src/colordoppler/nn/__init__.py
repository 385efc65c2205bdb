"""Layers, architectures, optimizer and training loop (torch tensors and autograd)."""

from .layers import count_multiplies, count_parameters
from .models import build_complex_unet, build_convnext_unet, build_model, build_real_unet
from .optim import AdamW, PlateauScheduler, adamw_step
from .train import TrainConfig, ensemble_median_infer, load_checkpoint, masked_mse, save_checkpoint, train_kfold
