"""CPU Gaussian splatting trainer with error-driven density control and compact tile binning."""
from splatkit.camera import Camera, project
from splatkit.config import TrainConfig, load_config
from splatkit.io import generate_synthetic, load_checkpoint, load_dataset, save_checkpoint
from splatkit.render import RasterSettings, render
from splatkit.scene import Scene, init_from_points
from splatkit.train import evaluate, run_training

__version__ = "0.1.0"

__all__ = [
    "Camera",
    "RasterSettings",
    "Scene",
    "TrainConfig",
    "evaluate",
    "generate_synthetic",
    "init_from_points",
    "load_checkpoint",
    "load_config",
    "load_dataset",
    "project",
    "render",
    "run_training",
    "save_checkpoint",
]
