from .config import (
    EDGECONV_LITE,
    POINTNET_LITE,
    EncoderConfig,
    RtmmConfig,
    config_from_json,
    config_to_json,
)
from .network import ReidModel, resample_points
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint

__all__ = [
    "EncoderConfig", "RtmmConfig", "ReidModel", "resample_points",
    "POINTNET_LITE", "EDGECONV_LITE",
    "config_to_json", "config_from_json",
    "save_checkpoint", "load_checkpoint", "CheckpointError",
]
