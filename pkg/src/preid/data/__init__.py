from .records import DetectionRecord, FormatError, GtTrackRecord, Observation, ReidDataset
from .extract import InputError, extract_observations
from .io import (
    read_dataset,
    read_detections,
    read_frames,
    read_gt,
    write_dataset,
    write_detections,
    write_frames,
    write_gt,
)
from .synthetic import (
    DEFORMABLE_CLASSES,
    RIGID_CLASSES,
    ConfigError,
    SynthConfig,
    generate_synthetic,
)

__all__ = [
    "DetectionRecord", "GtTrackRecord", "Observation", "ReidDataset",
    "FormatError", "InputError", "ConfigError",
    "extract_observations", "generate_synthetic", "SynthConfig",
    "RIGID_CLASSES", "DEFORMABLE_CLASSES",
    "read_dataset", "write_dataset",
    "read_detections", "write_detections",
    "read_gt", "write_gt",
    "read_frames", "write_frames",
]
