"""Surfel-patch scene representation with deterministic online RGB fusion."""

from .core import (Camera, ChannelMismatchError, DeepSurfelsModel, FormatError, FrameRGBD,
                   TruncatedFileError, cell_of, load_model, save_model, texels_near, validate_model)
from .fitting import FitConfig, build
from .fusion import FusionConfig, fuse_frame
from .render import RenderConfig, render_view

__version__ = "0.1.0"

__all__ = [
    "Camera", "ChannelMismatchError", "DeepSurfelsModel", "FitConfig", "FormatError", "FrameRGBD",
    "FusionConfig", "RenderConfig", "TruncatedFileError", "build", "cell_of", "fuse_frame",
    "load_model", "render_view", "save_model", "texels_near", "validate_model",
]
