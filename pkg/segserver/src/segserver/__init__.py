"""segserver: HTTP adapter for promptable segmentation models."""

from .app import ServerConfig, create_app
from .models import SegmentationModel, load_model

__version__ = "0.1.0"
