"""LegoNet: volumetric segmentation from interchangeable SE, Swin and UX encoder blocks.

Built on a small numpy reverse-mode autodiff engine (``legonet.tensor``).
"""

__version__ = "0.1.0"

from .model import LegoNet, ModelConfig, analyze, build, desk_config, format_report  # noqa: E402

__all__ = ["LegoNet", "ModelConfig", "analyze", "build", "desk_config", "format_report", "__version__"]
