from .models.architectures import ARCHITECTURES, FusionDims, build_model, preset_dims
from .util import instantiate_from_config

__version__ = "0.1.0"
