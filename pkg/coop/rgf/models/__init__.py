from .agents import AgentObservation, Modality, parse_modality_config
from .architectures import CooperativeDetector, build_model
