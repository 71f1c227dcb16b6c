class ShapeError(ValueError):
    """Tensor shapes or parameters do not satisfy an operation contract."""


class GeometryError(ValueError):
    pass


class CapabilityError(ValueError):
    """The architecture cannot run with the given sensor mix."""


class PayloadError(ValueError):
    pass


class ConfigError(ValueError):
    pass


class SceneGenerationError(RuntimeError):
    pass


class DivergenceError(RuntimeError):
    def __init__(self, message, history=None, parameter=None):
        super().__init__(message)
        self.history = list(history or [])
        self.parameter = parameter
