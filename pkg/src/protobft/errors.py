"""Exception types raised across the package."""


class ProtoBFTError(Exception):
    pass


class ShapeError(ProtoBFTError, ValueError):
    pass


class ConfigError(ProtoBFTError, ValueError):
    pass


class CapacityError(ProtoBFTError, ValueError):
    pass


class ConsistencyError(ProtoBFTError, ValueError):
    pass


class EvaluationError(ProtoBFTError, ValueError):
    pass


class AnalysisError(ProtoBFTError, ValueError):
    pass
