from .cache import SubTarCache
from .executor import Engine, EngineConfig, ResultStream

__all__ = ["Engine", "EngineConfig", "ResultStream", "SubTarCache"]
