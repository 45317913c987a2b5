from .cache import GenerationCache, cache_key
from .gateway import (
    GREEDY,
    SAMPLING,
    ConfigurationError,
    DecodeConfig,
    GatewayError,
    LLMGateway,
    NSamplesUnsupported,
    OpenAIBackend,
    PTrueResult,
    TransportError,
    prompt_key,
)
from .mock import MockFact, MockLLM, MockLLMSpec, mock_tokenize

__all__ = [
    "GREEDY",
    "SAMPLING",
    "ConfigurationError",
    "DecodeConfig",
    "GatewayError",
    "GenerationCache",
    "LLMGateway",
    "MockFact",
    "MockLLM",
    "MockLLMSpec",
    "NSamplesUnsupported",
    "OpenAIBackend",
    "PTrueResult",
    "TransportError",
    "cache_key",
    "mock_tokenize",
    "prompt_key",
]
