"""Generation and embedding providers."""

from .base import EmbeddingBackend, EndOfThinkingDetector, GenerationBackend, ProbeCompletion, TokenEvent, TokenStream
from .embedding import HashEmbedder, LookupEmbedder, hash_embed
from .http import EmbedEndpointConfig, HttpEmbedder, HttpEndpointConfig, HttpGenerationBackend
from .replay import ReplayBackend, split_even
from .scripted import ScriptedBackend, synthetic_trace
from .traces import TraceRecord, TraceStep, read_traces, write_traces

__all__ = [
    "EmbeddingBackend",
    "EndOfThinkingDetector",
    "GenerationBackend",
    "ProbeCompletion",
    "TokenEvent",
    "TokenStream",
    "HashEmbedder",
    "LookupEmbedder",
    "hash_embed",
    "EmbedEndpointConfig",
    "HttpEmbedder",
    "HttpEndpointConfig",
    "HttpGenerationBackend",
    "ReplayBackend",
    "split_even",
    "ScriptedBackend",
    "synthetic_trace",
    "TraceRecord",
    "TraceStep",
    "read_traces",
    "write_traces",
]
