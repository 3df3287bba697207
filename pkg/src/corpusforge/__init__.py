"""corpusforge: speech-corpus construction and ASR evaluation toolkit."""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    AdapterError,
    AlignmentError,
    AudioError,
    ConfigError,
    CorpusforgeError,
    ManifestError,
    MetricsError,
    PipelineError,
    ProfileError,
    StatsError,
)

__all__ = [
    "__version__",
    "AdapterError",
    "AlignmentError",
    "AudioError",
    "ConfigError",
    "CorpusforgeError",
    "ManifestError",
    "MetricsError",
    "PipelineError",
    "ProfileError",
    "StatsError",
]
