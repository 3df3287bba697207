"""Exception hierarchy shared by all corpusforge modules."""


class CorpusforgeError(Exception):
    """Base class for all toolkit errors."""


class ManifestError(CorpusforgeError):
    """Malformed manifest file or record violating its invariants."""


class ProfileError(CorpusforgeError):
    """Unknown language code or malformed profile file."""


class AudioError(CorpusforgeError):
    """Unreadable, unsupported, or out-of-range audio data."""


class AlignmentError(CorpusforgeError):
    """Alignment could not proceed (e.g. reference text exhausted)."""


class MetricsError(CorpusforgeError):
    """Evaluation inputs unusable (length mismatch, empty reference)."""


class StatsError(CorpusforgeError):
    """Bootstrap comparison inputs unusable or enumeration infeasible."""


class AdapterError(CorpusforgeError):
    """A transcriber adapter failed to produce hypotheses."""


class ConfigError(CorpusforgeError):
    """Pipeline configuration is not runnable."""


class PipelineError(CorpusforgeError):
    """Pipeline runtime failure (stage execution, locking, workspace)."""
