"""Exception hierarchy shared by every layer of the package."""


class SpdRagError(Exception):
    """Base class for all errors raised by spdrag."""


class ConfigError(SpdRagError, ValueError):
    """Invalid configuration values or combinations."""


class EmptyDocumentError(SpdRagError, ValueError):
    def __init__(self, doc_id: str = ""):
        self.doc_id = doc_id
        super().__init__("empty document" + (f": {doc_id}" if doc_id else ""))


class DimensionError(SpdRagError, ValueError):
    """Embedding dimension does not match the collection."""


class ZeroVectorError(SpdRagError, ValueError):
    """A zero-norm embedding cannot take part in cosine similarity."""


class ProviderError(SpdRagError):
    """A model service call failed for good."""


class TransportError(ProviderError):
    """Network or service-side failure; safe to retry."""


class SchemaError(ProviderError):
    """Structured output did not parse or validate."""

    def __init__(self, message: str, raw: str = ""):
        super().__init__(message)
        self.raw = raw


class UnknownModelError(SpdRagError, KeyError):
    def __init__(self, model: str):
        self.model = model
        super().__init__(model)

    def __str__(self) -> str:
        return f"model not in pricing table: {self.model!r}"


class PlanValidationError(SpdRagError, ValueError):
    """Coordinator output violates the plan contract."""


class SynthesisError(SpdRagError):
    """Recursive synthesis aborted; ``state`` holds what was computed so far."""

    def __init__(self, message: str, state: dict | None = None):
        super().__init__(message)
        self.state = state or {}


class PipelineError(SpdRagError):
    def __init__(self, message: str, partial: dict | None = None):
        super().__init__(message)
        self.partial = partial or {}
