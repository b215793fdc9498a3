"""
Exception types shared by the rewrite system.
Recoverable data problems are logged and counted instead of raised.
"""


class RewriteError(Exception):
    """Base class for every error the system raises on purpose."""


class KnowledgeGraphError(RewriteError):
    """The knowledge graph store is unusable (e.g. no valid entities)."""


class UnknownEntityError(RewriteError, KeyError):
    """An entity (or relation) id that is not part of the graph."""

    def __str__(self):
        return Exception.__str__(self)


class DimensionError(RewriteError, ValueError):
    """Vector or matrix shapes do not line up."""


class NonFiniteGradientError(RewriteError, FloatingPointError):
    """A parameter received a NaN or infinite gradient."""

    def __init__(self, name: str):
        super().__init__(f"non-finite gradient in parameter '{name}'")
        self.name = name


class SpanRangeError(RewriteError, IndexError):
    """Span positions outside the utterance side of an encoding."""


class EmptyIndexError(RewriteError):
    """An entity index with no rows was requested."""


class ArtifactMismatchError(RewriteError):
    """An artifact was produced by a different config or checkpoint."""


class PrerequisiteError(RewriteError):
    """A required artifact is missing; the message names its producer."""

    def __init__(self, artifact: str, producer: str):
        super().__init__(f"missing {artifact}: run {producer} first")
        self.artifact = artifact
        self.producer = producer


class ConfigError(RewriteError):
    """Config file or override could not be applied."""
