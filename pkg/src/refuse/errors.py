"""Exception hierarchy shared across the toolkit."""


class RefuseError(Exception):
    """Base class for all toolkit errors."""


class ParseError(RefuseError):
    pass


class SchemaError(RefuseError):
    pass


class EncodingError(RefuseError):
    pass


class EmptyFunctionError(RefuseError):
    pass


class DuplicateIdError(RefuseError):
    pass


class EmptyCorpusError(RefuseError):
    pass


class DimensionError(RefuseError):
    pass


class VersionError(RefuseError):
    pass


class CorruptCheckpointError(RefuseError):
    pass


class SamplingError(RefuseError):
    pass


class NonFiniteGradientError(RefuseError):
    pass


class NotFoundError(RefuseError, KeyError):
    pass


class LabelError(RefuseError):
    pass


class PoolError(RefuseError):
    pass


class ProvenanceError(RefuseError):
    pass
