"""Exception types shared across the package."""


class DivdropError(Exception):
    """Base class for all package errors."""


class ConfigurationError(DivdropError):
    """A config value violates its documented range or structure."""


class ShapeError(DivdropError):
    """Array dimensions do not line up."""


class NumericError(DivdropError):
    """Non-finite or otherwise unusable numeric input."""


class LabelError(DivdropError):
    """A label index is out of range for the classifier or dataset."""


class BatchCompositionError(DivdropError):
    """A mini-batch cannot satisfy the identity/instance structure it needs."""


class EmptyClusteringError(DivdropError):
    """Clustering produced no usable clusters, even after the retry."""


class DiagnosticsError(DivdropError):
    """A diagnostic quantity is undefined for the given inputs."""


class EvaluationError(DivdropError):
    """Query/gallery inputs violate the retrieval evaluation contract."""
