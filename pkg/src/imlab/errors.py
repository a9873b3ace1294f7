"""Exception types shared across the library."""


class ImlabError(Exception):
    """Base class for all library errors."""


class SingularMetric(ImlabError):
    """Metric matrix is not invertible to working precision."""


class NotSPD(ImlabError):
    """Matrix expected to be symmetric positive definite is not."""


class RankDeficient(ImlabError):
    """A differential (or projection input) lost full rank."""


class GridMismatch(ImlabError):
    """Two fields live on different grids."""


class BadExponent(ImlabError):
    """Integrability exponent p out of range (p < 1)."""


class UnsupportedExponent(ImlabError):
    """Operation requires p >= 2 (gradients of SVD-based integrands)."""


class UnsupportedTarget(ImlabError):
    """Operation is restricted to constant-metric (Euclidean-like) targets."""


class AsymmetricShape(ImlabError):
    """g*S is not symmetric: not a valid second fundamental form."""


class IncompatibleForms(ImlabError):
    """Fundamental forms fail the Gauss-Codazzi compatibility check."""


class NonSPDAnchor(ImlabError):
    """Anchor frame does not reproduce the metric at the anchor point."""


class DegenerateCovariance(ImlabError):
    """Cross-covariance too rank-deficient for a unique rigid alignment."""


class BadConfig(ImlabError):
    """Invalid experiment or optimizer configuration."""
