"""
Exception hierarchy for ESP Lab
Every failure raised by the library derives from EsplabError
"""


class EsplabError(Exception):
    """Base class for all library errors"""


class InvalidInput(EsplabError, ValueError):
    """Non-finite entries or mismatched dimensions"""


class InvalidWeighting(EsplabError, ValueError):
    """Weighting sequence that is not positive, strictly decreasing with w_0 = 1"""


class DepthExceeded(EsplabError):
    """Requested lag or shift does not fit inside the window"""


class Unsupported(EsplabError):
    """Operation not available for this family or configuration"""


class UnboundedDomain(EsplabError):
    """Constants are infinite because the input domain is unbounded"""


class NotASolution(EsplabError):
    """State/input pair does not satisfy the reservoir equation"""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class CertificateRequired(EsplabError):
    """Operation needs a Certified contraction certificate"""


class NoConvergence(EsplabError):
    """Picard iteration did not reach the tolerance"""

    def __init__(self, message, last_residual, iterations):
        super().__init__(message)
        self.last_residual = last_residual
        self.iterations = iterations


class StaleState(EsplabError):
    """Filter states missing or computed for a different input"""


class NotNilpotent(EsplabError):
    """Connectivity matrix has no vanishing power up to its dimension"""


class InvalidBasePoint(EsplabError):
    """Volterra base point is not a constant input"""


class OutsideDomain(EsplabError):
    """Input lies outside the ball where the series bound holds"""
