"""Exception and warning types shared across the package."""


class HJHomogError(Exception):
    """Base class for all package errors."""


class ProfileError(HJHomogError):
    """Invalid or non-finite Hamiltonian profile."""


class NotConstrained(HJHomogError):
    """Branch detection found x-dependent breakpoints."""


class OutOfBranchRange(HJHomogError):
    """Requested level is outside a monotone branch's value range."""


class ClusterSuspected(HJHomogError):
    """Two junctions or extrema closer than the cluster-free separation."""


class NotApplicable(HJHomogError):
    """Operation does not apply to this field (e.g. no interior minimum)."""


class Diverged(HJHomogError):
    """Discounted solve failed to reach the residual tolerance."""

    def __init__(self, message, residual_trace=None):
        super().__init__(message)
        self.residual_trace = residual_trace or []


class NotPointwiseExtremal(HJHomogError):
    """Integral-optimal admissible function failed pointwise dominance."""


class LevelSetConflict(HJHomogError):
    """Level intervals overlap beyond their confidence intervals."""


class ReductionStalled(HJHomogError):
    """A reduction step failed to decrease the well count."""


class NormalizationViolated(HJHomogError):
    """Field does not satisfy the normalization esssup H(0, x) = 0."""


class ConfigError(HJHomogError):
    """Malformed run configuration."""


class UnstableStatistics(UserWarning):
    """Cross-seed dispersion too large relative to the oscillation span."""


class NonErgodicWarning(UserWarning):
    """Window averages are not converging as the window grows."""


class NoisyLimit(UserWarning):
    """The discounted limit trend is not monotone within tolerance."""


class ExtrapolationUsed(UserWarning):
    """A sampled effective curve was evaluated outside its support."""
