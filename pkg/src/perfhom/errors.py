"""Exception types shared across the laboratory."""

from __future__ import annotations


class PerfhomError(Exception):
    """Base class for all package errors."""


class NonAligned(PerfhomError):
    """Hole edges do not land on the cell lattice."""


class TooClose(PerfhomError):
    """Hole separation (mutual or to the cell boundary) is violated."""


class ScaleMismatch(PerfhomError):
    """Domain side, epsilon and cell resolution are incompatible."""


class AuditFailed(PerfhomError):
    """Structure-condition audit found a violating sample."""


class NewtonDiverged(PerfhomError):
    """Residual failed to decrease after the damping budget."""


class TableRangeExceeded(PerfhomError):
    """Requested xi lies outside the tabulated range."""


class MeanNotZero(PerfhomError):
    """Flux discrepancy has a nonzero cell average (inconsistent effective value)."""


class SupportViolation(PerfhomError):
    """Smoothing stencil leaves the domain where the field is not known to vanish."""


class NonzeroTrace(PerfhomError):
    """Field does not vanish on the outer Dirichlet boundary."""


class BallOutsideDomain(PerfhomError):
    """Requested ball is not contained in the domain."""


class DegenerateFit(PerfhomError):
    """Rate fit received a non-positive error value."""


class TableCorrupt(PerfhomError):
    """Corrector table file failed its integrity check."""
