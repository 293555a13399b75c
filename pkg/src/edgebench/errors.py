"""Exception types shared across the package."""

from __future__ import annotations


class EdgebenchError(Exception):
    """Base class for all package-specific errors."""


class MalformedConfig(EdgebenchError):
    """A scenario config violates an invariant.

    ``field`` names the offending config entry (dotted path for nested
    fields) so callers can point at the exact culprit.
    """

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")


class InconsistentDimensions(MalformedConfig):
    """A per-device or per-server list has the wrong length."""


class ActionInvalid(EdgebenchError):
    """An action violates its feasibility constraints for the current state."""


class LocalComputeDisabled(EdgebenchError):
    """A local-compute feature was requested but the scenario has none."""


class StateSpaceTooLarge(EdgebenchError):
    """The enumerated decision-process state space exceeds the configured cap."""

    def __init__(self, count: int, cap: int):
        self.count = count
        self.cap = cap
        super().__init__(f"state space has {count} states, cap is {cap}")


class OracleTooLarge(EdgebenchError):
    """The brute-force policy enumeration would exceed its size bounds."""


class NonConvergence(EdgebenchError):
    """Value iteration hit its iteration cap without meeting the residual target."""


class SpecMismatch(EdgebenchError):
    """A solved policy was built for a different scenario than the one in use."""


class IncompatibleRuns(EdgebenchError):
    """Run summaries being compared come from structurally different scenarios."""
