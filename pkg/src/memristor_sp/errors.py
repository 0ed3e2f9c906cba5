"""Exception hierarchy shared across the package."""


class MemristorSPError(Exception):
    """Base class for all package errors."""


class GenerationFailed(MemristorSPError):
    """Rejection sampling exhausted its attempt cap."""


class DisconnectedTerminals(MemristorSPError):
    """Start and end nodes lie in different components."""


class MalformedGraphFile(MemristorSPError):
    """A graph file could not be parsed into a valid Graph."""


class NewtonNoConvergence(MemristorSPError):
    """Nodal Newton iteration failed to reach tolerance."""


class SingularSystem(MemristorSPError):
    """Nodal system is singular (floating subcircuit)."""


class StepCollapse(MemristorSPError):
    """Step size halving exhausted without satisfying the state-change bound."""


class DetectionFailure(MemristorSPError):
    """Ramp reached t_max without a kink trigger."""


class ReadoutStuck(MemristorSPError):
    """Greedy readout ran out of unvisited neighbours before the end node."""


class ReadoutOverlong(MemristorSPError):
    """Greedy readout visited more nodes than the graph holds."""


class InsufficientData(MemristorSPError):
    """Too few records for a scaling summary."""


class ConfigInvalid(MemristorSPError):
    """Experiment configuration failed validation."""
