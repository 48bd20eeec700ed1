"""Exception types shared across the laboratory."""


class LeaselabError(Exception):
    """Base class for all errors raised by this package."""


class SchedulingInPast(LeaselabError):
    """An event was scheduled before the engine's current virtual time."""


class ForbiddenAction(LeaselabError):
    """An adversary action outside the threat model was injected."""


class ClockDisciplineError(LeaselabError):
    """A reader asked for two trusted timestamps within the same tick."""


class DeviceUnavailable(LeaselabError):
    """A counter device is isolated; the caller should retry later."""


class InvalidProposal(LeaselabError):
    """A conditional increment did not propose count+1."""


class StoreConflict(LeaselabError):
    """A conditional store write lost to another writer."""


class StoreUnavailable(LeaselabError):
    """The replicated store cannot reach a majority of replicas."""


class AlreadyExists(LeaselabError):
    """A lease record with this id is already provisioned."""


class IntegrityViolation(LeaselabError):
    """A sealed blob failed authentication."""


class RollbackDetected(LeaselabError):
    """A sealed blob's embedded counter does not match the device."""


class ElectionLost(LeaselabError):
    """A replica's local election write was beaten by another instance."""


class ScenarioError(LeaselabError):
    """A scenario file failed parsing or schema validation."""

    def __init__(self, message, *, line=None, column=None, field=None):
        super().__init__(message)
        self.line = line
        self.column = column
        self.field = field
