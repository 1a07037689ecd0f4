"""Exception hierarchy shared by all netstab modules."""


class NetstabError(Exception):
    """Base class for all package errors."""


class ParameterShapeError(NetstabError, ValueError):
    """A local parameter vector has the wrong length."""


class MissingDataError(NetstabError, KeyError):
    """Neighbor data required to build a regressor is absent."""


class EmptyPolytopeError(NetstabError):
    """A linear program found the feasible set to be empty."""


class UnboundedPolytopeError(NetstabError):
    """A linear program found the feasible set to be unbounded in a direction."""


class InconsistencyError(EmptyPolytopeError):
    """No parameter is consistent with the observations under the assumed bound.

    Attributes
    ----------
    owner : int or None
        Subsystem whose consistent set became empty.
    t : int or None
        Time step of the falsifying observation.
    """

    def __init__(self, msg, owner=None, t=None):
        super().__init__(msg)
        self.owner = owner
        self.t = t


class GlobalInconsistencyError(InconsistencyError):
    """Every candidate set of a union has been falsified."""


class SynthesisInfeasibleError(NetstabError):
    """The SLS column constraints admit no solution.

    Attributes
    ----------
    rows : ndarray of int
        Indices of constraint rows that cannot be satisfied.
    residual : float
        Norm of the least-squares residual of the constraint system.
    """

    def __init__(self, msg, rows=None, residual=None):
        super().__init__(msg)
        self.rows = rows
        self.residual = residual


class NotControllableError(NetstabError, ValueError):
    """The H-step controllability grammian is singular."""


class CausalityError(NetstabError):
    """A read on the message bus asked for data that has not arrived yet."""


class ScenarioError(NetstabError, ValueError):
    """A scenario file failed validation."""


class IdentificationError(NetstabError):
    """The system-identification baseline did not reach its margin in time."""
