"""Exception types shared across the package."""


class SchottkyFlowError(Exception):
    """Base class for all package errors."""


class NotUnimodularError(SchottkyFlowError):
    pass


class NotHyperbolicError(SchottkyFlowError):
    def __init__(self, trace, symbol=None):
        self.trace = trace
        self.symbol = symbol
        msg = f"matrix with trace {trace} is not hyperbolic (need |trace| > 2)"
        if symbol is not None:
            msg += f" [symbol {symbol}]"
        super().__init__(msg)


class PoleError(SchottkyFlowError):
    """Derivative requested at the pole of a Mobius map."""


class IntervalsOverlapError(SchottkyFlowError):
    def __init__(self, s, t, width):
        self.symbols = (s, t)
        self.width = width
        super().__init__(
            f"ping-pong intervals of symbols {s} and {t} overlap "
            f"(overlap width {width}); need strictly disjoint closed intervals"
        )


class PointNotInIntervalError(SchottkyFlowError):
    pass


class InadmissibleWordError(SchottkyFlowError):
    pass


class NotAdmissibleError(SchottkyFlowError):
    """Generator reductions mod q do not generate all of SL(2, Z/q)."""

    def __init__(self, q, subgroup_order, full_order):
        self.q = q
        self.subgroup_order = subgroup_order
        self.full_order = full_order
        super().__init__(
            f"level q={q} not admissible: generators span a subgroup of order "
            f"{subgroup_order} < {full_order}"
        )


class DimensionMismatchError(SchottkyFlowError):
    pass


class NotDivisorError(SchottkyFlowError):
    pass


class ResourceLimitError(SchottkyFlowError):
    pass


class NoBracketError(SchottkyFlowError):
    pass


class NonPerronError(SchottkyFlowError):
    """Leading eigenvalue of a real transfer matrix is not simple positive."""


class NotDenseError(SchottkyFlowError):
    """Damping index set J misses some maximal cylinder."""


class NonPositiveError(SchottkyFlowError):
    pass


class TruncationUnreliableError(SchottkyFlowError):
    pass


class ContourThroughZeroError(SchottkyFlowError):
    pass


class CatalogUnavailableError(SchottkyFlowError):
    pass


class IncompleteEnumerationError(SchottkyFlowError):
    pass


class UsageError(SchottkyFlowError):
    pass
