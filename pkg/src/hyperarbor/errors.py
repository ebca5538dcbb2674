"""Exception hierarchy shared by all hyperarbor modules."""


class HyperarborError(Exception):
    """Base class for every error raised by this package."""


# -- hierarchy parsing / structure ------------------------------------------

class HierarchyError(HyperarborError):
    pass


class ParseError(HierarchyError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(prefix + message)


class EmptyInput(ParseError):
    pass


class IndentJump(ParseError):
    pass


class MultipleRoots(ParseError):
    pass


class DuplicateNodeId(ParseError):
    pass


class NoRoot(HierarchyError):
    pass


class NoSource(HierarchyError):
    pass


class CycleDetected(HierarchyError):
    pass


class UnknownChild(HierarchyError):
    pass


class UnknownNode(HierarchyError):
    pass


class MultipleParents(HierarchyError):
    pass


# -- geometry / embedding ---------------------------------------------------

class NumericOverflow(HyperarborError):
    """Points are too close to the ball boundary for the working precision."""


class DegreeExceedsCapacity(HyperarborError):
    pass


# -- metrics ------------------------------------------------------------------

class NodeMismatch(HyperarborError):
    pass


class DegenerateEmbedding(HyperarborError):
    pass


# -- restructuring --------------------------------------------------------------

class EmptyRecommendationSet(HyperarborError):
    pass


class DegenerateVariance(HyperarborError):
    pass


class ValidationFailed(HyperarborError):
    def __init__(self, message: str, report=None):
        self.report = report
        super().__init__(message)


# -- LLM gateway --------------------------------------------------------------

class GatewayError(HyperarborError):
    pass


class AuthMissing(GatewayError):
    pass


class Timeout(GatewayError):
    pass


class RateLimited(GatewayError):
    pass


class MalformedResponse(GatewayError):
    pass


class TokenBudgetExceeded(GatewayError):
    pass


class ExhaustedAttempts(GatewayError):
    def __init__(self, message: str, transcript=None, report=None):
        self.transcript = transcript
        self.report = report
        super().__init__(message)
