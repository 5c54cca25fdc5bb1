"""Exception hierarchy shared by all modules."""


class ScatterfoldError(Exception):
    """Base class for every error raised by this package."""


class UnbalancedBrackets(ScatterfoldError):
    def __init__(self, position: int):
        self.position = position
        super().__init__(f"unbalanced brackets at position {position}")


class IllegalCharacter(ScatterfoldError):
    def __init__(self, index: int, char: str):
        self.index = index
        self.char = char
        super().__init__(f"illegal character {char!r} at index {index}")


class SequenceTooLong(ScatterfoldError):
    pass


class NodeCountMismatch(ScatterfoldError):
    pass


class SchemaViolation(ScatterfoldError):
    def __init__(self, line: int, field: str, message: str = ""):
        self.line = line
        self.field = field
        detail = f": {message}" if message else ""
        super().__init__(f"schema violation at line {line}, field {field!r}{detail}")


class IoFailure(ScatterfoldError):
    pass


class NonUniformLength(ScatterfoldError):
    pass


class IsolatedNode(ScatterfoldError):
    def __init__(self, node: int, graph_index: int | None = None):
        self.node = node
        self.graph_index = graph_index
        where = f" in graph {graph_index}" if graph_index is not None else ""
        super().__init__(f"node {node} is isolated{where}; degree normalisation undefined")


class ShapeMismatch(ScatterfoldError):
    pass


class BackwardWithoutForward(ScatterfoldError):
    pass


class NonFiniteLoss(ScatterfoldError):
    def __init__(self, iteration: int, stage: str = "train"):
        self.iteration = iteration
        super().__init__(f"non-finite loss during {stage} at iteration {iteration}")


class MissingTargets(ScatterfoldError):
    pass


class RegressorUntrained(ScatterfoldError):
    pass


class ManifestMismatch(ScatterfoldError):
    pass


class KTooLarge(ScatterfoldError):
    pass


class ZeroSignal(ScatterfoldError):
    pass


class LengthMismatch(ScatterfoldError):
    pass


class ConfigError(ScatterfoldError):
    pass
