# ishne/errors.py
# Exception families and their CLI exit codes.


class IshneError(Exception):
    exit_code = 1


# ---------------- Configuration ----------------
class ConfigError(IshneError):
    exit_code = 2


# ---------------- Graph ----------------
class GraphError(IshneError):
    exit_code = 3


class DanglingEdge(GraphError):
    pass


class DimensionMismatch(GraphError):
    pass


class UnknownType(GraphError):
    pass


class DuplicateNode(GraphError):
    pass


class SchemaError(GraphError):
    pass


# ---------------- Parsing ----------------
class ParseError(IshneError):
    exit_code = 4

    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        elif line is not None:
            where = f"line {line}: "
        super().__init__(where + message)


# ---------------- Tensors / attention ----------------
class TensorError(IshneError):
    exit_code = 5


class ShapeMismatch(TensorError):
    pass


class EmptyInput(TensorError):
    pass


class NonScalarLoss(TensorError):
    pass


class NonFiniteValue(TensorError):
    pass


class TapeConsumed(TensorError):
    pass


class AttentionError(IshneError):
    exit_code = 5


class EmptyNeighborhood(AttentionError):
    pass


class FewerThanOneMetaPath(AttentionError):
    pass


# ---------------- Training ----------------
class TrainingError(IshneError):
    exit_code = 6


class EmptyTrainSet(TrainingError):
    pass


class NonFiniteLoss(TrainingError):
    def __init__(self, epoch, value, detail=""):
        self.epoch = epoch
        self.value = value
        msg = f"loss became non-finite at epoch {epoch} (value={value})"
        if detail:
            msg += f"; {detail}"
        super().__init__(msg)


# ---------------- Data ----------------
class DataError(IshneError):
    exit_code = 7


class InfeasibleSpec(DataError):
    pass


class SplitTooLarge(DataError):
    pass


# ---------------- Checkpoints ----------------
class CheckpointError(IshneError):
    exit_code = 8


class CheckpointMismatch(CheckpointError):
    pass


class CheckpointFormatError(CheckpointError):
    pass
