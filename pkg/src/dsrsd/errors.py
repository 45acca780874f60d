"""Exception hierarchy.  ``exit_code`` is what the CLI returns for each family."""


class DSRSDError(Exception):
    exit_code = 1


class ConfigError(DSRSDError, ValueError):
    exit_code = 1


class ShapeError(ConfigError):
    """Operand shapes do not conform for an operation."""

    def __init__(self, op, *shapes):
        self.op = op
        self.shapes = shapes
        desc = " vs ".join(str(tuple(s)) for s in shapes)
        super().__init__(f"{op}: incompatible shapes {desc}")


class GraphError(DSRSDError, RuntimeError):
    exit_code = 1


class DataError(DSRSDError, ValueError):
    exit_code = 2


class IngestionError(DataError):
    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(where + message)


class BatchSizeError(DataError):
    """Batch too small for a statistic (e.g. covariance with B < 2)."""


class MetricError(DataError):
    pass


class NumericalError(DSRSDError, ArithmeticError):
    exit_code = 3
