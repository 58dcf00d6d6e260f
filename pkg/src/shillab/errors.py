"""Exception types shared across the package."""


class ShillabError(Exception):
    pass


class DimensionError(ShillabError, ValueError):
    """Operand shapes are incompatible."""


class ConfigError(ShillabError, ValueError):
    pass


class ParseError(ShillabError, ValueError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class TrainingError(ShillabError, RuntimeError):
    """Loss became non-finite during optimization."""

    def __init__(self, message, epoch=None, step=None):
        self.epoch = epoch
        self.step = step
        where = []
        if epoch is not None:
            where.append(f"epoch {epoch}")
        if step is not None:
            where.append(f"step {step}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)


class EvaluationError(ShillabError, ArithmeticError):
    pass
