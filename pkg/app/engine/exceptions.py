"""errors raised by the training engine"""


class EngineError(Exception):
    """base class for every engine failure"""


class DimensionError(EngineError, ValueError):
    """operands have incompatible shapes"""


class ContractViolation(EngineError):
    """an internal precondition was broken (missing cache entry, bad seq)"""


class ConfigurationError(EngineError, ValueError):
    """a training or model configuration value is invalid"""


class DivergenceError(EngineError, ArithmeticError):
    """a loss or delta became NaN or infinite"""

    def __init__(self, tag, message=None):
        self.tag = tag
        super().__init__(message or f"non-finite values in {tag}")


class DataFormatError(EngineError, ValueError):
    """a dataset or ledger file does not follow its format"""

    def __init__(self, path, message):
        self.path = str(path)
        super().__init__(f"{path}: {message}")


class BadMagicError(DataFormatError):
    pass


class TruncatedFileError(DataFormatError):
    pass


class CountMismatchError(DataFormatError):
    pass


class RecordAlignmentError(DataFormatError):
    pass


class DataMissingError(EngineError, FileNotFoundError):
    """a dataset file could not be found"""


class InvalidTargetError(EngineError, ValueError):
    """a target tensor is not a valid one-hot encoding"""


class LabelRangeError(DataFormatError):
    pass
