"""Exception hierarchy shared by the library and the CLI."""


class TacticExpertError(Exception):
    pass


class ValidationError(TacticExpertError, ValueError):
    """Bad argument value or shape."""


class ConfigError(TacticExpertError):
    pass


class DataError(TacticExpertError):
    pass


class SchemaError(DataError):
    def __init__(self, key, line):
        self.key = key
        self.line = line
        super().__init__(f"line {line}: missing or malformed key {key!r}")


class DuplicateFrameError(DataError):
    pass


class IntegrityError(DataError):
    pass


class NumericError(TacticExpertError, ArithmeticError):
    pass


class TrainingDiverged(NumericError):
    def __init__(self, epoch, stage, last_good_state=None):
        self.epoch = epoch
        self.stage = stage
        self.last_good_state = last_good_state
        super().__init__(f"loss became non-finite in stage {stage}, epoch {epoch}")
