"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class RerecError(Exception):
    exit_code = 1


class ConfigError(RerecError, ValueError):
    exit_code = 1


class DataError(RerecError):
    exit_code = 2


class ParseError(DataError, ValueError):
    def __init__(self, message, line_number=None):
        self.line_number = line_number
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)


class EmptyDatasetError(DataError, ValueError):
    pass


class RangeError(DataError, ValueError):
    pass


class FormatVersionError(DataError):
    pass


class DivergenceError(RerecError, FloatingPointError):
    exit_code = 3

    def __init__(self, message, stage=None, episode=None):
        self.stage = stage
        self.episode = episode
        prefix = []
        if stage:
            prefix.append(f"[{stage}]")
        if episode is not None:
            prefix.append(f"episode {episode}:")
        super().__init__(" ".join(prefix + [message]))


class StalenessError(RerecError):
    exit_code = 4


class ShapeError(RerecError, ValueError):
    pass


class ContractError(RerecError, ValueError):
    pass


class ExhaustionError(ContractError):
    pass
