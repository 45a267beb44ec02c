"""Exception hierarchy. Each class carries the CLI exit status it maps to."""


class RMGDError(Exception):
    exit_code = 1


class ConfigError(RMGDError, ValueError):
    exit_code = 2


class DataError(RMGDError, ValueError):
    exit_code = 3


class CorruptDatasetError(DataError):
    pass


class ResourceCapError(RMGDError, MemoryError):
    exit_code = 4
