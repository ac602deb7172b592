"""Exception hierarchy shared by the library and the command line.

Each class carries the process exit code the CLI reports for it.
"""


class AdvBenignError(Exception):
    exit_code = 5


class ConfigurationError(AdvBenignError, ValueError):
    exit_code = 3


class DataError(AdvBenignError, ValueError):
    exit_code = 4


class DomainError(AdvBenignError, ValueError):
    exit_code = 4


class CapabilityError(AdvBenignError, RuntimeError):
    exit_code = 5
