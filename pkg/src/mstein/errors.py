"""Error types mapped to CLI exit codes: input 2, numerical 3, config 4."""


class InputError(Exception):
    exit_code = 2


class NumericalError(Exception):
    exit_code = 3


class ConfigError(Exception):
    exit_code = 4
