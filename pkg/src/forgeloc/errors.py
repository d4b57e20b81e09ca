class ForgelocError(Exception):
    exit_code = 1


class ConfigError(ForgelocError):
    exit_code = 2


class DataError(ForgelocError):
    exit_code = 3


class CheckpointError(ForgelocError):
    exit_code = 4
