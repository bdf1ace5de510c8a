"""Exception hierarchy shared across the package.

UsageError maps to CLI exit code 2 (bad arguments / configuration),
DataError to exit code 3 (malformed input files).
"""


class ShdiffError(Exception):
    pass


class UsageError(ShdiffError):
    pass


class DataError(ShdiffError):
    pass
