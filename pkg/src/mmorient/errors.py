"""Exception types shared across modules, mapped to CLI exit codes."""


class DataError(Exception):
    """A dataset, lexicon, or snapshot file failed validation."""


class NumericError(Exception):
    """A non-finite value surfaced where the pipeline requires finite math."""
