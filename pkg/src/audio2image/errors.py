"""Exception types shared across the toolkit."""


class ToolkitError(Exception):
    """Base class for expected failures (bad input, bad files, bad config)."""


class ConfigError(ToolkitError):
    """Invalid or unknown configuration."""


class DataError(ToolkitError):
    """Invalid audio/image files, manifests, or pairing problems."""


class CheckpointError(ToolkitError):
    """Unreadable, corrupt, or incompatible checkpoint file."""


class TrainingDiverged(ToolkitError):
    """A loss term became non-finite; carries a dump of all terms."""

    def __init__(self, message, terms=None):
        super().__init__(message)
        self.terms = dict(terms) if terms else {}
