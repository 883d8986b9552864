"""Exception hierarchy shared by the library and the command line."""


class OmniQAError(Exception):
    """Base class of every error raised on purpose by omniqa."""


class DataError(OmniQAError):
    """Bad manifest, unreadable image, malformed config file."""


class NumericError(OmniQAError):
    """Non-finite values or a failed gradient check."""


class GeometryError(OmniQAError, ValueError):
    """Coordinates outside the domain of a projection."""


class NetworkSpecError(OmniQAError, ValueError):
    """A list of layer specs whose shapes do not compose."""

    def __init__(self, index: int, kind: str, message: str):
        self.index = index
        self.kind = kind
        super().__init__(f"layer {index} ({kind}): {message}")


class CheckpointError(DataError):
    pass


class CheckpointMagicError(CheckpointError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointTruncatedError(CheckpointError):
    pass
