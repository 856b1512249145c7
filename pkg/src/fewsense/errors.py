"""Exception types shared across the package."""


class FewsenseError(Exception):
    """Base class for all package-specific errors."""


class ConfigurationError(FewsenseError):
    """Invalid configuration value or combination."""


class DatasetParseError(FewsenseError):
    """Dataset container file is corrupt or truncated."""

    def __init__(self, message: str, byte_offset: int):
        super().__init__(f"{message} (at byte offset {byte_offset})")
        self.byte_offset = byte_offset


class FormatVersionError(FewsenseError):
    """Serialized artifact was written with an unsupported format version."""

    def __init__(self, kind: str, found, supported):
        super().__init__(
            f"{kind} format version {found!r} not supported (this build reads version {supported!r})"
        )
        self.found = found
        self.supported = supported


class EpisodeError(FewsenseError):
    """Episode cannot be sampled or is malformed."""


class ShapeError(FewsenseError):
    """Tensor shape does not match the expected contract."""

    def __init__(self, expected, actual, context: str = ""):
        prefix = f"{context}: " if context else ""
        super().__init__(f"{prefix}expected shape {tuple(expected)}, got {tuple(actual)}")
        self.expected = tuple(expected)
        self.actual = tuple(actual)


class TrainingDivergedError(FewsenseError):
    """Loss became non-finite during training."""

    def __init__(self, epoch: int, episode: int, value: float):
        super().__init__(
            f"non-finite loss ({value}) at epoch {epoch}, episode {episode}"
        )
        self.epoch = epoch
        self.episode = episode
