"""Exception types shared across the package."""


class ConfigError(ValueError):
    """A configuration parameter violates its documented constraints."""


class NoValidAlignment(ValueError):
    """The label sequence does not fit into the available time steps."""


class UnknownDay(KeyError):
    """The model has no affine layer for the requested day.

    Create one with ``add_day_layer`` before decoding or training.
    """


class NonFiniteGradient(ValueError):
    """An update was rejected because a gradient tensor is not finite."""

    def __init__(self, name: str):
        super().__init__(f"non-finite gradient for parameter {name!r}")
        self.name = name


class DegenerateData(ValueError):
    """Input data cannot support the requested fit (e.g. a dead channel)."""


class CorpusExhausted(ValueError):
    """The sentence source has fewer distinct sentences than requested."""
