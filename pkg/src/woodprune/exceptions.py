"""Exceptions for WoodPrune."""


class WoodPruneError(Exception):
    """Generic WoodPrune exception."""

    exit_code = 1


class WoodPruneConfigError(WoodPruneError):
    """WoodPrune configuration exception."""

    exit_code = 2


class WoodPruneStructuralError(WoodPruneError):
    """WoodPrune shape, length or partition exception."""

    exit_code = 2


class WoodPruneDegenerateLayerError(WoodPruneStructuralError):
    """WoodPrune exception for a referenced layer without active parameters."""


class WoodPruneDataError(WoodPruneError):
    """WoodPrune data exception."""

    exit_code = 3


class WoodPruneFormatError(WoodPruneDataError):
    """WoodPrune exception for malformed files."""

    def __init__(self, msg: str, *, offset: int | None = None) -> None:
        """Initialize the format error.

        Args:
        ----
            msg: Human readable description of the problem.
            offset: Byte offset in the file where decoding failed.

        """
        if offset is not None:
            msg = f"{msg} (at byte offset {offset})"
        super().__init__(msg)
        self.offset = offset


class WoodPruneNumericError(WoodPruneError):
    """WoodPrune numeric exception."""

    exit_code = 4


class WoodPruneTrainingError(WoodPruneNumericError):
    """WoodPrune training divergence exception."""
