"""Exception hierarchy shared by all modules.

Each class carries an ``exit_code`` so the CLI can map failures onto its
documented exit statuses without a lookup table.
"""


class TrajRewardError(Exception):
    exit_code = 1


class InputError(TrajRewardError, ValueError):
    """Bad user input (unreadable file, bad config value)."""

    exit_code = 2


class EmptyInput(InputError):
    pass


class TrajectoryError(TrajRewardError, ValueError):
    pass


class MalformedTag(TrajectoryError):
    def __init__(self, message: str, offset: int | None = None):
        super().__init__(message if offset is None else f"{message} (at offset {offset})")
        self.offset = offset


class InvalidTrajectory(TrajectoryError):
    pass


class Unclassifiable(TrajRewardError, ValueError):
    pass


class InsufficientPool(TrajRewardError, ValueError):
    pass


class PoolShortfall(InsufficientPool):
    def __init__(self, category: str, needed: int, available: int):
        super().__init__(f"pool {category!r} needs {needed} trajectories, has {available}")
        self.category = category
        self.needed = needed
        self.available = available


class StepOutOfRange(TrajRewardError, ValueError):
    pass


class EmptyTrajectory(TrajRewardError, ValueError):
    pass


class ScorerError(TrajRewardError):
    exit_code = 3


class ScorerUnavailable(ScorerError):
    pass


class ProtocolViolation(ScorerError):
    pass


class GroupTooSmall(TrajRewardError, ValueError):
    pass


class InvalidSample(TrajRewardError, ValueError):
    pass


class LengthMismatch(TrajRewardError, ValueError):
    pass


class ServiceFailure(TrajRewardError, RuntimeError):
    pass


class SwapRejected(TrajRewardError, ValueError):
    pass
