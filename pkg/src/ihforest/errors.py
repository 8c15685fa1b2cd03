"""Exception hierarchy. Everything raised deliberately by the package derives
from :class:`IHFError` so callers (and the CLI) can tell user-facing failures
from bugs."""


class IHFError(Exception):
    pass


class IoError(IHFError, OSError):
    """Missing, unreadable or truncated file."""


class FormatError(IHFError, ValueError):
    """File exists but its content is not in the expected format."""


class EmptyCloud(IHFError, ValueError):
    pass


class DegenerateCloud(IHFError, ValueError):
    pass


class DegeneratePatch(IHFError, ValueError):
    pass


class NoVotes(IHFError, ValueError):
    pass


class DegenerateHypothesis(IHFError, ValueError):
    pass


class EmptyRender(IHFError, ValueError):
    pass


class SceneRejected(IHFError, ValueError):
    pass
