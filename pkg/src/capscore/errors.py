"""Exception hierarchy shared across the package.

Errors fall into four operational families that the CLI maps onto exit
codes: usage/config problems (exit 1), partial data failures (exit 2),
and backend/transport failures (exit 3). Everything else is a plain bug.
"""


class CapscoreError(Exception):
    """Base class for all package errors."""


# -- configuration / usage ---------------------------------------------------

class ConfigError(CapscoreError):
    pass


class TemplateNotFound(ConfigError):
    pass


class EmptyInput(CapscoreError):
    pass


class MissingOracle(CapscoreError):
    """A sample has no oracle entry in the oracle file."""

    def __init__(self, sample_ids):
        self.sample_ids = list(sample_ids)
        super().__init__(f"no oracle entry for samples: {', '.join(self.sample_ids)}")


class IdMismatch(CapscoreError):
    """The two score files do not cover the same (sample, system) keys."""

    def __init__(self, offenders):
        self.offenders = sorted(offenders)
        shown = ", ".join(map(str, self.offenders[:10]))
        more = "" if len(self.offenders) <= 10 else f" (+{len(self.offenders) - 10} more)"
        super().__init__(f"mismatched ids: {shown}{more}")


# -- backend gateway ---------------------------------------------------------

class NetworkError(CapscoreError):
    """Remote completion failed after exhausting retries (or was non-retryable)."""


class AuthError(NetworkError):
    pass


class OfflineViolation(NetworkError):
    """A remote call was required while running with network forbidden."""


class FixtureMissing(CapscoreError):
    def __init__(self, key, fixtures_dir):
        self.key = key
        self.fixtures_dir = str(fixtures_dir)
        super().__init__(f"mock backend has no fixture for key {key} under {fixtures_dir}")


class JsonParseError(CapscoreError):
    """No JSON value could be extracted from a model reply (repair included).

    Carries the raw reply text so callers can log or persist it.
    """

    def __init__(self, message, raw_text):
        self.raw_text = raw_text
        super().__init__(message)


class CandidateSamplingError(CapscoreError):
    """One or more slots of a multi-candidate sampling call failed."""

    def __init__(self, failures, partial):
        self.failures = dict(failures)    # slot index -> exception
        self.partial = dict(partial)      # slot index -> text
        slots = ", ".join(str(i) for i in sorted(self.failures))
        super().__init__(f"candidate sampling failed for slots [{slots}]")


# -- pipeline stages ---------------------------------------------------------

class EmptyCaption(CapscoreError):
    pass


class EmptyDecomposition(CapscoreError):
    pass


class EmptyUnitSet(CapscoreError):
    pass


class TooFewCandidates(CapscoreError):
    pass


# -- toy alignment -----------------------------------------------------------

class NoPairsForChannel(CapscoreError):
    def __init__(self, channel):
        self.channel = channel
        super().__init__(f"no preference pairs available for channel '{channel}'")


class NonFiniteLoss(CapscoreError):
    pass


# -- statistics --------------------------------------------------------------

class DegenerateInput(CapscoreError):
    pass


class NoValidSamples(CapscoreError):
    pass


class SingleSystem(CapscoreError):
    pass
