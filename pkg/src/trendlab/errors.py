class TrendlabError(Exception):
    """Base class for all errors raised by trendlab."""


class ParseError(TrendlabError, ValueError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class DataError(TrendlabError, ValueError):
    pass


class DegenerateSeriesError(DataError):
    """Series whose return variance is zero (or below the configured floor)."""


class ConfigError(TrendlabError, ValueError):
    pass


class SingularFitError(TrendlabError, ValueError):
    def __init__(self, feature, message=None):
        self.feature = feature
        super().__init__(message or f"design matrix is rank deficient at feature {feature!r}")
