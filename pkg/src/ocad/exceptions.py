"""Exception types shared across the package.

The CLI maps these onto stable exit codes (see ``ocad.cli``), so new error
conditions should reuse one of the families below instead of raising bare
exceptions.
"""


class ValidationError(ValueError):
    """Input violates a documented precondition (bad config, bad data)."""


class ShapeError(ValidationError):
    """Array argument has the wrong shape, dtype rank, or channel count."""


class ParseError(ValidationError):
    """A file could not be parsed.

    Carries optional source context so CLI messages can point at the
    offending file and line.
    """

    def __init__(self, message, path=None, line=None):
        ctx = ""
        if path is not None:
            ctx = f"{path}: "
            if line is not None:
                ctx = f"{path}:{line}: "
        super().__init__(ctx + message)
        self.path = path
        self.line = line


class UnsupportedFormatError(ParseError):
    """File parsed but uses a variant this tool does not support."""


class FrameSequenceError(ValidationError):
    """Frame directory has gaps or inconsistent frame geometry."""


class ModelFileError(Exception):
    """Base for model (de)serialization failures."""


class CorruptModelError(ModelFileError):
    """Model file is truncated or fails structural checks."""


class IncompatibleModelError(ModelFileError):
    """Model file is well formed but does not match this code's architecture
    or the data it is being applied to."""


class UndefinedMetricError(ValueError):
    """Metric is undefined for the given inputs (e.g. single-class AUC)."""


class SkipSample(Exception):
    """Internal signal: this detection cannot yield a valid sample
    (e.g. its clamped box is empty). Callers log and continue."""
