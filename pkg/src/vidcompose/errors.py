"""Exception hierarchy shared by every module."""


class VidComposeError(Exception):
    """Base class for all library errors."""


class DimensionMismatch(VidComposeError, ValueError):
    pass


class LengthMismatch(VidComposeError, ValueError):
    pass


class ShapeMismatch(VidComposeError, ValueError):
    pass


class InvalidPlacement(VidComposeError, ValueError):
    pass


class EmptyPlacement(VidComposeError, ValueError):
    """The transformed foreground mask has no set pixel on the canvas."""


class InvalidT(VidComposeError, ValueError):
    pass


class InvalidTb(VidComposeError, ValueError):
    pass


class WindowMismatch(VidComposeError, ValueError):
    pass


class NonFinite(VidComposeError, FloatingPointError):
    pass


class ConfigInvalid(VidComposeError, ValueError):
    pass


class EmptyValidRegion(VidComposeError, ValueError):
    pass


class ExtractorFailure(VidComposeError, RuntimeError):
    pass


class BackendFailure(VidComposeError, RuntimeError):
    """Raised when a denoiser backend call fails; carries the frame index if known."""

    def __init__(self, message, frame_index=None):
        super().__init__(message)
        self.frame_index = frame_index

    def __str__(self):
        msg = super().__str__()
        if self.frame_index is None:
            return msg
        return f"frame {self.frame_index}: {msg}"
