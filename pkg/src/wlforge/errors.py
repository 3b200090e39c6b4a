"""Exception types shared across the toolkit."""


class WlforgeError(Exception):
    """Base class for all toolkit errors."""


class RasterIOError(WlforgeError):
    """Missing, malformed, or out-of-contract image/mask file."""


class ManifestError(WlforgeError):
    """Malformed manifest file or violated manifest invariant."""


class BackendError(WlforgeError):
    """Promptable-segmenter backend failure (protocol, timeout, config)."""


class ConfigError(WlforgeError):
    """Invalid or unknown pipeline configuration."""


class PipelineError(WlforgeError):
    """Pipeline stage failure; message carries the stage context."""
