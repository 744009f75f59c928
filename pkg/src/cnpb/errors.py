"""Exception hierarchy shared across the pipeline."""


class CnpbError(Exception):
    """Base class for all pipeline errors."""


class GeometryError(CnpbError):
    """Degenerate or out-of-bounds box geometry."""


class ParseError(CnpbError):
    """Malformed input document."""


class ValidationError(CnpbError):
    """Well-formed document violating a dataset invariant."""


class ConfigError(CnpbError):
    """Bad configuration (missing categories, bad thresholds, missing paths)."""


class ContractError(CnpbError):
    """A caller violated an operation precondition."""


class TransportError(CnpbError):
    """Scoring service unreachable after the configured retries."""


class ProtocolError(CnpbError):
    """Scoring service returned a malformed or out-of-contract response."""


class PipelineError(CnpbError):
    """Stage-tagged failure during an end-to-end run."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage
