"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """Invalid dimensions or inconsistent parameters."""


class InfeasibleCodebookError(ConfigurationError):
    """More codewords requested than distinct weight-S supports exist."""


class LdpcConstructionError(RuntimeError):
    """No full-rank parity-check matrix found within the retry budget."""
