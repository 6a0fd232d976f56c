from ._crossnav import (
    ConfigError,
    FormatError,
    Session,
    config_keys,
    default_config,
    discounted_returns,
    grad_check,
    run_cli,
)

__all__ = [
    "ConfigError",
    "FormatError",
    "Session",
    "config_keys",
    "default_config",
    "discounted_returns",
    "grad_check",
    "run_cli",
]
