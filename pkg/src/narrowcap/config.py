"""Global numeric tolerance, overridable through ``NARROWCAP_TOL``."""

import os

DEFAULT_TOL = 1e-9

_tol = None


def get_tol():
    global _tol
    if _tol is None:
        raw = os.environ.get("NARROWCAP_TOL")
        _tol = float(raw) if raw else DEFAULT_TOL
        if not _tol > 0:
            raise ValueError(f"NARROWCAP_TOL must be positive, got {raw!r}")
    return _tol


def set_tol(value):
    """Override the global tolerance; ``None`` re-reads the environment."""
    global _tol
    if value is not None and not value > 0:
        raise ValueError("tolerance must be positive")
    _tol = value
