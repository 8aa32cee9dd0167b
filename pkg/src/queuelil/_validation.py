"""Input coercion shared by the estimator, the experiments and the CLI."""

from __future__ import annotations

import json
import math
import os
from pathlib import Path

import numpy as np

from .qsim import ObservationWindow


def check_window(X) -> ObservationWindow:
    """Coerce ``X`` to an :class:`ObservationWindow`.

    Accepts a window, a dict in the window JSON layout, or a path to a
    window JSON file. Raises ``ValueError`` on anything else.
    """
    if isinstance(X, ObservationWindow):
        win = X
    elif isinstance(X, dict):
        win = ObservationWindow.from_dict(X)
    elif isinstance(X, (str, os.PathLike)):
        try:
            text = Path(X).read_text()
        except OSError as exc:
            raise ValueError(f"cannot read window file {X!s}: {exc}") from None
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ValueError(f"window file {X!s} is not valid JSON: {exc}") from None
        win = ObservationWindow.from_dict(data)
    else:
        raise ValueError(f"expected an ObservationWindow, dict or path, got {type(X).__name__}")
    if not (math.isfinite(win.T) and win.T >= 0):
        raise ValueError(f"window T must be finite and nonnegative, got {win.T!r}")
    for name, arr in (("arrivals", win.arrivals), ("services", win.services)):
        if not np.all(np.isfinite(arr)) or np.any(arr <= 0):
            raise ValueError(f"window {name} must be positive and finite")
    return win


def check_windows(X) -> list[ObservationWindow]:
    """Coerce a single window or an iterable of windows to a list."""
    if isinstance(X, (ObservationWindow, dict, str, os.PathLike)):
        return [check_window(X)]
    try:
        items = list(X)
    except TypeError:
        raise ValueError(f"expected a window or a sequence of windows, got {type(X).__name__}") from None
    if not items:
        raise ValueError("no windows given")
    return [check_window(x) for x in items]


def check_positive_int(value, name: str, minimum: int = 1) -> int:
    if isinstance(value, bool) or int(value) != value or value < minimum:
        raise ValueError(f"{name} must be an integer >= {minimum}, got {value!r}")
    return int(value)
