"""A fixed family of test functions with known derivatives and sup norms."""

from __future__ import annotations

import math

import numpy as np

from .stein_core import TestFunction, smoothing_test_function


def _capped_quadratic(x):
    x = np.asarray(x, dtype=float)
    return np.where(x < 1.0, x * x, 2.0 * x - 1.0)


def _capped_quadratic_prime(x):
    x = np.asarray(x, dtype=float)
    return np.where(x < 1.0, 2.0 * x, 2.0)


def capped_quadratic() -> TestFunction:
    """``x^2`` on ``[0, 1)`` continued linearly with slope 2; ``h(0) = h'(0) = 0``."""
    return TestFunction(_capped_quadratic, _capped_quadratic_prime, 2.0, 2.0, (1.0,), "capped_quadratic")


def stein_test_family() -> list[TestFunction]:
    """Twelve test functions with bounded first and second derivatives."""
    return [
        TestFunction(lambda x: x, np.ones_like, 1.0, 0.0, name="identity"),
        TestFunction(lambda x: np.exp(-x), lambda x: -np.exp(-x), 1.0, 1.0, name="exp_decay"),
        capped_quadratic(),
        TestFunction(np.sin, np.cos, 1.0, 1.0, name="sin"),
        TestFunction(np.cos, lambda x: -np.sin(x), 1.0, 1.0, name="cos"),
        TestFunction(lambda x: 1.0 / (1.0 + x), lambda x: -1.0 / (1.0 + x) ** 2, 1.0, 2.0, name="reciprocal"),
        TestFunction(np.arctan, lambda x: 1.0 / (1.0 + x * x), 1.0, 3.0 * math.sqrt(3.0) / 8.0, name="arctan"),
        TestFunction(lambda x: x * np.exp(-x), lambda x: (1.0 - x) * np.exp(-x), 1.0, 2.0, name="gamma_bump"),
        TestFunction(lambda x: np.sqrt(1.0 + x * x), lambda x: x / np.sqrt(1.0 + x * x), 1.0, 1.0, name="hyperbola"),
        smoothing_test_function(1.0, 0.5),
        smoothing_test_function(2.0, 0.1),
        smoothing_test_function(0.5, 1.0),
    ]
