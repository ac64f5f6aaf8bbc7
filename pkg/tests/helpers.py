"""Shared test utilities: finite-difference oracles and small conveniences.

The finite-difference helpers are the independent gradient oracle used
throughout the test suite; they never touch the backward machinery of the
tensors they check.
"""

import numpy as np


def rel_err(a, b, floor=1e-8):
    """Relative error |a - b| scaled by the larger magnitude."""
    a = float(a)
    b = float(b)
    return abs(a - b) / max(abs(a), abs(b), floor)


def central_diff(f, array, index, h=1e-5):
    """Central finite difference of scalar f() w.r.t. one entry of ``array``.

    ``f`` must recompute the forward pass from scratch, reading ``array``
    (which is perturbed in place and restored).
    """
    orig = array[index]
    array[index] = orig + h
    fp = f()
    array[index] = orig - h
    fm = f()
    array[index] = orig
    return (fp - fm) / (2.0 * h)


def full_numeric_grad(f, array, h=1e-5):
    """Finite-difference gradient of f() w.r.t. every entry of ``array``."""
    grad = np.zeros_like(array)
    for index in np.ndindex(array.shape):
        grad[index] = central_diff(f, array, index, h)
    return grad


def check_grad(f, array, analytic, h=1e-5, tol=1e-6):
    """Assert analytic gradient matches central differences entrywise."""
    numeric = full_numeric_grad(f, array, h)
    worst = 0.0
    for index in np.ndindex(array.shape):
        worst = max(worst, rel_err(analytic[index], numeric[index]))
    assert worst < tol, f"gradient mismatch: worst relative error {worst:.3e} >= {tol}"
    return worst
