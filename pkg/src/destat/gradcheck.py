"""Finite-difference verification of autodiff gradients.

The checker perturbs each input coordinate by +-h, re-evaluates the
scalar function, and compares the central-difference estimate against
the gradient produced by the reverse-mode sweep. Inputs must be float64
arrays; kinked functions (relu, abs, clamp floors) should be probed at
points bounded away from their kinks.
"""

import numpy as np

from .autodiff import Tensor


def numeric_gradient(func, arrays, index, h=1e-5):
    """Central finite differences of `func(arrays) -> float` w.r.t. one array.

    `arrays[index]` is perturbed in place coordinate by coordinate and
    restored afterwards, so `func` must read the arrays fresh each call.
    """
    target = arrays[index]
    grad = np.zeros_like(target)
    flat = target.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        f_plus = func(arrays)
        flat[i] = orig - h
        f_minus = func(arrays)
        flat[i] = orig
        gflat[i] = (f_plus - f_minus) / (2.0 * h)
    return grad


def relative_error(analytic, numeric):
    """Coordinate-wise |a - n| / max(1, |a|, |n|), reduced to the maximum."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(1.0, np.maximum(np.abs(a), np.abs(n)))
    return float(np.max(np.abs(a - n) / denom)) if a.size else 0.0


def check_gradients(build, arrays, h=1e-5, tol=1e-4):
    """Compare reverse-mode gradients of `build` against finite differences.

    Args:
        build: callable taking one Tensor per input array and returning a
            scalar Tensor.
        arrays: list of float64 numpy arrays, one per differentiable input.
        h: central-difference step.
        tol: maximum allowed relative error per input.

    Returns:
        (max_error, per_input_errors). Raises AssertionError when any
        input exceeds `tol`.
    """
    arrays = [np.asarray(a, dtype=np.float64) for a in arrays]
    tensors = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    out = build(*tensors)
    if out.size != 1:
        raise ValueError(f"gradcheck target must be scalar, got shape {out.shape}")
    out.backward()

    def evaluate(arrs):
        return float(build(*[Tensor(a) for a in arrs]).data)

    errors = []
    for i, t in enumerate(tensors):
        analytic = t.grad if t.grad is not None else np.zeros_like(arrays[i])
        numeric = numeric_gradient(evaluate, arrays, i, h=h)
        errors.append(relative_error(analytic, numeric))
    max_error = max(errors) if errors else 0.0
    if max_error > tol:
        worst = int(np.argmax(errors))
        raise AssertionError(
            f"gradient check failed: input {worst} relative error {errors[worst]:.3e} > {tol:.1e}"
        )
    return max_error, errors
