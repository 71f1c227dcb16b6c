import math

import torch


def finite_diff_check(fn, params, epsilon=1e-6, noise_factor=0.0, floor=1e-8):
    """
    Compare autograd gradients of a scalar function against central differences.

    Args:
        fn: callable with no arguments returning a scalar tensor that depends on `params`.
        params: iterable of leaf tensors with requires_grad=True; perturbed in place and restored.
        epsilon: finite-difference step.
        noise_factor: an element whose discrepancy is at or below the rounding noise of its
            central difference, noise_factor * eps(dtype) * max(|f(θ+ε)|, |f(θ-ε)|) / epsilon,
            counts as exact. Zero disables the allowance.
        floor: lower bound of the relative-error denominator.

    Returns:
        The maximum over all elements of |analytic - numeric| / max(|analytic|, |numeric|, floor).
    """
    if epsilon <= 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    params = list(params)
    value = fn()
    _check_finite(value)
    analytic = torch.autograd.grad(value, params, allow_unused=True)

    worst = 0.0
    with torch.no_grad():
        for p, grad in zip(params, analytic):
            grad = torch.zeros_like(p) if grad is None else grad
            machine_eps = torch.finfo(p.dtype).eps
            flat = p.view(-1)
            flat_grad = grad.reshape(-1)
            for i in range(flat.numel()):
                original = flat[i].item()
                flat[i] = original + epsilon
                f_plus = _check_finite(fn())
                flat[i] = original - epsilon
                f_minus = _check_finite(fn())
                flat[i] = original
                numeric = (f_plus - f_minus) / (2 * epsilon)
                a = flat_grad[i].item()
                diff = abs(a - numeric)
                if diff <= noise_factor * machine_eps * max(abs(f_plus), abs(f_minus)) / epsilon:
                    continue
                worst = max(worst, diff / max(abs(a), abs(numeric), floor))
    return worst


def _check_finite(value):
    scalar = float(value.detach().reshape(()).item()) if isinstance(value, torch.Tensor) else float(value)
    if not math.isfinite(scalar):
        raise FloatingPointError(f"function under check returned a non-finite value {scalar}")
    return scalar
