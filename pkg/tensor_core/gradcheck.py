'''
DEANet Low-Light Enhancement Toolkit
Finite-difference gradient checking for the tensor engine.

'''

import logging
from dataclasses import dataclass, field

import numpy as np


logger = logging.getLogger(__name__)


@dataclass
class GradCheckResult:
    '''Outcome of a gradient check.

    Attributes:
        max_rel_error (float): largest relative error over checked coordinates
        checked (list of tuple): (tensor index, flat index, analytic, numeric)
        passed (bool): max_rel_error below the requested tolerance
    '''

    max_rel_error: float
    checked: list = field(default_factory=list)
    passed: bool = True


def relative_error(analytic, numeric, floor=1e-8):
    '''|a - n| / max(|a|, |n|); coordinates where both are below floor count as 0.'''

    scale = max(abs(analytic), abs(numeric))
    if scale < floor:
        return 0.0
    return abs(analytic - numeric) / scale


def numerical_gradient(func, tensor, flat_index, h=1e-5):
    '''Central finite difference of a scalar func() w.r.t. one coordinate.

    Arguments:
        func (callable): no-argument function returning a scalar Tensor
        tensor (Tensor): tensor whose data is perturbed in place
        flat_index (int): coordinate in tensor.data.ravel() order
        h (float): step size

    Returns:
        float
    '''

    values = tensor.data.reshape(-1)
    original = values[flat_index]
    try:
        values[flat_index] = original + h
        plus = float(func().item())
        values[flat_index] = original - h
        minus = float(func().item())
    finally:
        values[flat_index] = original
    return (plus - minus) / (2.0 * h)


def gradient_check(func, tensors, num_samples=20, h=1e-5, rtol=1e-4, seed=0):
    '''Compare backward() gradients against central finite differences.

    Coordinates are sampled uniformly over all given tensors. Run with
    float64 tensors; in float32 the differences are dominated by rounding.

    Arguments:
        func (callable): no-argument function building and returning a scalar loss
        tensors (list of Tensor): tensors to check (must require grad)
        num_samples (int): coordinates to check
        h (float): finite-difference step
        rtol (float): pass threshold on relative error
        seed (int): sampling seed

    Returns:
        GradCheckResult
    '''

    tensors = list(tensors)
    for tensor in tensors:
        if tensor.dtype != np.float64:
            logger.warning('gradient_check on %s tensor; use float64 for '
                           'meaningful results', tensor.dtype)
        tensor.grad = None

    loss = func()
    loss.backward()
    analytic = [t.grad.copy() if t.grad is not None else np.zeros_like(t.data)
                for t in tensors]

    rng = np.random.default_rng(seed)
    sizes = np.array([t.size for t in tensors])
    picks = rng.choice(int(sizes.sum()), size=min(num_samples, int(sizes.sum())),
                       replace=False)
    offsets = np.concatenate([[0], np.cumsum(sizes)])

    checked = []
    worst = 0.0
    for pick in sorted(int(p) for p in picks):
        which = int(np.searchsorted(offsets, pick, side='right') - 1)
        flat = pick - int(offsets[which])
        a = float(analytic[which].reshape(-1)[flat])
        n = numerical_gradient(func, tensors[which], flat, h=h)
        worst = max(worst, relative_error(a, n))
        checked.append((which, flat, a, n))
    return GradCheckResult(max_rel_error=worst, checked=checked, passed=worst < rtol)
