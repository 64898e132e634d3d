'''
DEANet Low-Light Enhancement Toolkit
Tensor core: a minimal reverse-mode automatic differentiation engine.

A Tensor wraps a numpy array. Every differentiable operation is a Function
subclass; applying it to tensors that require gradients records a node
(operation tag + parent references) on the output, so the computation graph
is rebuilt on every forward pass. backward() walks that graph once in
reverse topological order.

'''

import logging
import threading
from contextlib import contextmanager

import numpy as np

from utilities.exceptions import ShapeError


logger = logging.getLogger(__name__)

_SUPPORTED_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))
_FALLBACK_DTYPE = np.dtype(np.float32)

# Each thread keeps its own default; evaluation workers switch it independently.
_state = threading.local()


def get_default_dtype():
    '''Return the dtype new tensors are created with on this thread (float32 unless changed).'''
    return getattr(_state, 'dtype', _FALLBACK_DTYPE)


def set_default_dtype(dtype):
    '''Set the dtype new tensors are created with on the calling thread.

    Arguments:
        dtype: float32 or float64 (anything np.dtype accepts)

    Returns:
        np.dtype: the previous default
    '''

    dtype = np.dtype(dtype)
    if dtype not in _SUPPORTED_DTYPES:
        raise ValueError(f'Unsupported tensor dtype {dtype}; '
                         'use float32 or float64')
    previous = get_default_dtype()
    _state.dtype = dtype
    return previous


@contextmanager
def default_dtype(dtype):
    '''Temporarily switch the default dtype, e.g. float64 for gradient checks.'''
    previous = set_default_dtype(dtype)
    try:
        yield np.dtype(dtype)
    finally:
        set_default_dtype(previous)


class Function:
    '''Base class for differentiable operations.

    Subclasses implement forward() on raw numpy arrays and backward(), which
    receives dL/d(output) and returns one gradient array (or None) per parent.

    Attributes:
        tag (str): operation name, used in error messages and graph dumps
        parents (tuple of Tensor): input tensors of this operation
        saved (dict): arrays stashed by forward() for use in backward()
    '''

    tag = 'function'

    def __init__(self, *parents):
        self.parents = parents
        self.saved = {}

    def forward(self, *arrays, **kwargs):
        raise NotImplementedError(f'{self.tag}: forward not implemented')

    def backward(self, grad):
        raise NotImplementedError(f'{self.tag}: backward not implemented')

    @classmethod
    def apply(cls, *tensors, **kwargs):
        '''Run forward on the tensors' data and wrap the result.

        The output only carries a graph node when at least one input
        requires a gradient.
        '''

        func = cls(*tensors)
        out = func.forward(*(t.data for t in tensors), **kwargs)
        requires_grad = any(t.requires_grad for t in tensors)
        return Tensor(out, requires_grad=requires_grad,
                      node=func if requires_grad else None,
                      dtype=out.dtype)

    def __repr__(self):
        return f'<{self.tag} node, {len(self.parents)} parent(s)>'


class Tensor:
    '''n-d differentiable array (N, C, H, W order for images).

    Attributes:
        data (np.ndarray): values, float32 or float64
        grad (np.ndarray or None): same-shape gradient buffer, allocated by
            the first backward() that reaches this tensor
        node (Function or None): graph backpointer; None for leaves
        requires_grad (bool): whether backward() accumulates into grad
    '''

    def __init__(self, data, requires_grad=False, node=None, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        self.data = np.asarray(data, dtype=dtype or get_default_dtype())
        self.grad = None
        self.node = node
        self.requires_grad = bool(requires_grad)

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def is_leaf(self):
        return self.node is None

    def numpy(self):
        return self.data

    def item(self):
        return self.data.item()

    def detach(self):
        '''New leaf sharing this tensor's data, outside any graph.'''
        return Tensor(self.data, requires_grad=False, dtype=self.dtype)

    def zero_grad(self):
        self.grad = None

    def backward(self):
        backward(self)

    def _accumulate(self, grad):
        if self.grad is None:
            self.grad = np.array(grad, dtype=self.dtype, copy=True)
        else:
            self.grad += grad

    def __add__(self, other):
        from tensor_core import functional
        return functional.add(self, other)

    def __sub__(self, other):
        from tensor_core import functional
        return functional.sub(self, other)

    def __mul__(self, other):
        from tensor_core import functional
        if isinstance(other, Tensor):
            return functional.mul(self, other)
        return functional.scale(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        from tensor_core import functional
        return functional.scale(self, -1.0)

    def __repr__(self):
        tag = self.node.tag if self.node is not None else 'leaf'
        return (f'Tensor(shape={self.shape}, dtype={self.dtype}, '
                f'requires_grad={self.requires_grad}, node={tag})')


def topological_order(root):
    '''Tensors reachable from root through requires_grad edges, parents first.'''

    order = []
    visited = set()
    stack = [(root, False)]
    while stack:
        tensor, expanded = stack.pop()
        if expanded:
            order.append(tensor)
            continue
        if id(tensor) in visited:
            continue
        visited.add(id(tensor))
        stack.append((tensor, True))
        if tensor.node is not None:
            for parent in tensor.node.parents:
                if parent.requires_grad and id(parent) not in visited:
                    stack.append((parent, False))
    return order


def backward(loss):
    '''Back-propagate from a scalar loss.

    Gradients are accumulated (added) into .grad of every reachable tensor
    that requires one; calling backward twice without zeroing doubles them.

    Arguments:
        loss (Tensor): single-element tensor

    Returns:
        None
    '''

    if loss.size != 1:
        raise ShapeError(
            f'backward() needs a scalar loss, got shape {loss.shape}')
    if not loss.requires_grad:
        raise ValueError('backward() called on a tensor that does not '
                         'require grad (no trainable tensor reaches it)')

    order = topological_order(loss)
    pending = {id(loss): np.ones_like(loss.data)}
    for tensor in reversed(order):
        grad = pending.pop(id(tensor), None)
        if grad is None:
            continue
        tensor._accumulate(grad)
        if tensor.node is None:
            continue
        parent_grads = tensor.node.backward(grad)
        for parent, parent_grad in zip(tensor.node.parents, parent_grads):
            if parent_grad is None or not parent.requires_grad:
                continue
            parent_grad = np.asarray(parent_grad, dtype=parent.dtype)
            key = id(parent)
            if key in pending:
                pending[key] = pending[key] + parent_grad
            else:
                pending[key] = parent_grad
    logger.debug('backward visited %d tensors', len(order))
