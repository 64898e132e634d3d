'''
DEANet Low-Light Enhancement Toolkit
Differentiable array operations used by the three networks and the losses.

Binary operations accept equal shapes, or 4-d tensors that differ only on
the channel axis where one side has a single channel (the illumination map
broadcast over RGB). Nothing else broadcasts.

'''

import numpy as np

from tensor_core.tensor import Function, Tensor
from utilities.exceptions import ShapeError


def _broadcast_shape(op, a_shape, b_shape):
    '''Result shape of a binary op under the single sanctioned broadcast.'''

    if a_shape == b_shape:
        return a_shape
    if len(a_shape) == 4 and len(b_shape) == 4:
        mismatched = [axis for axis in range(4) if a_shape[axis] != b_shape[axis]]
        if mismatched == [1] and 1 in (a_shape[1], b_shape[1]):
            return a_shape[:1] + (max(a_shape[1], b_shape[1]),) + a_shape[2:]
    names = ('N', 'C', 'H', 'W')
    for axis, (x, y) in enumerate(zip(a_shape, b_shape)):
        if x != y:
            dim = names[axis] if len(a_shape) == 4 else f'axis {axis}'
            raise ShapeError(f'{op}: incompatible shapes {a_shape} and {b_shape} '
                             f'(dimension {dim}: {x} vs {y})')
    raise ShapeError(f'{op}: incompatible ranks {a_shape} and {b_shape}')


def _unbroadcast(grad, shape):
    if grad.shape == shape:
        return grad
    return grad.sum(axis=1, keepdims=True)


class Add(Function):
    tag = 'add'

    def forward(self, a, b):
        _broadcast_shape(self.tag, a.shape, b.shape)
        self.saved['shapes'] = (a.shape, b.shape)
        return a + b

    def backward(self, grad):
        a_shape, b_shape = self.saved['shapes']
        return _unbroadcast(grad, a_shape), _unbroadcast(grad, b_shape)


class Sub(Function):
    tag = 'sub'

    def forward(self, a, b):
        _broadcast_shape(self.tag, a.shape, b.shape)
        self.saved['shapes'] = (a.shape, b.shape)
        return a - b

    def backward(self, grad):
        a_shape, b_shape = self.saved['shapes']
        return _unbroadcast(grad, a_shape), -_unbroadcast(grad, b_shape)


class Mul(Function):
    tag = 'mul'

    def forward(self, a, b):
        _broadcast_shape(self.tag, a.shape, b.shape)
        self.saved['a'], self.saved['b'] = a, b
        return a * b

    def backward(self, grad):
        a, b = self.saved['a'], self.saved['b']
        return _unbroadcast(grad * b, a.shape), _unbroadcast(grad * a, b.shape)


class Scale(Function):
    tag = 'scale'

    def forward(self, x, factor=1.0):
        self.saved['factor'] = factor
        return (x * factor).astype(x.dtype, copy=False)

    def backward(self, grad):
        return (grad * self.saved['factor'],)


class ReLU(Function):
    tag = 'relu'

    def forward(self, x):
        self.saved['mask'] = x > 0
        return np.where(self.saved['mask'], x, 0).astype(x.dtype, copy=False)

    def backward(self, grad):
        return (grad * self.saved['mask'],)


class Sigmoid(Function):
    tag = 'sigmoid'

    def forward(self, x):
        # tanh form: no overflow for large |x|, exactly 0.5 at 0
        out = (0.5 * (1.0 + np.tanh(0.5 * x))).astype(x.dtype, copy=False)
        self.saved['out'] = out
        return out

    def backward(self, grad):
        out = self.saved['out']
        return (grad * out * (1.0 - out),)


class Sum(Function):
    tag = 'sum'

    def forward(self, x):
        self.saved['shape'] = x.shape
        return np.asarray(x.sum(), dtype=x.dtype)

    def backward(self, grad):
        return (np.broadcast_to(grad, self.saved['shape']).copy(),)


class Mean(Function):
    tag = 'mean'

    def forward(self, x):
        self.saved['shape'] = x.shape
        return np.asarray(x.mean(), dtype=x.dtype)

    def backward(self, grad):
        shape = self.saved['shape']
        return (np.full(shape, grad / max(int(np.prod(shape)), 1)),)


class Conv2d(Function):
    '''Cross-correlation over N, C, H, W tensors.

    Computed as a sum over kernel taps of channel contractions, so the
    reduction order is fixed and results are deterministic.
    '''

    tag = 'conv2d'

    def forward(self, x, weight, bias=None, stride=1, padding=0):
        check_conv2d_shapes(x.shape, weight.shape,
                            None if bias is None else bias.shape,
                            stride, padding)
        cout, _, kh, kw = weight.shape
        h_out, w_out = conv2d_output_size(x.shape[2], x.shape[3], kh, kw,
                                          stride, padding)
        xp = x
        if padding:
            xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))

        out = np.zeros((x.shape[0], h_out, w_out, cout), dtype=x.dtype)
        for i in range(kh):
            for j in range(kw):
                patch = xp[:, :, i:i + stride * (h_out - 1) + 1:stride,
                           j:j + stride * (w_out - 1) + 1:stride]
                out += np.tensordot(patch, weight[:, :, i, j], axes=([1], [1]))
        out = out.transpose(0, 3, 1, 2)
        if bias is not None:
            out = out + bias.reshape(1, -1, 1, 1)

        self.saved.update(xp=xp, weight=weight, stride=stride, padding=padding,
                          in_shape=x.shape, has_bias=bias is not None,
                          out_size=(h_out, w_out))
        return np.ascontiguousarray(out, dtype=x.dtype)

    def backward(self, grad):
        xp, weight = self.saved['xp'], self.saved['weight']
        stride, padding = self.saved['stride'], self.saved['padding']
        h_out, w_out = self.saved['out_size']
        _, _, kh, kw = weight.shape
        _, _, h, w = self.saved['in_shape']

        grad_t = grad.transpose(0, 2, 3, 1)
        dxp = np.zeros_like(xp)
        dweight = np.zeros_like(weight)
        for i in range(kh):
            for j in range(kw):
                rows = slice(i, i + stride * (h_out - 1) + 1, stride)
                cols = slice(j, j + stride * (w_out - 1) + 1, stride)
                patch = xp[:, :, rows, cols]
                dweight[:, :, i, j] = np.tensordot(grad_t, patch,
                                                   axes=([0, 1, 2], [0, 2, 3]))
                dxp[:, :, rows, cols] += np.tensordot(
                    grad_t, weight[:, :, i, j], axes=([3], [0])).transpose(0, 3, 1, 2)
        dx = dxp[:, :, padding:padding + h, padding:padding + w]
        if self.saved['has_bias']:
            return dx, dweight, grad.sum(axis=(0, 2, 3))
        return dx, dweight


class ConcatChannels(Function):
    tag = 'concat_channels'

    def forward(self, *parts):
        reference = parts[0].shape
        for index, part in enumerate(parts):
            if part.ndim != 4:
                raise ShapeError(f'concat_channels: part {index} has rank '
                                 f'{part.ndim}, expected 4 (N, C, H, W)')
            for axis, name in ((0, 'N'), (2, 'H'), (3, 'W')):
                if part.shape[axis] != reference[axis]:
                    raise ShapeError(
                        f'concat_channels: part {index} has {name}={part.shape[axis]} '
                        f'but part 0 has {name}={reference[axis]}')
        self.saved['splits'] = np.cumsum([p.shape[1] for p in parts])[:-1]
        return np.concatenate(parts, axis=1)

    def backward(self, grad):
        return tuple(np.split(grad, self.saved['splits'], axis=1))


class MaxOverChannels(Function):
    tag = 'max_over_channels'

    def forward(self, x):
        if x.ndim != 4 or x.shape[1] != 3:
            raise ShapeError('max_over_channels: expected an (N, 3, H, W) tensor, '
                             f'got shape {x.shape}')
        # argmax returns the lowest index on ties
        index = np.argmax(x, axis=1)[:, None]
        self.saved['index'], self.saved['shape'] = index, x.shape
        return np.take_along_axis(x, index, axis=1)

    def backward(self, grad):
        dx = np.zeros(self.saved['shape'], dtype=grad.dtype)
        np.put_along_axis(dx, self.saved['index'], grad, axis=1)
        return (dx,)


class UpsampleNearest(Function):
    tag = 'upsample_nearest'

    def forward(self, x):
        return x.repeat(2, axis=2).repeat(2, axis=3)

    def backward(self, grad):
        n, c, h2, w2 = grad.shape
        return (grad.reshape(n, c, h2 // 2, 2, w2 // 2, 2).sum(axis=(3, 5)),)


class PixelShuffle(Function):
    '''Depth-to-space with factor 2: channel 4k + 2i + j of the input lands
    at offset (i, j) of the 2x2 output block of channel k.'''

    tag = 'pixel_shuffle'

    def forward(self, x):
        n, c, h, w = x.shape
        if c % 4:
            raise ShapeError(f'upsample2x(pixel_shuffle): channel count {c} '
                             'is not divisible by 4')
        return (x.reshape(n, c // 4, 2, 2, h, w)
                .transpose(0, 1, 4, 2, 5, 3)
                .reshape(n, c // 4, 2 * h, 2 * w))

    def backward(self, grad):
        n, c, h2, w2 = grad.shape
        h, w = h2 // 2, w2 // 2
        return (grad.reshape(n, c, h, 2, w, 2)
                .transpose(0, 1, 3, 5, 2, 4)
                .reshape(n, 4 * c, h, w),)


class L1Loss(Function):
    tag = 'l1_loss'

    def forward(self, a, b):
        _broadcast_shape(self.tag, a.shape, b.shape)
        diff = a - b
        self.saved['sign'] = np.sign(diff)
        self.saved['shapes'] = (a.shape, b.shape)
        return np.asarray(np.abs(diff).mean(), dtype=diff.dtype)

    def backward(self, grad):
        sign = self.saved['sign']
        a_shape, b_shape = self.saved['shapes']
        local = grad * sign / sign.size
        return _unbroadcast(local, a_shape), -_unbroadcast(local, b_shape)


def conv2d_output_size(h, w, kh, kw, stride=1, padding=0):
    '''Spatial output extent of conv2d: (H + 2p - k) // s + 1 per axis.'''
    return (h + 2 * padding - kh) // stride + 1, (w + 2 * padding - kw) // stride + 1


def check_conv2d_shapes(x_shape, w_shape, b_shape=None, stride=1, padding=0):
    '''Raise ShapeError naming the offending dimension if conv2d cannot run.'''

    if len(x_shape) != 4:
        raise ShapeError(f'conv2d: input must be (N, Cin, H, W), got {x_shape}')
    if len(w_shape) != 4:
        raise ShapeError(f'conv2d: weight must be (Cout, Cin, kh, kw), got {w_shape}')
    if x_shape[1] != w_shape[1]:
        raise ShapeError(f'conv2d: input has Cin={x_shape[1]} channels but the '
                         f'weight expects Cin={w_shape[1]}')
    if w_shape[2] % 2 == 0 or w_shape[3] % 2 == 0:
        raise ShapeError(f'conv2d: kernel size {w_shape[2]}x{w_shape[3]} must be odd')
    if b_shape is not None and tuple(b_shape) != (w_shape[0],):
        raise ShapeError(f'conv2d: bias has shape {tuple(b_shape)}, '
                         f'expected Cout=({w_shape[0]},)')
    if stride < 1:
        raise ShapeError(f'conv2d: stride must be >= 1, got {stride}')
    if padding < 0:
        raise ShapeError(f'conv2d: padding must be >= 0, got {padding}')
    h_out, w_out = conv2d_output_size(x_shape[2], x_shape[3], w_shape[2],
                                      w_shape[3], stride, padding)
    if h_out < 1:
        raise ShapeError(f'conv2d: H={x_shape[2]} too small for kernel height '
                         f'{w_shape[2]} with padding {padding}')
    if w_out < 1:
        raise ShapeError(f'conv2d: W={x_shape[3]} too small for kernel width '
                         f'{w_shape[3]} with padding {padding}')


def conv2d(x, weight, bias=None, stride=1, padding=0):
    if bias is None:
        return Conv2d.apply(x, weight, stride=stride, padding=padding)
    return Conv2d.apply(x, weight, bias, stride=stride, padding=padding)


def add(a, b):
    return Add.apply(a, b)


def sub(a, b):
    return Sub.apply(a, b)


def mul(a, b):
    return Mul.apply(a, b)


def scale(x, factor):
    return Scale.apply(x, factor=float(factor))


def relu(x):
    return ReLU.apply(x)


def sigmoid(x):
    return Sigmoid.apply(x)


_ELEMENTWISE = {'add': add, 'sub': sub, 'mul': mul, 'relu': relu, 'sigmoid': sigmoid}


def elementwise(op, a, b=None):
    '''Dispatch one of add | sub | mul | relu | sigmoid by name.'''

    try:
        func = _ELEMENTWISE[op]
    except KeyError:
        raise ValueError(f'Unknown elementwise op {op!r}; '
                         f'expected one of {sorted(_ELEMENTWISE)}') from None
    if op in ('relu', 'sigmoid'):
        return func(a)
    if b is None:
        raise ValueError(f'elementwise {op!r} needs two operands')
    return func(a, b)


def sum(x):
    return Sum.apply(x)


def mean(x):
    return Mean.apply(x)


def concat_channels(parts):
    parts = list(parts)
    if not parts:
        raise ShapeError('concat_channels: no parts given')
    return ConcatChannels.apply(*parts)


def max_over_channels(x):
    return MaxOverChannels.apply(x)


def upsample2x(x, mode='nearest'):
    '''Double H and W, by pixel repetition or by pixel shuffle.'''

    if x.ndim != 4:
        raise ShapeError(f'upsample2x: expected (N, C, H, W), got {x.shape}')
    if mode == 'nearest':
        return UpsampleNearest.apply(x)
    if mode == 'pixel_shuffle':
        return PixelShuffle.apply(x)
    raise ValueError(f"upsample2x: unknown mode {mode!r}; "
                     "expected 'nearest' or 'pixel_shuffle'")


def l1_loss(a, b):
    '''Mean absolute difference; subgradient sign(a - b) / numel, 0 at ties.'''
    return L1Loss.apply(a, b)


def ones_like(x, requires_grad=False):
    return Tensor(np.ones_like(x.data), requires_grad=requires_grad, dtype=x.dtype)


def zeros_like(x, requires_grad=False):
    return Tensor(np.zeros_like(x.data), requires_grad=requires_grad, dtype=x.dtype)
