'''
DEANet Low-Light Enhancement Toolkit
Network building blocks on top of tensor_core: a small Module container with
named parameters, convolution layers, residual blocks (short hops), dense
blocks with transition layers, and decoder up-blocks that take an encoder
skip (long hops).
'''

import numpy as np

from tensor_core import functional as F
from tensor_core.tensor import Tensor, get_default_dtype
from utilities.exceptions import CheckpointError, ShapeError


class Module:
    '''Container that registers Tensor and Module attributes in assignment
    order, so parameter names and ordering are a pure function of the
    construction code.'''

    def __init__(self):
        object.__setattr__(self, '_params', {})
        object.__setattr__(self, '_children', {})

    def __setattr__(self, name, value):
        if isinstance(value, Tensor):
            self._params[name] = value
        elif isinstance(value, Module):
            self._children[name] = value
        object.__setattr__(self, name, value)

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def named_parameters(self, prefix=''):
        '''Yield (dotted name, Tensor) pairs depth-first in registration order.'''

        for name, param in self._params.items():
            yield prefix + name, param
        for name, child in self._children.items():
            yield from child.named_parameters(f'{prefix}{name}.')

    def parameters(self):
        return [param for _, param in self.named_parameters()]

    def num_parameters(self):
        return int(sum(param.size for param in self.parameters()))

    def set_trainable(self, trainable):
        for param in self.parameters():
            param.requires_grad = bool(trainable)
            if not trainable:
                param.grad = None

    def state_dict(self):
        '''Ordered mapping of parameter name -> copy of its data.'''
        return {name: param.data.copy() for name, param in self.named_parameters()}

    def load_state_dict(self, arrays, source='state dict'):
        '''Copy arrays into the parameters; names and shapes must match exactly.

        Arguments:
            arrays (dict): name -> np.ndarray
            source (str): description used in error messages (e.g. a file name)

        Returns:
            None
        '''

        own = dict(self.named_parameters())
        missing = [name for name in own if name not in arrays]
        if missing:
            raise CheckpointError(f'{source}: missing tensor(s) {missing[:5]} '
                                  f'({len(missing)} in total); the network '
                                  'configuration does not match the checkpoint')
        for name, param in own.items():
            value = np.asarray(arrays[name])
            if value.shape != param.shape:
                raise CheckpointError(
                    f'{source}: tensor {name!r} has shape {value.shape} in the '
                    f'checkpoint but {param.shape} in the configured network')
            param.data[...] = value


class ModuleList(Module):
    '''Ordered list of sub-modules registered under their index.'''

    def __init__(self, modules=()):
        super().__init__()
        object.__setattr__(self, '_items', [])
        for module in modules:
            self.append(module)

    def append(self, module):
        setattr(self, str(len(self._items)), module)
        self._items.append(module)

    def __iter__(self):
        return iter(self._items)

    def __len__(self):
        return len(self._items)

    def __getitem__(self, index):
        return self._items[index]


class Conv2d(Module):
    '''Convolution layer with He-normal initialised weights and zero bias.

    Attributes:
        weight (Tensor): Cout x Cin x k x k
        bias (Tensor): Cout
        stride (int), padding (int)
    '''

    def __init__(self, in_channels, out_channels, rng, kernel_size=3, stride=1):
        super().__init__()
        fan_in = in_channels * kernel_size * kernel_size
        std = np.sqrt(2.0 / fan_in)
        weight = rng.standard_normal((out_channels, in_channels, kernel_size, kernel_size))
        self.weight = Tensor(weight * std, requires_grad=True, dtype=get_default_dtype())
        self.bias = Tensor(np.zeros(out_channels), requires_grad=True,
                           dtype=get_default_dtype())
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.stride = stride
        self.padding = kernel_size // 2

    def forward(self, x):
        return F.conv2d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)


class ResidualBlock(Module):
    '''conv-relu-conv with an identity short hop, followed by relu.'''

    def __init__(self, channels, rng):
        super().__init__()
        self.conv1 = Conv2d(channels, channels, rng)
        self.conv2 = Conv2d(channels, channels, rng)

    def forward(self, x):
        h = self.conv2(F.relu(self.conv1(x)))
        return F.relu(F.add(h, x))


class DenseBlock(Module):
    '''Each layer sees the concatenation of the block input and all previous
    layer outputs, and adds `growth` channels.'''

    def __init__(self, in_channels, growth, num_layers, rng):
        super().__init__()
        self.layers = ModuleList(
            Conv2d(in_channels + i * growth, growth, rng) for i in range(num_layers))
        self.out_channels = in_channels + num_layers * growth

    def forward(self, x):
        features = [x]
        for layer in self.layers:
            inputs = features[0] if len(features) == 1 else F.concat_channels(features)
            features.append(F.relu(layer(inputs)))
        return F.concat_channels(features)


class Transition(Module):
    '''Transition ("conversion") layer: 1x1 conv halving channels, then a
    stride-2 3x3 conv halving the spatial size.'''

    def __init__(self, in_channels, rng):
        super().__init__()
        self.out_channels = max(in_channels // 2, 1)
        self.reduce = Conv2d(in_channels, self.out_channels, rng, kernel_size=1)
        self.down = Conv2d(self.out_channels, self.out_channels, rng, stride=2)

    def forward(self, x):
        return F.relu(self.down(F.relu(self.reduce(x))))


class UpBlock(Module):
    '''Decoder stage: upsample 2x, concatenate the encoder skip, fuse with a
    3x3 conv, and optionally refine with a residual block.

    In pixel_shuffle mode the upsampled tensor has a quarter of the input
    channels, which is what makes that decoder narrower.
    '''

    def __init__(self, in_channels, skip_channels, out_channels, mode, rng, residual=True):
        super().__init__()
        if mode == 'pixel_shuffle' and in_channels % 4:
            raise ShapeError(f'pixel_shuffle decoder input has {in_channels} channels, '
                             'which is not divisible by 4')
        self.mode = mode
        up_channels = in_channels if mode == 'nearest' else in_channels // 4
        self.fuse = Conv2d(up_channels + skip_channels, out_channels, rng)
        if residual:
            self.refine = ResidualBlock(out_channels, rng)
        else:
            self.refine = None

    def forward(self, x, skip):
        up = F.upsample2x(x, self.mode)
        h = F.relu(self.fuse(F.concat_channels([up, skip])))
        if self.refine is not None:
            h = self.refine(h)
        return h
