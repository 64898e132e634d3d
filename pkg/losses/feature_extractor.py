'''
DEANet Low-Light Enhancement Toolkit
Frozen convolutional feature extractor for the perceptual content loss.

The default is a seed-initialised 8-conv stack with three stride-2 stages;
externally exported conv weights (a VGG19 or DenseNet161 prefix, folded to
plain conv + relu layers) can be loaded from a DEAN checkpoint instead.
'''

import logging
import re

import numpy as np

from retinex_nets.checkpoint import read_checkpoint
from retinex_nets.layers import Conv2d, Module, ModuleList
from tensor_core import functional as F
from tensor_core.tensor import Tensor, get_default_dtype
from utilities.exceptions import CheckpointError


logger = logging.getLogger(__name__)

# (in channels, out channels, stride)
DEFAULT_LAYOUT = ((3, 16, 1), (16, 16, 1), (16, 32, 2), (32, 32, 1),
                  (32, 64, 2), (64, 64, 1), (64, 64, 1), (64, 64, 2))
DEFAULT_TAPS = (0, 1, 2)

_LAYER_NAME = re.compile(r'^fx\.(\d+)\.(weight|bias|stride)$')


class FeatureExtractor(Module):
    '''Non-trainable conv + relu stack whose stage outputs are compared.

    A stage ends at every stride-2 layer; tap k is the activation after the
    k-th downsampling layer.

    Attributes:
        layers (ModuleList of Conv2d): frozen convolutions
        taps (tuple of int): stage indices returned by forward()
    '''

    def __init__(self, taps=DEFAULT_TAPS, seed=0, layout=DEFAULT_LAYOUT):
        super().__init__()
        rng = np.random.default_rng(seed)
        self.layers = ModuleList(Conv2d(cin, cout, rng, stride=stride)
                                 for cin, cout, stride in layout)
        self.set_trainable(False)
        self.taps = tuple(int(t) for t in taps)
        stages = self.num_stages
        for tap in self.taps:
            if not 0 <= tap < stages:
                raise ValueError(f'Feature tap {tap} out of range; the extractor '
                                 f'has {stages} stages')

    @property
    def num_stages(self):
        return sum(1 for layer in self.layers if layer.stride == 2)

    def forward(self, x):
        '''Activations at the tapped stages, in tap order.'''

        if not self.taps:
            return []
        wanted = set(self.taps)
        last = max(wanted)
        found = {}
        stage = 0
        h = x
        for layer in self.layers:
            h = F.relu(layer(h))
            if layer.stride == 2:
                if stage in wanted:
                    found[stage] = h
                if stage == last:
                    break
                stage += 1
        return [found[t] for t in self.taps]

    @classmethod
    def from_checkpoint(cls, path, taps=DEFAULT_TAPS, strides=None):
        '''Build an extractor from exported conv weights.

        Tensors must be named fx.<i>.weight / fx.<i>.bias; per-layer strides
        come from the strides argument, from fx.<i>.stride tensors, or from
        the default layout when the file holds exactly 8 layers.

        Arguments:
            path (str or Path): DEAN checkpoint
            taps (tuple of int): stage indices to compare
            strides (list of int or None)

        Returns:
            FeatureExtractor
        '''

        tensors = read_checkpoint(path)
        layers = {}
        for name, value in tensors.items():
            match = _LAYER_NAME.match(name)
            if match:
                layers.setdefault(int(match.group(1)), {})[match.group(2)] = value
        if not layers:
            raise CheckpointError(f'{path}: no fx.<i>.weight tensors found')
        indices = sorted(layers)
        if indices != list(range(len(indices))):
            raise CheckpointError(f'{path}: feature layers are not numbered 0..n-1')

        if strides is None:
            if all('stride' in layers[i] for i in indices):
                strides = [int(layers[i]['stride'].reshape(-1)[0]) for i in indices]
            elif len(indices) == len(DEFAULT_LAYOUT):
                strides = [stride for _, _, stride in DEFAULT_LAYOUT]
            else:
                raise CheckpointError(f'{path}: {len(indices)} layers but no strides given')
        if len(strides) != len(indices):
            raise CheckpointError(f'{path}: {len(indices)} layers but {len(strides)} strides')

        layout = []
        for i, stride in zip(indices, strides):
            if 'weight' not in layers[i]:
                raise CheckpointError(f'{path}: missing fx.{i}.weight')
            cout, cin = layers[i]['weight'].shape[:2]
            layout.append((cin, cout, int(stride)))

        extractor = cls(taps=(), layout=tuple(layout))
        for i, layer in zip(indices, extractor.layers):
            weight = layers[i]['weight']
            if weight.ndim != 4 or weight.shape[2] % 2 == 0:
                raise CheckpointError(f'{path}: fx.{i}.weight has shape {weight.shape}; '
                                      'expected Cout x Cin x k x k with odd k')
            if i > 0 and weight.shape[1] != layers[i - 1]['weight'].shape[0]:
                raise CheckpointError(f'{path}: fx.{i}.weight expects {weight.shape[1]} '
                                      f'input channels, layer {i - 1} produces '
                                      f'{layers[i - 1]["weight"].shape[0]}')
            layer.weight = Tensor(weight, dtype=get_default_dtype())
            layer.bias = Tensor(layers[i].get('bias', np.zeros(weight.shape[0])),
                                dtype=get_default_dtype())
            layer.padding = weight.shape[2] // 2

        extractor.taps = tuple(int(t) for t in taps)
        for tap in extractor.taps:
            if not 0 <= tap < extractor.num_stages:
                raise ValueError(f'Feature tap {tap} out of range; {path} has '
                                 f'{extractor.num_stages} stages')
        logger.info('Loaded %d-layer feature extractor from %s', len(indices), path)
        return extractor
