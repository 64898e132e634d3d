'''
DEANet Low-Light Enhancement Toolkit
The three sub-networks and the Retinex composition I = R o L + N.

    DecomNet   - UNet + ResNet hybrid; RGB + channel-max brightness in,
                 reflectance (3ch) and illumination (1ch) out
    EnhanceNet - three Dense-UNet branches: high-frequency detail,
                 reflectance, illumination
    AdjustNet  - UNet + ResNet hybrid refining R o L + HF into the final image

Images travel through the networks as N x C x H x W tensors; the helpers
to_tensor / to_image convert from and to H x W x C arrays.

'''

import logging
from dataclasses import dataclass

import numpy as np

from retinex_nets.layers import (Conv2d, DenseBlock, Module, ModuleList,
                                 ResidualBlock, Transition, UpBlock)
from tensor_core import functional as F
from tensor_core.tensor import Tensor
from utilities.exceptions import ShapeError


logger = logging.getLogger(__name__)

UPSAMPLE_MODES = ('nearest', 'pixel_shuffle')
DECOM_INPUTS = ('low_frequency', 'full')


@dataclass
class NetConfig:
    '''Architecture of all three networks (config section "net").

    Attributes:
        depth_levels (int): resolution levels; the deepest feature map is
            input_size / 2^(depth_levels - 1)
        base_channels (int): width of the first level
        dense_growth (int): channels added by each dense-block layer
        dense_layers (int): convolutions per dense block
        max_channel_multiplier (int): cap on encoder width growth of the
            UNet + ResNet networks (width = base * min(2^level, cap))
        upsample_mode (str): 'nearest' (upsample + conv) or 'pixel_shuffle'
        input_size (int): training patch side
        decom_input (str): 'low_frequency' (WLS base) or 'full' image fed
            to DecomNet
    '''

    depth_levels: int = 6
    base_channels: int = 32
    dense_growth: int = 16
    dense_layers: int = 3
    max_channel_multiplier: int = 4
    upsample_mode: str = 'nearest'
    input_size: int = 192
    decom_input: str = 'low_frequency'

    def __post_init__(self):
        if self.depth_levels < 1:
            raise ValueError(f'net.depth_levels must be >= 1, got {self.depth_levels}')
        if self.base_channels < 1 or self.dense_growth < 1 or self.dense_layers < 1:
            raise ValueError('net.base_channels, net.dense_growth and '
                             'net.dense_layers must be >= 1')
        if self.upsample_mode not in UPSAMPLE_MODES:
            raise ValueError(f'net.upsample_mode must be one of {UPSAMPLE_MODES}, '
                             f'got {self.upsample_mode!r}')
        if self.upsample_mode == 'pixel_shuffle' and self.base_channels % 4:
            raise ValueError('net.upsample_mode = pixel_shuffle needs '
                             f'net.base_channels divisible by 4, got {self.base_channels}')
        if self.decom_input not in DECOM_INPUTS:
            raise ValueError(f'net.decom_input must be one of {DECOM_INPUTS}, '
                             f'got {self.decom_input!r}')
        if self.input_size % self.divisor or self.input_size % 2:
            raise ValueError(f'net.input_size {self.input_size} must be even and '
                             f'divisible by 2^(depth_levels-1) = {self.divisor}')

    @property
    def divisor(self):
        return 2 ** (self.depth_levels - 1)

    def level_width(self, level):
        return self.base_channels * min(2 ** level, self.max_channel_multiplier)

    def deepest_side(self, side=None):
        return (side or self.input_size) // self.divisor


@dataclass
class Decomposition:
    '''Retinex decomposition as N x C x H x W tensors.

    Attributes:
        reflectance (Tensor): N x 3 x H x W, in (0, 1)
        illumination (Tensor): N x 1 x H x W, in (0, 1)
    '''

    reflectance: Tensor
    illumination: Tensor

    def detach(self):
        return Decomposition(self.reflectance.detach(), self.illumination.detach())


@dataclass
class EnhanceOutput:
    '''Outputs of the three EnhanceNet branches.

    Attributes:
        hf_enhanced (Tensor): N x 3 x H x W, signed
        reflectance_enhanced (Tensor): N x 3 x H x W, in (0, 1)
        illumination_enhanced (Tensor): N x 1 x H x W, in (0, 1)
    '''

    hf_enhanced: Tensor
    reflectance_enhanced: Tensor
    illumination_enhanced: Tensor


def to_tensor(image, requires_grad=False):
    '''H x W x C array (or a batch N x H x W x C) -> N x C x H x W Tensor.'''

    if isinstance(image, Tensor):
        return image
    array = np.asarray(image)
    if array.ndim == 2:
        array = array[:, :, None]
    if array.ndim == 3:
        array = array[None]
    if array.ndim != 4:
        raise ShapeError(f'Expected an H x W x C image, got shape {np.shape(image)}')
    return Tensor(np.ascontiguousarray(array.transpose(0, 3, 1, 2)),
                  requires_grad=requires_grad)


def to_image(tensor, index=0):
    '''N x C x H x W Tensor -> H x W x C float array of batch element index.'''

    data = tensor.data if isinstance(tensor, Tensor) else np.asarray(tensor)
    return np.ascontiguousarray(data[index].transpose(1, 2, 0))


def check_divisible(shape, config, network):
    h, w = shape[2], shape[3]
    if h % config.divisor or w % config.divisor:
        raise ShapeError(f'{network}: input of {h}x{w} pixels must have H and W '
                         f'divisible by 2^(depth_levels-1) = {config.divisor} '
                         f'(depth_levels={config.depth_levels})')


def check_aligned(op, **tensors):
    items = list(tensors.items())
    ref_name, ref = items[0]
    for name, tensor in items[1:]:
        if tensor.shape[0] != ref.shape[0] or tensor.shape[2:] != ref.shape[2:]:
            raise ShapeError(f'{op}: {name} has shape {tensor.shape}, not aligned '
                             f'with {ref_name} of shape {ref.shape}')


class ResUNet(Module):
    '''UNet + ResNet hybrid body shared by DecomNet and AdjustNet.

    Each encoder level is a residual block (short hop) followed by a stride-2
    conv; each decoder level upsamples, concatenates the encoder features of
    the same level (long hop) and refines with a residual block.

    Attributes:
        deepest_shape (tuple): shape of the deepest feature map of the last forward
    '''

    def __init__(self, in_channels, config, rng):
        super().__init__()
        levels = config.depth_levels
        widths = [config.level_width(k) for k in range(levels)]
        self.config = config
        self.out_channels = widths[0]
        self.stem = Conv2d(in_channels, widths[0], rng)
        self.encoder = ModuleList(ResidualBlock(widths[k], rng) for k in range(levels))
        self.down = ModuleList(Conv2d(widths[k], widths[k + 1], rng, stride=2)
                               for k in range(levels - 1))
        self.decoder = ModuleList(
            UpBlock(widths[k + 1], widths[k], widths[k], config.upsample_mode, rng)
            for k in reversed(range(levels - 1)))
        self.deepest_shape = None

    def forward(self, x):
        h = F.relu(self.stem(x))
        skips = []
        for level, block in enumerate(self.encoder):
            h = block(h)
            if level < len(self.down):
                skips.append(h)
                h = F.relu(self.down[level](h))
        self.deepest_shape = h.shape
        for up, skip in zip(self.decoder, reversed(skips)):
            h = up(h, skip)
        return h


class DenseUNet(Module):
    '''One EnhanceNet branch: UNet whose encoder levels are dense blocks.

    A transition layer halves the channels and the resolution between
    levels; the decoder receives the pre-transition dense features of each
    level through skip concatenation.
    '''

    def __init__(self, in_channels, out_channels, config, rng, squash):
        super().__init__()
        levels = config.depth_levels
        width = config.base_channels
        self.squash = squash
        self.stem = Conv2d(in_channels, width, rng)
        self.blocks = ModuleList()
        self.transitions = ModuleList()
        skip_channels = []
        channels = width
        for level in range(levels):
            block = DenseBlock(channels, config.dense_growth, config.dense_layers, rng)
            self.blocks.append(block)
            channels = block.out_channels
            if level < levels - 1:
                skip_channels.append(channels)
                transition = Transition(channels, rng)
                self.transitions.append(transition)
                channels = transition.out_channels
        self.bottleneck = Conv2d(channels, width, rng, kernel_size=1)
        self.decoder = ModuleList(
            UpBlock(width, skip_channels[k], width, config.upsample_mode, rng, residual=False)
            for k in reversed(range(levels - 1)))
        self.head = Conv2d(width, out_channels, rng)
        self.deepest_shape = None

    def forward(self, x):
        h = F.relu(self.stem(x))
        skips = []
        for level, block in enumerate(self.blocks):
            h = block(h)
            if level < len(self.transitions):
                skips.append(h)
                h = self.transitions[level](h)
        self.deepest_shape = h.shape
        h = F.relu(self.bottleneck(h))
        for up, skip in zip(self.decoder, reversed(skips)):
            h = up(h, skip)
        out = self.head(h)
        return F.sigmoid(out) if self.squash else out


class DecomNet(Module):
    '''Retinex decomposition network.'''

    def __init__(self, config, rng):
        super().__init__()
        self.config = config
        self.body = ResUNet(4, config, rng)
        self.reflectance_head = Conv2d(self.body.out_channels, 3, rng)
        self.illumination_head = Conv2d(self.body.out_channels, 1, rng)

    @property
    def deepest_shape(self):
        return self.body.deepest_shape

    def forward(self, image):
        return decom_forward(self, image)


class EnhanceNet(Module):
    '''Three independent Dense-UNet branches.'''

    def __init__(self, config, rng):
        super().__init__()
        self.config = config
        self.hf_branch = DenseUNet(3, 3, config, rng, squash=False)
        self.reflectance_branch = DenseUNet(3, 3, config, rng, squash=True)
        self.illumination_branch = DenseUNet(1, 1, config, rng, squash=True)

    def forward(self, hf_low, decomp_low):
        return enhance_forward(self, hf_low, decomp_low)


class AdjustNet(Module):
    '''Refines the recomposed image from the enhanced triplet.'''

    def __init__(self, config, rng):
        super().__init__()
        self.config = config
        self.body = ResUNet(10, config, rng)
        self.head = Conv2d(self.body.out_channels, 3, rng)

    @property
    def deepest_shape(self):
        return self.body.deepest_shape

    def forward(self, enh):
        return adjust_forward(self, enh)


def decom_forward(net, image):
    '''Decompose an RGB image into reflectance and illumination.

    Arguments:
        net (DecomNet)
        image (Tensor or np.ndarray): N x 3 x H x W tensor or H x W x 3 array

    Returns:
        Decomposition
    '''

    x = to_tensor(image)
    if x.shape[1] != 3:
        raise ShapeError(f'decom_forward: expected 3 input channels, got {x.shape[1]}')
    check_divisible(x.shape, net.config, 'decom_forward')
    x = F.concat_channels([x, F.max_over_channels(x)])
    features = net.body(x)
    return Decomposition(reflectance=F.sigmoid(net.reflectance_head(features)),
                         illumination=F.sigmoid(net.illumination_head(features)))


def enhance_forward(net, hf_low, decomp_low):
    '''Run the three enhancement branches.

    Arguments:
        net (EnhanceNet)
        hf_low (Tensor or np.ndarray): high-frequency layer of the low-light image
        decomp_low (Decomposition): decomposition of the low-light image

    Returns:
        EnhanceOutput
    '''

    hf = to_tensor(hf_low)
    reflectance, illumination = decomp_low.reflectance, decomp_low.illumination
    check_aligned('enhance_forward', hf_low=hf, reflectance=reflectance,
                  illumination=illumination)
    check_divisible(hf.shape, net.config, 'enhance_forward')
    return EnhanceOutput(hf_enhanced=net.hf_branch(hf),
                         reflectance_enhanced=net.reflectance_branch(reflectance),
                         illumination_enhanced=net.illumination_branch(illumination))


def compose_retinex(decomp, hf=None):
    '''R o L + hf with the 1-channel illumination broadcast over RGB; no clamping.

    Arguments:
        decomp (Decomposition)
        hf (Tensor, np.ndarray or None): additive detail; None means zero

    Returns:
        Tensor: N x 3 x H x W
    '''

    product = F.mul(decomp.reflectance, decomp.illumination)
    if hf is None:
        return product
    hf = to_tensor(hf)
    check_aligned('compose_retinex', reflectance=decomp.reflectance, hf=hf)
    return F.add(product, hf)


def adjust_forward(net, enh):
    '''Final image from the enhanced triplet.

    Arguments:
        net (AdjustNet)
        enh (EnhanceOutput)

    Returns:
        Tensor: N x 3 x H x W in (0, 1)
    '''

    check_aligned('adjust_forward', hf_enhanced=enh.hf_enhanced,
                  reflectance_enhanced=enh.reflectance_enhanced,
                  illumination_enhanced=enh.illumination_enhanced)
    check_divisible(enh.hf_enhanced.shape, net.config, 'adjust_forward')
    candidate = compose_retinex(
        Decomposition(enh.reflectance_enhanced, enh.illumination_enhanced),
        enh.hf_enhanced)
    x = F.concat_channels([candidate, enh.hf_enhanced, enh.reflectance_enhanced,
                           enh.illumination_enhanced])
    return F.sigmoid(net.head(net.body(x)))


def build_networks(config, seed=0):
    '''Seeded DecomNet, EnhanceNet and AdjustNet for a configuration.

    Returns:
        tuple: (DecomNet, EnhanceNet, AdjustNet)
    '''

    decom = DecomNet(config, np.random.default_rng([seed, 0]))
    enhance = EnhanceNet(config, np.random.default_rng([seed, 1]))
    adjust = AdjustNet(config, np.random.default_rng([seed, 2]))
    logger.debug('Built networks: decom %d, enhance %d, adjust %d parameters',
                 decom.num_parameters(), enhance.num_parameters(),
                 adjust.num_parameters())
    return decom, enhance, adjust
