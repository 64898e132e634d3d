'''
DEANet Low-Light Enhancement Toolkit
Inference: the full chain WLS split -> DecomNet -> EnhanceNet -> AdjustNet
on images of any size (replicate-padded to the network divisor, cropped back).

'''

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from pipeline.training import CHECKPOINT_FILES
from retinex_nets.checkpoint import load_network
from retinex_nets.layers import Module
from retinex_nets.networks import (Decomposition, EnhanceOutput, adjust_forward,
                                   build_networks, compose_retinex, decom_forward,
                                   enhance_forward, to_image, to_tensor)
from tensor_core.tensor import default_dtype
from utilities.exceptions import CheckpointError, ShapeError
from wls_split.wls_filter import frequency_split


logger = logging.getLogger(__name__)


class NetworkBundle(NamedTuple):
    decom: Module
    enhance: Module
    adjust: Module


@dataclass
class EnhanceResult:
    '''Output of enhance_image.

    Attributes:
        final (np.ndarray): H x W x 3 in [0, 1]
        intermediates (dict): name -> H x W x C array; keys lf, hf,
            reflectance, illumination, hf_enhanced, reflectance_enhanced,
            illumination_enhanced (empty unless requested)
    '''

    final: np.ndarray
    intermediates: dict = field(default_factory=dict)


def load_networks(checkpoint_dir, config, names=('decom', 'enhance', 'adjust')):
    '''Networks of a checkpoint directory; networks not in names keep their
    seeded initialisation.

    Arguments:
        checkpoint_dir (str or Path): holds decom.dean, enhance.dean, adjust.dean;
            decom_joint.dean, when present, is loaded in place of decom.dean
        config (RunConfig)
        names (tuple of str): networks that must be loaded

    Returns:
        NetworkBundle
    '''

    checkpoint_dir = Path(checkpoint_dir)
    with default_dtype(config.train.precision):
        bundle = NetworkBundle(*build_networks(config.net, config.train.seed))
    for name in names:
        path = checkpoint_dir / CHECKPOINT_FILES[name]
        joint = checkpoint_dir / CHECKPOINT_FILES['decom_joint']
        if name == 'decom' and joint.exists():
            path = joint
        if not path.exists():
            raise CheckpointError(f'Missing checkpoint {path}')
        load_network(getattr(bundle, name), path)
    logger.info('Loaded %s from %s', ', '.join(names), checkpoint_dir)
    return bundle


def pad_to_multiple(image, divisor):
    '''Replicate-pad H and W up to multiples of divisor.

    Returns:
        tuple: (padded image, (H, W) of the original)
    '''

    h, w = image.shape[:2]
    pad_h, pad_w = -h % divisor, -w % divisor
    padded = np.pad(image, ((0, pad_h), (0, pad_w), (0, 0)), mode='edge')
    return padded, (h, w)


def decompose_image(image, bundle, config):
    '''Reflectance (H x W x 3) and illumination (H x W x 1) of an image.'''

    image = _check_image(image)
    padded, (h, w) = pad_to_multiple(image, config.net.divisor)
    low_freq = frequency_split(padded, config.wls).low_freq
    with default_dtype(config.train.precision):
        d = decom_forward(bundle.decom,
                          low_freq if config.net.decom_input == 'low_frequency' else padded)
    return to_image(d.reflectance)[:h, :w], to_image(d.illumination)[:h, :w]


def _check_image(image):
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ShapeError(f'Expected an H x W x 3 image, got shape {image.shape}')
    return image


def enhance_image(image, checkpoints, config, intermediates=False,
                  skip_enhance=False, skip_adjust=False):
    '''Enhance one low-light image.

    Arguments:
        image (np.ndarray): H x W x 3 in [0, 1], any H and W
        checkpoints (NetworkBundle or str or Path): loaded networks or a
            checkpoint directory
        config (RunConfig)
        intermediates (bool): also return the inner images
        skip_enhance (bool): feed the decomposition straight to the
            composition (EnhanceNet removed)
        skip_adjust (bool): return R o L + HF of the enhanced triplet
            (AdjustNet removed)

    Returns:
        EnhanceResult
    '''

    image = _check_image(image)
    if isinstance(checkpoints, (str, Path)):
        needed = ('decom',) + (() if skip_enhance else ('enhance',)) \
            + (() if skip_adjust else ('adjust',))
        checkpoints = load_networks(checkpoints, config, needed)

    padded, (h, w) = pad_to_multiple(image, config.net.divisor)
    split = frequency_split(padded, config.wls)
    with default_dtype(config.train.precision):
        decom_in = split.low_freq if config.net.decom_input == 'low_frequency' else padded
        d = decom_forward(checkpoints.decom, decom_in)
        if skip_enhance:
            enh = EnhanceOutput(to_tensor(split.high_freq), d.reflectance, d.illumination)
        else:
            enh = enhance_forward(checkpoints.enhance, split.high_freq, d)
        if skip_adjust:
            final = compose_retinex(Decomposition(enh.reflectance_enhanced,
                                                  enh.illumination_enhanced),
                                    enh.hf_enhanced)
        else:
            final = adjust_forward(checkpoints.adjust, enh)

    result = EnhanceResult(final=np.clip(to_image(final)[:h, :w].astype(np.float64), 0.0, 1.0))
    if intermediates:
        inner = {'lf': split.low_freq, 'hf': split.high_freq,
                 'reflectance': to_image(d.reflectance),
                 'illumination': to_image(d.illumination),
                 'hf_enhanced': to_image(enh.hf_enhanced),
                 'reflectance_enhanced': to_image(enh.reflectance_enhanced),
                 'illumination_enhanced': to_image(enh.illumination_enhanced)}
        result.intermediates = {name: np.asarray(value, dtype=np.float64)[:h, :w]
                                for name, value in inner.items()}
    return result
