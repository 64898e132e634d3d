'''
DEANet Low-Light Enhancement Toolkit
Training losses of the three sub-networks.

    decomposition: 0.01 * L_r + L_recon_low + L_recon_high
                   + 0.001 * (L_recon_low_mutual + L_recon_high_mutual)
    enhancement:   L_enhance = L_HF + L_en_r + L_en_l
    joint:         0.1 * L_enhance + L_colour + L_content

Every term is a mean-reduced L1 distance, so magnitudes do not depend on
the image resolution.

'''

import logging
import warnings
from dataclasses import dataclass, field
from typing import NamedTuple

from losses.feature_extractor import DEFAULT_TAPS, FeatureExtractor
from retinex_nets.networks import to_tensor
from tensor_core import functional as F
from tensor_core.tensor import Tensor
from utilities.exceptions import ShapeError


logger = logging.getLogger(__name__)

REFLECTANCE_WEIGHT = 0.01
MUTUAL_WEIGHT = 0.001
ENHANCE_WEIGHT = 0.1
DECOM_TARGETS = ('low_frequency', 'full')


@dataclass
class LossConfig:
    '''Loss settings (config section "loss").

    Attributes:
        content_taps (list of int): feature-extractor stages compared by L_content
        decom_target (str): 'low_frequency' or 'full'; which image the
            decomposition reconstruction terms are measured against
        extractor_weights (str): optional DEAN file with exported conv
            weights; empty means the seeded default extractor
        extractor_seed (int): seed of the default extractor
    '''

    content_taps: list = field(default_factory=lambda: list(DEFAULT_TAPS))
    decom_target: str = 'low_frequency'
    extractor_weights: str = ''
    extractor_seed: int = 0

    def __post_init__(self):
        if self.decom_target not in DECOM_TARGETS:
            raise ValueError(f'loss.decom_target must be one of {DECOM_TARGETS}, '
                             f'got {self.decom_target!r}')

    def build_extractor(self):
        if self.extractor_weights:
            return FeatureExtractor.from_checkpoint(self.extractor_weights,
                                                    taps=self.content_taps)
        return FeatureExtractor(taps=self.content_taps, seed=self.extractor_seed)


class DecomSample(NamedTuple):
    '''One exposure as seen by the decomposition loss: target image, R and L.'''

    image: Tensor
    reflectance: Tensor
    illumination: Tensor


class EnhanceTargets(NamedTuple):
    '''Normal-light targets of the three enhancement branches.'''

    hf_high: Tensor
    reflectance_high: Tensor
    illumination_high: Tensor


class EnhanceLossTerms(NamedTuple):
    l_hf: Tensor
    l_en_r: Tensor
    l_en_l: Tensor
    l_enhance: Tensor


def _values(terms):
    return {name: float(value.item()) for name, value in terms.items()}


@dataclass
class DecomLossTerms:
    '''Decomposition loss terms; total is the weighted sum.'''

    l_r: Tensor
    l_recon_low: Tensor
    l_recon_high: Tensor
    l_recon_low_mutual: Tensor
    l_recon_high_mutual: Tensor
    total: Tensor

    def as_dict(self):
        return _values(vars(self))


@dataclass
class JointLossTerms:
    '''Enhancement + adjustment loss terms; total is the weighted sum.'''

    l_hf: Tensor
    l_en_r: Tensor
    l_en_l: Tensor
    l_enhance: Tensor
    l_colour: Tensor
    l_content: Tensor
    total: Tensor

    def as_dict(self):
        return _values(vars(self))


def _check_same(op, **tensors):
    items = list(tensors.items())
    ref_name, ref = items[0]
    for name, tensor in items[1:]:
        if tensor.shape != ref.shape:
            raise ShapeError(f'{op}: {name} has shape {tensor.shape} but '
                             f'{ref_name} has shape {ref.shape}')


def decom_loss(low, high):
    '''Decomposition loss over a low-light / normal-light pair.

    Arguments:
        low (DecomSample): target image, R_low, L_low
        high (DecomSample): target image, R_high, L_high

    Returns:
        DecomLossTerms
    '''

    image_low, image_high = to_tensor(low.image), to_tensor(high.image)
    _check_same('decom_loss', image_low=image_low, image_high=image_high,
                reflectance_low=low.reflectance, reflectance_high=high.reflectance)
    _check_same('decom_loss', illumination_low=low.illumination,
                illumination_high=high.illumination)

    l_r = F.l1_loss(low.reflectance, high.reflectance)
    l_recon_low = F.l1_loss(F.mul(low.reflectance, low.illumination), image_low)
    l_recon_high = F.l1_loss(F.mul(high.reflectance, high.illumination), image_high)
    l_recon_low_mutual = F.l1_loss(F.mul(high.reflectance, low.illumination), image_low)
    l_recon_high_mutual = F.l1_loss(F.mul(low.reflectance, high.illumination), image_high)

    total = F.add(F.add(F.scale(l_r, REFLECTANCE_WEIGHT), l_recon_low), l_recon_high)
    total = F.add(total, F.scale(F.add(l_recon_low_mutual, l_recon_high_mutual),
                                 MUTUAL_WEIGHT))
    return DecomLossTerms(l_r=l_r, l_recon_low=l_recon_low, l_recon_high=l_recon_high,
                          l_recon_low_mutual=l_recon_low_mutual,
                          l_recon_high_mutual=l_recon_high_mutual, total=total)


def enhance_loss(out, targets):
    '''L1 terms between each enhancement branch and its normal-light target.

    Arguments:
        out (EnhanceOutput)
        targets (EnhanceTargets)

    Returns:
        EnhanceLossTerms: (l_hf, l_en_r, l_en_l, l_enhance)
    '''

    hf_high = to_tensor(targets.hf_high)
    _check_same('enhance_loss', hf_enhanced=out.hf_enhanced, hf_high=hf_high)
    _check_same('enhance_loss', reflectance_enhanced=out.reflectance_enhanced,
                reflectance_high=targets.reflectance_high)
    _check_same('enhance_loss', illumination_enhanced=out.illumination_enhanced,
                illumination_high=targets.illumination_high)

    l_hf = F.l1_loss(out.hf_enhanced, hf_high)
    l_en_r = F.l1_loss(out.reflectance_enhanced, targets.reflectance_high)
    l_en_l = F.l1_loss(out.illumination_enhanced, targets.illumination_high)
    l_enhance = F.add(F.add(l_hf, l_en_r), l_en_l)
    return EnhanceLossTerms(l_hf, l_en_r, l_en_l, l_enhance)


def content_loss(generated, reference, fx):
    '''Mean L1 distance between tapped feature activations.

    The reference branch is detached, so gradients only reach `generated`.

    Arguments:
        generated (Tensor): N x 3 x H x W
        reference (Tensor or np.ndarray): same shape
        fx (FeatureExtractor)

    Returns:
        Tensor: scalar
    '''

    generated, reference = to_tensor(generated), to_tensor(reference).detach()
    _check_same('content_loss', generated=generated, reference=reference)
    if generated.shape[1] != 3:
        raise ShapeError(f'content_loss: expected 3-channel images, got {generated.shape[1]}')
    if not fx.taps:
        warnings.warn('content_loss: the feature extractor has no taps; '
                      'L_content is defined as 0', RuntimeWarning, stacklevel=2)
        return Tensor(0.0, dtype=generated.dtype)

    distances = [F.l1_loss(gen, ref)
                 for gen, ref in zip(fx(generated), fx(reference))]
    total = distances[0]
    for distance in distances[1:]:
        total = F.add(total, distance)
    return F.scale(total, 1.0 / len(distances))


def joint_loss(final, reference, enhance_terms, fx):
    '''Joint loss of AdjustNet; its gradient also reaches EnhanceNet.

    Arguments:
        final (Tensor): AdjustNet output
        reference (Tensor or np.ndarray): normal-light image
        enhance_terms (EnhanceLossTerms)
        fx (FeatureExtractor)

    Returns:
        JointLossTerms
    '''

    reference = to_tensor(reference)
    _check_same('joint_loss', final=final, reference=reference)
    l_colour = F.l1_loss(final, reference)
    l_content = content_loss(final, reference, fx)
    total = F.add(F.add(F.scale(enhance_terms.l_enhance, ENHANCE_WEIGHT), l_colour),
                  l_content)
    return JointLossTerms(l_hf=enhance_terms.l_hf, l_en_r=enhance_terms.l_en_r,
                          l_en_l=enhance_terms.l_en_l,
                          l_enhance=enhance_terms.l_enhance,
                          l_colour=l_colour, l_content=l_content, total=total)
