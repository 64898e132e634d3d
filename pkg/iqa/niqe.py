'''
DEANet Low-Light Enhancement Toolkit
No-reference quality: NIQE natural-scene-statistics model and score.

Features: mean-subtracted contrast-normalised (MSCN) coefficients of the
0-255 luma, 18 generalised-Gaussian moment features per patch at full and
half resolution (36 per patch). The model is the multivariate Gaussian of
the sharp patches of a pristine corpus.

'''

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage, special

from iqa.metrics import luma
from retinex_nets.checkpoint import read_checkpoint, write_checkpoint
from utilities.decorators import time_it
from utilities.exceptions import CheckpointError, DataError


logger = logging.getLogger(__name__)

FEATURE_DIM = 36
MIN_CORPUS = 10
MIN_PATCHES = 4
COV_REGULARISATION = 1e-6
MSCN_C = 1.0

_GAMMA_RANGE = np.arange(0.2, 10, 0.001)
_RHO = special.gamma(2.0 / _GAMMA_RANGE) ** 2 / (
    special.gamma(1.0 / _GAMMA_RANGE) * special.gamma(3.0 / _GAMMA_RANGE))


@dataclass
class NiqeModel:
    '''Multivariate Gaussian of pristine patch features.

    Attributes:
        mean (np.ndarray): 36 float32 values
        cov (np.ndarray): 36 x 36 float32, symmetric
        patch_size (int): patch side at full resolution
        sharpness_fraction (float): share of peak sharpness used when fitting
    '''

    mean: np.ndarray
    cov: np.ndarray
    patch_size: int = 96
    sharpness_fraction: float = 0.75

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float32).reshape(-1)
        self.cov = np.asarray(self.cov, dtype=np.float32)
        if self.mean.shape != (FEATURE_DIM,) or self.cov.shape != (FEATURE_DIM, FEATURE_DIM):
            raise DataError(f'NiqeModel: expected a {FEATURE_DIM}-d mean and a '
                            f'{FEATURE_DIM}x{FEATURE_DIM} covariance, got '
                            f'{self.mean.shape} and {self.cov.shape}')
        if not 0 < self.sharpness_fraction <= 1:
            raise ValueError('NiqeModel: sharpness_fraction must lie in (0, 1], got '
                             f'{self.sharpness_fraction}')
        if self.patch_size < 4 or self.patch_size % 2:
            raise ValueError(f'NiqeModel: patch_size must be even and >= 4, got {self.patch_size}')


def gaussian_taps(half_width=3, sigma=7.0 / 6.0):
    offsets = np.arange(-half_width, half_width + 1, dtype=np.float64)
    taps = np.exp(-0.5 * offsets ** 2 / sigma ** 2)
    return taps / taps.sum()


def mscn(image):
    '''MSCN coefficients and local deviation of a 2-d 0-255 image.

    Returns:
        tuple: (coefficients, local standard deviation)
    '''

    taps = gaussian_taps()
    mu = ndimage.correlate1d(ndimage.correlate1d(image, taps, axis=0, mode='nearest'),
                             taps, axis=1, mode='nearest')
    second = ndimage.correlate1d(ndimage.correlate1d(image * image, taps, axis=0,
                                                     mode='nearest'),
                                 taps, axis=1, mode='nearest')
    sigma = np.sqrt(np.abs(second - mu * mu))
    return (image - mu) / (sigma + MSCN_C), sigma


def aggd_fit(values):
    '''Moment-matched asymmetric generalised Gaussian.

    Returns:
        tuple: (shape alpha, left std, right std); NaN when undefined
    '''

    values = values.ravel()
    squares = values * values
    left, right = squares[values < 0], squares[values >= 0]
    left_std = math.sqrt(left.mean()) if left.size else 0.0
    right_std = math.sqrt(right.mean()) if right.size else 0.0
    mean_square = squares.mean()
    if right_std == 0 or mean_square == 0:
        return math.nan, left_std, right_std
    gamma_hat = left_std / right_std
    r_hat = np.abs(values).mean() ** 2 / mean_square
    r_norm = r_hat * (gamma_hat ** 3 + 1) * (gamma_hat + 1) / (gamma_hat ** 2 + 1) ** 2
    alpha = float(_GAMMA_RANGE[np.argmin((_RHO - r_norm) ** 2)])
    return alpha, left_std, right_std


def _pair_products(coefficients):
    shifts = ((0, 1), (1, 0), (1, 1), (1, -1))
    return [coefficients * np.roll(coefficients, shift, axis=(0, 1)) for shift in shifts]


def patch_features(coefficients):
    '''The 18 features of one MSCN patch.'''

    alpha, left_std, right_std = aggd_fit(coefficients)
    features = [alpha, (left_std ** 2 + right_std ** 2) / 2]
    for product in _pair_products(coefficients):
        alpha, left_std, right_std = aggd_fit(product)
        if math.isnan(alpha):
            features.extend([math.nan] * 4)
            continue
        mean = ((right_std - left_std) * special.gamma(2 / alpha) / special.gamma(1 / alpha)
                * math.sqrt(special.gamma(1 / alpha)) / math.sqrt(special.gamma(3 / alpha)))
        features.extend([alpha, mean, left_std ** 2, right_std ** 2])
    return features


def image_features(image, patch_size):
    '''36-d features and mean sharpness of every full patch of an image.

    Arguments:
        image (np.ndarray): H x W x C in [0, 1]
        patch_size (int)

    Returns:
        tuple: (features P x 36, sharpness P); patches with undefined
            features are dropped
    '''

    grey = luma(image) * 255.0
    h, w = grey.shape
    if h < patch_size or w < patch_size:
        raise DataError(f'niqe: image of {h}x{w} pixels is smaller than the '
                        f'{patch_size}x{patch_size} patch')
    rows, cols = h // patch_size, w // patch_size
    grey = grey[:rows * patch_size, :cols * patch_size]
    full, sigma = mscn(grey)
    half, _ = mscn(ndimage.zoom(grey, 0.5, order=3, mode='nearest'))
    step = patch_size // 2

    features, sharpness = [], []
    for r in range(rows):
        for c in range(cols):
            window = (slice(r * patch_size, (r + 1) * patch_size),
                      slice(c * patch_size, (c + 1) * patch_size))
            small = half[r * step:(r + 1) * step, c * step:(c + 1) * step]
            row = patch_features(full[window]) + patch_features(small)
            if np.all(np.isfinite(row)):
                features.append(row)
                sharpness.append(float(sigma[window].mean()))
    return np.asarray(features, dtype=np.float64).reshape(-1, FEATURE_DIM), np.asarray(sharpness)


def sharp_patches(image, patch_size, sharpness_fraction):
    '''Features of the patches of one image sharper than sharpness_fraction
    of that image's sharpest patch.'''

    features, sharpness = image_features(image, patch_size)
    if sharpness.size == 0:
        return features
    return features[sharpness > sharpness_fraction * sharpness.max()]


@time_it
def niqe_fit(corpus, patch_size=96, sharpness_fraction=0.75):
    '''Fit a NIQE model on a pristine corpus.

    Arguments:
        corpus (list of np.ndarray): at least 10 images in [0, 1]
        patch_size (int): patch side
        sharpness_fraction (float): patches below this share of their own
            image's peak sharpness are discarded

    Returns:
        NiqeModel
    '''

    if len(corpus) < MIN_CORPUS:
        raise DataError(f'niqe_fit: the corpus holds {len(corpus)} images, '
                        f'at least {MIN_CORPUS} are needed')
    features = []
    for index, image in enumerate(corpus):
        try:
            features.append(sharp_patches(np.asarray(image, dtype=np.float64),
                                          patch_size, sharpness_fraction))
        except DataError as err:
            raise DataError(f'niqe_fit: corpus image {index}: {err}') from err
    features = np.concatenate(features)
    if len(features) < MIN_PATCHES:
        raise DataError(f'niqe_fit: only {len(features)} valid sharp patches, '
                        f'at least {MIN_PATCHES} are needed')
    logger.info('NIQE model fitted on %d patches from %d images', len(features), len(corpus))
    return NiqeModel(mean=features.mean(axis=0), cov=np.cov(features, rowvar=False),
                     patch_size=patch_size, sharpness_fraction=sharpness_fraction)


def niqe(image, model):
    '''NIQE score of an image against a fitted model (lower is better, >= 0).'''

    features, _ = image_features(np.asarray(image, dtype=np.float64), model.patch_size)
    if len(features) < MIN_PATCHES:
        raise DataError(f'niqe: the image has {len(features)} patches with defined '
                        f'statistics, at least {MIN_PATCHES} are needed')
    sample_mean = features.mean(axis=0)
    sample_cov = np.cov(features, rowvar=False)
    pooled = (model.cov.astype(np.float64) + sample_cov) / 2.0
    pooled += COV_REGULARISATION * np.eye(FEATURE_DIM)
    diff = sample_mean - model.mean.astype(np.float64)
    distance = float(diff @ np.linalg.pinv(pooled) @ diff)
    return math.sqrt(max(distance, 0.0))


def save_niqe_model(model, path):
    return write_checkpoint(path, {
        'niqe.mean': model.mean,
        'niqe.cov': model.cov,
        'niqe.patch_size': np.array([model.patch_size]),
        'niqe.sharpness_fraction': np.array([model.sharpness_fraction])})


def load_niqe_model(path):
    tensors = read_checkpoint(path)
    missing = [name for name in ('niqe.mean', 'niqe.cov') if name not in tensors]
    if missing:
        raise CheckpointError(f'{path}: not a NIQE model, missing {", ".join(missing)}')
    patch_size = int(tensors['niqe.patch_size'][0]) if 'niqe.patch_size' in tensors else 96
    fraction = (float(tensors['niqe.sharpness_fraction'][0])
                if 'niqe.sharpness_fraction' in tensors else 0.75)
    return NiqeModel(mean=tensors['niqe.mean'], cov=tensors['niqe.cov'],
                     patch_size=patch_size, sharpness_fraction=fraction)
