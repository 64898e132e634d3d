'''
DEANet Low-Light Enhancement Toolkit
PNG codec: 8-bit (v / 255) and 16-bit (v / 65535) input, 8-bit RGB output.

'''

import logging
from pathlib import Path

import cv2
import numpy as np
from PIL import Image, UnidentifiedImageError

from utilities.exceptions import DataError


logger = logging.getLogger(__name__)

SIXTEEN_BIT_MODES = ('I;16', 'I;16B', 'I;16L', 'I')
COLOUR_MODES = ('RGB', 'RGBA')


def _read_deep_colour(path):
    '''16-bit colour PNG as RGB in [0, 1], or None for any other image.

    Pillow decodes these at 8 bits per channel.
    '''

    pixels = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if pixels is None or pixels.dtype != np.uint16 or pixels.ndim != 3:
        return None
    rgb = cv2.cvtColor(pixels[:, :, :3], cv2.COLOR_BGR2RGB)
    logger.debug('Decoded %s as 16-bit colour', path)
    return rgb.astype(np.float64) / 65535.0


def read_png(path):
    '''Decode an image file to an H x W x 3 float64 array in [0, 1].

    Arguments:
        path (str or Path)

    Returns:
        np.ndarray
    '''

    path = Path(path)
    try:
        with Image.open(path) as img:
            img.load()
            if img.mode in SIXTEEN_BIT_MODES:
                grey = np.asarray(img, dtype=np.float64) / 65535.0
                return np.repeat(grey[:, :, None], 3, axis=2)
            if img.format == 'PNG' and img.mode in COLOUR_MODES:
                deep = _read_deep_colour(path)
                if deep is not None:
                    return deep
            return np.asarray(img.convert('RGB'), dtype=np.float64) / 255.0
    except (OSError, UnidentifiedImageError) as err:
        raise DataError(f'Cannot read image {path}: {err}') from err


def to_uint8(image):
    image = np.asarray(image, dtype=np.float64)
    return np.round(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)


def write_png(path, image):
    '''Encode an H x W x C (C in 1, 3) or H x W image in [0, 1] as an 8-bit PNG.

    Values are clamped to [0, 1] and rounded to the nearest level.
    '''

    path = Path(path)
    pixels = to_uint8(image)
    if pixels.ndim == 3 and pixels.shape[2] == 1:
        pixels = pixels[:, :, 0]
    if pixels.ndim == 3 and pixels.shape[2] != 3:
        raise DataError(f'Cannot write {path}: expected 1 or 3 channels, got {pixels.shape[2]}')
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(pixels, mode='L' if pixels.ndim == 2 else 'RGB').save(path, format='PNG')
    logger.debug('Wrote %s', path)
    return path
