'''
DEANet Low-Light Enhancement Toolkit
On-disk cache of WLS frequency splits, keyed by a hash of the image bytes
and the filter parameters.
'''

import hashlib
import logging
from dataclasses import asdict
from pathlib import Path

import numpy as np

from wls_split.wls_filter import FrequencySplit, WlsParams, frequency_split


logger = logging.getLogger(__name__)


class WlsCache:
    '''Stores FrequencySplit results as .npz files under a directory.

    Attributes:
        cache_dir (Path): directory holding the cached splits
        hits (int), misses (int): lookup counters
    '''

    def __init__(self, cache_dir):
        '''See help(WlsCache) for accurate signature.'''

        self.cache_dir = Path(cache_dir)
        self.cache_dir.mkdir(parents=True, exist_ok=True)
        self.hits = 0
        self.misses = 0

    @staticmethod
    def cache_key(image, params):
        '''SHA-256 over the float64 image bytes, its shape and the parameters.'''

        image = np.ascontiguousarray(image, dtype=np.float64)
        digest = hashlib.sha256()
        digest.update(repr(image.shape).encode())
        digest.update(image.tobytes())
        digest.update(repr(sorted(asdict(params).items())).encode())
        return digest.hexdigest()

    def split(self, image, params=None):
        '''Return the cached split of image, computing and storing it on a miss.

        Arguments:
            image (np.ndarray): H x W x C image
            params (WlsParams)

        Returns:
            FrequencySplit
        '''

        params = params or WlsParams()
        path = self.cache_dir / f'{self.cache_key(image, params)}.npz'
        if path.exists():
            self.hits += 1
            with np.load(path) as stored:
                return FrequencySplit(low_freq=stored['low_freq'],
                                      high_freq=stored['high_freq'],
                                      params=params)

        self.misses += 1
        result = frequency_split(image, params)
        np.savez(path, low_freq=result.low_freq, high_freq=result.high_freq)
        logger.debug('Cached WLS split %s', path.name)
        return result
