'''
DEANet Low-Light Enhancement Toolkit
Paired low-light / normal-light dataset: directory ingestion, deterministic
epoch order and paired random crops.

Layout: <root>/low/*.png and <root>/high/*.png, paired by file name.
'''

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from pipeline.image_io import read_png
from utilities.exceptions import DataError


logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ImagePair:
    name: str
    low_path: Path = None
    high_path: Path = None


class PairedDataset:
    '''Low/high image pairs held in memory.

    Attributes:
        pairs (list of ImagePair): in file-name order
        patch_size (int): side of training crops
        seed (int): drives epoch order, crop positions and flips
    '''

    def __init__(self, pairs, images, patch_size=192, seed=0):
        '''See help(PairedDataset) for accurate signature.'''

        self.pairs = list(pairs)
        self.images = list(images)
        self.patch_size = patch_size
        self.seed = seed
        if len(self.pairs) != len(self.images):
            raise DataError(f'{len(self.pairs)} pairs but {len(self.images)} loaded images')
        for pair, (low, high) in zip(self.pairs, self.images):
            if low.shape != high.shape:
                raise DataError(f'{pair.name}: low image is {low.shape[1]}x{low.shape[0]} '
                                f'but high image is {high.shape[1]}x{high.shape[0]}')

    @classmethod
    def from_arrays(cls, images, patch_size=192, seed=0, names=None):
        '''Dataset over in-memory (low, high) arrays.'''

        images = [(np.asarray(low, dtype=np.float64), np.asarray(high, dtype=np.float64))
                  for low, high in images]
        names = names or [f'pair_{i:03d}' for i in range(len(images))]
        return cls([ImagePair(name) for name in names], images, patch_size, seed)

    def __len__(self):
        return len(self.pairs)

    def __getitem__(self, index):
        '''(low, high) arrays of pair index.'''
        return self.images[index]

    def epoch_order(self, epoch):
        '''Pair indices of an epoch; a pure function of (seed, epoch).'''
        return np.random.default_rng([self.seed, epoch]).permutation(len(self.pairs))

    def sample(self, index, rng, flip=True):
        '''Aligned random crop (and optional horizontal flip) of one pair.

        Arguments:
            index (int): pair index
            rng (np.random.Generator): source of the crop position and flip
            flip (bool): allow horizontal flips

        Returns:
            tuple: (low crop, high crop), both patch_size x patch_size x 3
        '''

        low, high = self.images[index]
        return paired_crop(low, high, self.patch_size, rng, flip, self.pairs[index].name)


def paired_crop(low, high, size, rng, flip=True, name='pair'):
    h, w = low.shape[:2]
    if h < size or w < size:
        raise DataError(f'{name}: image of {w}x{h} pixels is smaller than the '
                        f'{size}x{size} training patch')
    top = int(rng.integers(0, h - size + 1))
    left = int(rng.integers(0, w - size + 1))
    mirror = flip and bool(rng.random() < 0.5)
    window = (slice(top, top + size), slice(left, left + size))
    low_crop, high_crop = low[window], high[window]
    if mirror:
        low_crop, high_crop = low_crop[:, ::-1], high_crop[:, ::-1]
    return np.ascontiguousarray(low_crop), np.ascontiguousarray(high_crop)


def _png_names(directory):
    return {path.name: path for path in sorted(directory.iterdir())
            if path.is_file() and path.suffix.lower() == '.png'}


def ingest(low_dir, high_dir, patch_size=192, seed=0):
    '''Pair and load the PNGs of two directories.

    Arguments:
        low_dir (str or Path): low-light images
        high_dir (str or Path): normal-light images with the same file names
        patch_size (int), seed (int): see PairedDataset

    Returns:
        PairedDataset
    '''

    low_dir, high_dir = Path(low_dir), Path(high_dir)
    for directory in (low_dir, high_dir):
        if not directory.is_dir():
            raise DataError(f'Dataset directory {directory} does not exist')

    low_files, high_files = _png_names(low_dir), _png_names(high_dir)
    for name in sorted(set(low_files) ^ set(high_files)):
        present, absent = (low_dir, high_dir) if name in low_files else (high_dir, low_dir)
        raise DataError(f'Unpaired file {present / name}: no {name} in {absent}')
    if not low_files:
        raise DataError(f'No PNG files found in {low_dir}')

    pairs, images = [], []
    for name in sorted(low_files):
        pair = ImagePair(name, low_files[name], high_files[name])
        low, high = read_png(pair.low_path), read_png(pair.high_path)
        if low.shape != high.shape:
            raise DataError(f'{pair.high_path}: {high.shape[1]}x{high.shape[0]} pixels, '
                            f'but {pair.low_path} is {low.shape[1]}x{low.shape[0]}')
        pairs.append(pair)
        images.append((low, high))
    logger.info('Ingested %d pairs from %s and %s', len(pairs), low_dir, high_dir)
    return PairedDataset(pairs, images, patch_size, seed)


def ingest_root(root, patch_size=192, seed=0):
    '''ingest(<root>/low, <root>/high).'''

    root = Path(root)
    return ingest(root / 'low', root / 'high', patch_size, seed)
