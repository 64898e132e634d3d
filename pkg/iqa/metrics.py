'''
DEANet Low-Light Enhancement Toolkit
Full-reference image quality metrics: PSNR, SSIM, FSIM, MAE, GMSD, and the
MetricReport that collects them (plus NIQE when a model is supplied).

Images are H x W x C arrays on the [0, 1] scale, sRGB-encoded; structural
metrics work on Rec. 601 luma without linearisation.
'''

import logging
import math
from dataclasses import asdict, dataclass, fields

import numpy as np
import pandas as pd
from scipy import signal

from utilities.exceptions import ShapeError


logger = logging.getLogger(__name__)

LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])

# FSIM constants on the 0-255 luma scale
FSIM_T1 = 0.85
FSIM_T2 = 160.0
SCHARR_X = np.array([[3, 0, -3], [10, 0, -10], [3, 0, -3]]) / 16.0
PREWITT_X = np.array([[1, 0, -1], [1, 0, -1], [1, 0, -1]]) / 3.0


@dataclass
class IqaConfig:
    '''Metric parameters (config section "iqa").

    Attributes:
        ssim_window (int), ssim_sigma (float): Gaussian window of SSIM
        ssim_k1 (float), ssim_k2 (float): SSIM stabilisers
        gmsd_c (float): GMSD stabiliser on the [0, 1] scale
        niqe_patch_size (int): NIQE patch side
        niqe_sharpness_fraction (float): share of peak sharpness a patch
            needs to enter a NIQE model fit
        workers (int): threads used by batch evaluation
    '''

    ssim_window: int = 11
    ssim_sigma: float = 1.5
    ssim_k1: float = 0.01
    ssim_k2: float = 0.03
    gmsd_c: float = 0.0026
    niqe_patch_size: int = 96
    niqe_sharpness_fraction: float = 0.75
    workers: int = 1


def _pair(name, a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f'{name}: image shapes differ, {a.shape} vs {b.shape}')
    return a, b


def luma(image):
    '''Rec. 601 luma of an H x W x 3 image; 1-channel and 2-d input pass through.'''

    image = np.asarray(image, dtype=np.float64)
    if image.ndim == 2:
        return image
    if image.shape[2] == 1:
        return image[:, :, 0]
    if image.shape[2] != 3:
        raise ShapeError(f'luma: expected 1 or 3 channels, got {image.shape[2]}')
    return image @ LUMA_WEIGHTS


def gaussian_window(size, sigma):
    offsets = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-offsets ** 2 / (2.0 * sigma ** 2))
    window = np.outer(g, g)
    return window / window.sum()


def psnr(a, b):
    '''Peak signal-to-noise ratio in dB with peak 1; +inf for identical images.'''

    a, b = _pair('psnr', a, b)
    mse = np.mean((a - b) ** 2)
    if mse == 0:
        return math.inf
    return float(10.0 * np.log10(1.0 / mse))


def mae(a, b):
    '''Mean absolute error over all elements (exactly rounded summation).'''

    a, b = _pair('mae', a, b)
    diff = np.abs(a - b).ravel()
    return math.fsum(diff) / max(diff.size, 1)


def ssim(a, b, window=11, sigma=1.5, k1=0.01, k2=0.03):
    '''Mean structural similarity of the luma channels.

    Local statistics use a normalised Gaussian window over 'valid' positions
    only; L = 1.
    '''

    a, b = _pair('ssim', a, b)
    x, y = luma(a), luma(b)
    if x.shape[0] < window or x.shape[1] < window:
        raise ShapeError(f'ssim: image of {x.shape[0]}x{x.shape[1]} pixels is smaller '
                         f'than the {window}x{window} window')
    w = gaussian_window(window, sigma)

    def filt(z):
        return signal.convolve2d(z, w, mode='valid')

    c1, c2 = k1 ** 2, k2 ** 2
    mu_x, mu_y = filt(x), filt(y)
    sigma_xx = filt(x * x) - mu_x * mu_x
    sigma_yy = filt(y * y) - mu_y * mu_y
    sigma_xy = filt(x * y) - mu_x * mu_y
    ssim_map = ((2 * mu_x * mu_y + c1) * (2 * sigma_xy + c2)
                / ((mu_x * mu_x + mu_y * mu_y + c1) * (sigma_xx + sigma_yy + c2)))
    return float(ssim_map.mean())


def _grid(n):
    if n % 2:
        return np.arange(-(n - 1) / 2, (n - 1) / 2 + 1) / max(n - 1, 1)
    return np.arange(-n / 2, n / 2) / n


def phase_congruency(image, nscale=4, norient=4, min_wavelength=6, mult=2.0,
                     sigma_onf=0.55, d_theta_on_sigma=1.2, k=2.0, epsilon=1e-4):
    '''Phase congruency map from a log-Gabor filter bank with noise compensation.

    Arguments:
        image (np.ndarray): 2-d intensities
        nscale, norient (int): filter bank size
        min_wavelength (float), mult (float): wavelength of the smallest
            scale and the ratio between successive scales
        sigma_onf (float): log-Gabor bandwidth
        d_theta_on_sigma (float): angular spacing over angular spread
        k (float): noise threshold in standard deviations
        epsilon (float): division stabiliser

    Returns:
        np.ndarray: values in [0, 1], same shape as image
    '''

    rows, cols = image.shape
    image_fft = np.fft.fft2(image)
    x, y = np.meshgrid(_grid(cols), _grid(rows))
    radius = np.fft.ifftshift(np.sqrt(x ** 2 + y ** 2))
    theta = np.fft.ifftshift(np.arctan2(-y, x))
    lowpass = 1.0 / (1.0 + (radius / 0.45) ** 30)
    radius[0, 0] = 1.0
    sin_theta, cos_theta = np.sin(theta), np.cos(theta)

    log_gabor = []
    for s in range(nscale):
        fo = 1.0 / (min_wavelength * mult ** s)
        lg = np.exp(-np.log(radius / fo) ** 2 / (2 * np.log(sigma_onf) ** 2)) * lowpass
        lg[0, 0] = 0.0
        log_gabor.append(lg)

    theta_sigma = np.pi / norient / d_theta_on_sigma
    energy_all = np.zeros((rows, cols))
    amplitude_all = np.zeros((rows, cols))
    for o in range(norient):
        angle = o * np.pi / norient
        ds = sin_theta * np.cos(angle) - cos_theta * np.sin(angle)
        dc = cos_theta * np.cos(angle) + sin_theta * np.sin(angle)
        spread = np.exp(-np.arctan2(ds, dc) ** 2 / (2 * theta_sigma ** 2))

        sum_e = np.zeros((rows, cols))
        sum_o = np.zeros((rows, cols))
        sum_an = np.zeros((rows, cols))
        responses, spatial_filters = [], []
        for s in range(nscale):
            bank = log_gabor[s] * spread
            spatial_filters.append(np.real(np.fft.ifft2(bank)) * np.sqrt(rows * cols))
            eo = np.fft.ifft2(image_fft * bank)
            responses.append(eo)
            sum_an += np.abs(eo)
            sum_e += eo.real
            sum_o += eo.imag
            if s == 0:
                em_n = np.sum(bank ** 2)

        x_energy = np.sqrt(sum_e ** 2 + sum_o ** 2) + epsilon
        mean_e, mean_o = sum_e / x_energy, sum_o / x_energy
        energy = np.zeros((rows, cols))
        for eo in responses:
            energy += (eo.real * mean_e + eo.imag * mean_o
                       - np.abs(eo.real * mean_o - eo.imag * mean_e))

        median_e2n = np.median(np.abs(responses[0]) ** 2)
        noise_power = (-median_e2n / np.log(0.5)) / em_n
        est_sum_an2 = sum(f ** 2 for f in spatial_filters)
        est_sum_ai_aj = sum(spatial_filters[i] * spatial_filters[j]
                            for i in range(nscale) for j in range(i + 1, nscale))
        est_noise_energy2 = (2 * noise_power * np.sum(est_sum_an2)
                             + 4 * noise_power * np.sum(est_sum_ai_aj))
        tau = np.sqrt(max(est_noise_energy2, 0.0) / 2)
        threshold = (tau * np.sqrt(np.pi / 2) + k * np.sqrt((2 - np.pi / 2) * tau ** 2)) / 1.7

        energy_all += np.maximum(energy - threshold, 0.0)
        amplitude_all += sum_an
    return energy_all / (amplitude_all + epsilon)


def _gradient_magnitude(image, kernel_x):
    gx = signal.convolve2d(image, kernel_x, mode='same', boundary='symm')
    gy = signal.convolve2d(image, kernel_x.T, mode='same', boundary='symm')
    return np.sqrt(gx ** 2 + gy ** 2)


def fsim(a, b):
    '''Feature similarity index of the luma channels, in (0, 1].

    Phase congruency and Scharr gradient-magnitude similarities are combined
    and pooled with max(PC_a, PC_b) weights.
    '''

    a, b = _pair('fsim', a, b)
    y1, y2 = luma(a) * 255.0, luma(b) * 255.0
    factor = max(1, round(min(y1.shape) / 256))
    if factor > 1:
        box = np.ones((factor, factor)) / factor ** 2
        y1 = signal.convolve2d(y1, box, mode='same', boundary='symm')[::factor, ::factor]
        y2 = signal.convolve2d(y2, box, mode='same', boundary='symm')[::factor, ::factor]

    pc1, pc2 = phase_congruency(y1), phase_congruency(y2)
    g1, g2 = _gradient_magnitude(y1, SCHARR_X), _gradient_magnitude(y2, SCHARR_X)
    pc_sim = (2 * pc1 * pc2 + FSIM_T1) / (pc1 ** 2 + pc2 ** 2 + FSIM_T1)
    g_sim = (2 * g1 * g2 + FSIM_T2) / (g1 ** 2 + g2 ** 2 + FSIM_T2)
    pc_max = np.maximum(pc1, pc2)
    weight = pc_max.sum()
    if weight == 0:
        if np.array_equal(y1, y2):
            return 1.0
        raise ValueError('fsim: undefined similarity, phase congruency is zero '
                         'everywhere in both images')
    return float(np.sum(pc_sim * g_sim * pc_max) / weight)


def gmsd(a, b, c=0.0026):
    '''Gradient magnitude similarity deviation of the luma channels (>= 0).

    Both images are 2x2 average-filtered and subsampled by 2 first; gradients
    use 3x3 Prewitt kernels. Borders are mirrored, so a shared brightness
    offset leaves the score unchanged.
    '''

    a, b = _pair('gmsd', a, b)
    box = np.ones((2, 2)) / 4.0
    y1 = signal.convolve2d(luma(a), box, mode='same', boundary='symm')[::2, ::2]
    y2 = signal.convolve2d(luma(b), box, mode='same', boundary='symm')[::2, ::2]
    if y1.size < 2:
        raise ShapeError(f'gmsd: image of shape {a.shape} is too small')
    g1, g2 = _gradient_magnitude(y1, PREWITT_X), _gradient_magnitude(y2, PREWITT_X)
    quality_map = (2 * g1 * g2 + c) / (g1 ** 2 + g2 ** 2 + c)
    return float(np.std(quality_map, ddof=1))


@dataclass
class MetricReport:
    '''The six quality scores of one image (pair).

    Attributes:
        psnr (float): dB, +inf for identical images
        ssim, fsim, mae, gmsd (float)
        niqe (float or None): only when a NIQE model was supplied
    '''

    psnr: float
    ssim: float
    fsim: float
    mae: float
    gmsd: float
    niqe: float = None

    def as_dict(self):
        return {name: value for name, value in asdict(self).items() if value is not None}

    @staticmethod
    def format_value(value):
        '''Three decimals; infinity as "inf".'''

        if value is None:
            return ''
        if math.isinf(value):
            return 'inf' if value > 0 else '-inf'
        return f'{value:.3f}'

    def to_frame(self):
        '''Two-column pandas DataFrame: metric, value (formatted).'''

        return pd.DataFrame([(name, self.format_value(value))
                             for name, value in self.as_dict().items()],
                            columns=['metric', 'value'])

    def __str__(self):
        width = max(len(f.name) for f in fields(self))
        return '\n'.join(f'{name:<{width}}  {self.format_value(value)}'
                         for name, value in self.as_dict().items())


def compute_report(output, reference, config=None, niqe_model=None):
    '''All full-reference metrics of output against reference, plus NIQE of
    output when niqe_model is given.

    Arguments:
        output (np.ndarray): H x W x C image
        reference (np.ndarray): same shape
        config (IqaConfig)
        niqe_model (NiqeModel or None)

    Returns:
        MetricReport
    '''

    config = config or IqaConfig()
    output, reference = _pair('compute_report', output, reference)
    report = MetricReport(
        psnr=psnr(output, reference),
        ssim=ssim(output, reference, window=config.ssim_window, sigma=config.ssim_sigma,
                  k1=config.ssim_k1, k2=config.ssim_k2),
        fsim=fsim(output, reference),
        mae=mae(output, reference),
        gmsd=gmsd(output, reference, c=config.gmsd_c))
    if niqe_model is not None:
        from iqa.niqe import niqe
        report.niqe = niqe(output, niqe_model)
    return report
