'''
DEANet Low-Light Enhancement Toolkit
Edge-preserving weighted-least-squares (WLS) smoothing, and the split of an
image into a low-frequency base and a high-frequency detail layer.

The base u minimises
    E(u) = sum_p (u_p - g_p)^2 + lambda * sum_p (w_x,p (d_x u)_p^2 + w_y,p (d_y u)_p^2)
with guide weights w = (|d l|^alpha + eps)^-1 taken from the log-luminance l
of the input. Differences across the image border are zero (replicate
padding), so the normal equations (I + lambda * L_g) u = g form a symmetric
positive-definite 5-point system, solved matrix-free with Jacobi-
preconditioned conjugate gradients.

'''

import logging
from dataclasses import asdict, dataclass

import numpy as np
from scipy import sparse

from utilities.exceptions import ShapeError, SolverDivergenceError


logger = logging.getLogger(__name__)

LUMA_WEIGHTS = (0.299, 0.587, 0.114)
LOG_FLOOR = 1e-4
DENSE_ORACLE_MAX_PIXELS = 16 * 16


@dataclass(frozen=True)
class WlsParams:
    '''WLS filter parameters (config section "wls"; lam is "wls.lambda").

    Attributes:
        lam (float): smoothness weight lambda >= 0
        alpha (float): gradient exponent of the guide weights
        eps (float): stabiliser of the guide weights
        weights_from (str): 'luminance' (weights shared by all channels) or
            'channel' (each channel guides itself)
        tol (float): relative residual at which PCG stops
        max_iter_factor (int): iteration cap is max_iter_factor * H * W
    '''

    lam: float = 1.0
    alpha: float = 1.2
    eps: float = 1e-4
    weights_from: str = 'luminance'
    tol: float = 1e-8
    max_iter_factor: int = 10

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError(f'wls.lambda must be >= 0, got {self.lam}')
        if self.alpha <= 0 or self.eps <= 0:
            raise ValueError(f'wls.alpha and wls.eps must be > 0, got '
                             f'{self.alpha} and {self.eps}')
        if self.weights_from not in ('luminance', 'channel'):
            raise ValueError("wls.weights_from must be 'luminance' or 'channel', "
                             f'got {self.weights_from!r}')


@dataclass
class FrequencySplit:
    '''Base / detail decomposition of an image; low_freq + high_freq == input.

    Attributes:
        low_freq (np.ndarray): H x W x C smoothed base
        high_freq (np.ndarray): H x W x C signed detail, input - low_freq
        params (WlsParams)
    '''

    low_freq: np.ndarray
    high_freq: np.ndarray
    params: WlsParams


def luminance(image):
    '''Rec. 601 luma of an H x W x 3 image; single-channel input is returned as is.'''

    image = np.asarray(image, dtype=np.float64)
    if image.ndim == 2:
        return image
    if image.shape[2] == 1:
        return image[:, :, 0]
    if image.shape[2] != 3:
        raise ShapeError(f'luminance: expected 1 or 3 channels, got {image.shape[2]}')
    return image @ np.array(LUMA_WEIGHTS)


def guide_weights(guide, alpha, eps):
    '''Horizontal and vertical smoothness weights from a guide image.

    Arguments:
        guide (np.ndarray): H x W intensities (luma or a single channel)
        alpha (float), eps (float): see WlsParams

    Returns:
        tuple: (w_x of shape H x (W-1), w_y of shape (H-1) x W)
    '''

    log_guide = np.log(np.maximum(guide, LOG_FLOOR))
    w_x = 1.0 / (np.abs(np.diff(log_guide, axis=1)) ** alpha + eps)
    w_y = 1.0 / (np.abs(np.diff(log_guide, axis=0)) ** alpha + eps)
    return w_x, w_y


def apply_operator(u, w_x, w_y, lam):
    '''Matrix-free product (I + lam * (D_x' W_x D_x + D_y' W_y D_y)) u.'''

    out = u.copy()
    if lam == 0:
        return out
    flux_x = w_x * np.diff(u, axis=1)
    flux_y = w_y * np.diff(u, axis=0)
    smooth = np.zeros_like(u)
    smooth[:, :-1] -= flux_x
    smooth[:, 1:] += flux_x
    smooth[:-1, :] -= flux_y
    smooth[1:, :] += flux_y
    return out + lam * smooth


def operator_diagonal(w_x, w_y, lam):
    h, w = w_y.shape[0] + 1, w_x.shape[1] + 1
    diag = np.zeros((h, w))
    diag[:, :-1] += w_x
    diag[:, 1:] += w_x
    diag[:-1, :] += w_y
    diag[1:, :] += w_y
    return 1.0 + lam * diag


def wls_energy(u, g, w_x, w_y, lam):
    '''Value of the WLS energy for candidate u and data g.'''

    data = np.sum((u - g) ** 2)
    smooth = np.sum(w_x * np.diff(u, axis=1) ** 2) + np.sum(w_y * np.diff(u, axis=0) ** 2)
    return float(data + lam * smooth)


def assemble_operator(w_x, w_y, lam):
    '''Explicit sparse 5-point matrix of the WLS normal equations (row-major pixels).'''

    h, w = w_y.shape[0] + 1, w_x.shape[1] + 1
    size = h * w
    main = operator_diagonal(w_x, w_y, lam).ravel()
    off_x = np.zeros((h, w))
    off_x[:, :-1] = -lam * w_x
    off_y = -lam * w_y.ravel()
    off_x = off_x.ravel()[:-1]
    return sparse.diags([main, off_x, off_x, off_y, off_y],
                        [0, 1, -1, w, -w], shape=(size, size), format='csr')


def pcg_solve(apply_a, b, diag, tol=1e-8, max_iter=None):
    '''Jacobi-preconditioned conjugate gradients for an SPD operator.

    Arguments:
        apply_a (callable): array -> A @ array (same shape as b)
        b (np.ndarray): right-hand side
        diag (np.ndarray): diagonal of A, same shape as b
        tol (float): required true relative residual ||A x - b|| / ||b||
        max_iter (int): iteration cap (default 10 * b.size)

    Returns:
        tuple: (x, relative residual, iterations)
    '''

    max_iter = max_iter or 10 * b.size
    b_norm = np.linalg.norm(b)
    x = b.copy()
    if b_norm == 0:
        return x, 0.0, 0

    r = b - apply_a(x)
    residual = np.linalg.norm(r) / b_norm
    iterations = 0
    while residual >= tol and iterations < max_iter:
        z = r / diag
        p = z.copy()
        rz = np.vdot(r, z)
        while iterations < max_iter:
            iterations += 1
            ap = apply_a(p)
            step = rz / np.vdot(p, ap)
            x += step * p
            r -= step * ap
            if np.linalg.norm(r) / b_norm < tol:
                break
            z = r / diag
            rz_next = np.vdot(r, z)
            p = z + (rz_next / rz) * p
            rz = rz_next
        # recurrence residuals drift; restart from the true residual
        r = b - apply_a(x)
        residual = np.linalg.norm(r) / b_norm

    if residual >= tol:
        raise SolverDivergenceError(
            f'WLS solver did not converge in {iterations} iterations '
            f'(relative residual {residual:.3e}, tolerance {tol:.1e})',
            residual=residual, iterations=iterations)
    return x, residual, iterations


def _as_hwc(image):
    image = np.asarray(image, dtype=np.float64)
    if image.ndim == 2:
        return image[:, :, None], True
    if image.ndim != 3:
        raise ShapeError(f'WLS input must be H x W or H x W x C, got shape {image.shape}')
    return image, False


def _channel_guides(image, weights_from):
    if weights_from == 'luminance' and image.shape[2] in (1, 3):
        luma = luminance(image)
        return [luma] * image.shape[2]
    return [image[:, :, c] for c in range(image.shape[2])]


def wls_base(image, lam=1.0, alpha=1.2, eps=1e-4, weights_from='luminance',
             tol=1e-8, max_iter_factor=10):
    '''Low-frequency base layer of an image via the WLS filter.

    Arguments:
        image (np.ndarray): H x W x C (or H x W) finite values
        lam, alpha, eps, weights_from, tol, max_iter_factor: see WlsParams

    Returns:
        np.ndarray: float64 base with the input's shape
    '''

    hwc, squeeze = _as_hwc(image)
    if not np.all(np.isfinite(hwc)):
        raise ValueError('WLS input contains non-finite values')
    if lam == 0:
        return np.array(image, dtype=np.float64, copy=True)

    h, w, channels = hwc.shape
    base = np.empty_like(hwc)
    for c, guide in enumerate(_channel_guides(hwc, weights_from)):
        w_x, w_y = guide_weights(guide, alpha, eps)
        diag = operator_diagonal(w_x, w_y, lam)
        base[:, :, c], residual, iterations = pcg_solve(
            lambda u: apply_operator(u, w_x, w_y, lam), hwc[:, :, c], diag,
            tol=tol, max_iter=max_iter_factor * h * w)
        logger.debug('WLS channel %d: %d iterations, residual %.2e',
                     c, iterations, residual)
    return base[:, :, 0] if squeeze else base


def wls_dense_solve(image, lam=1.0, alpha=1.2, eps=1e-4, weights_from='luminance'):
    '''Direct dense solve of the WLS system; reference oracle for small images.'''

    hwc, squeeze = _as_hwc(image)
    h, w, _ = hwc.shape
    if h * w > DENSE_ORACLE_MAX_PIXELS:
        raise ShapeError(f'wls_dense_solve is limited to 16x16 pixels, got {h}x{w}')
    base = np.empty_like(hwc)
    for c, guide in enumerate(_channel_guides(hwc, weights_from)):
        w_x, w_y = guide_weights(guide, alpha, eps)
        matrix = assemble_operator(w_x, w_y, lam).toarray()
        base[:, :, c] = np.linalg.solve(matrix, hwc[:, :, c].ravel()).reshape(h, w)
    return base[:, :, 0] if squeeze else base


def frequency_split(image, params=None):
    '''Split an image into WLS base (low_freq) and residual detail (high_freq).

    Arguments:
        image (np.ndarray): H x W x C image
        params (WlsParams): filter parameters, defaults if None

    Returns:
        FrequencySplit
    '''

    params = params or WlsParams()
    image = np.asarray(image, dtype=np.float64)
    low = wls_base(image, **asdict(params))
    return FrequencySplit(low_freq=low, high_freq=image - low, params=params)
