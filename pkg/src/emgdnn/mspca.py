"""Multiscale PCA denoising across a collection of windows.

Every window is wavelet-decomposed; for each band the coefficients of all
windows form an ``n_windows x band_length`` matrix.  PCA is fitted on that
matrix, only the dominant components are kept, and the windows are rebuilt
from the filtered bands.
"""
from dataclasses import dataclass, field

import numpy as np

from .errors import BadInput, ShapeMismatch, TooFewRows
from .signal_core import Window, stack_windows
from .wavelet import WaveletFilter, dwt_multilevel, idwt_multilevel, make_filter

# Gram path: eigenvalues below this fraction of the largest one are treated
# as numerically zero and are not turned into components.
GRAM_RTOL = 1e-13
# residual level, relative to the largest centred entry, treated as rounding
RESID_RTOL = 1e-11


@dataclass
class PcaModel:
    """PCA of a data matrix.

    ``components`` has one orthonormal basis vector per row, sorted by
    descending eigenvalue.  ``eigenvalues`` holds all ``min(n, d)`` sample
    covariance eigenvalues (divisor ``n - 1``) and may be longer than
    ``components`` when the Gram path drops numerically null directions.
    """

    mean_vector: np.ndarray
    components: np.ndarray
    eigenvalues: np.ndarray
    n_retained: int = 0

    @property
    def n_components(self):
        return self.components.shape[0]

    def with_retained(self, k):
        if not 0 <= k <= self.n_components:
            raise ValueError(f"n_retained must be in [0, {self.n_components}], got {k}")
        return PcaModel(self.mean_vector, self.components, self.eigenvalues, int(k))


def _fix_signs(vectors):
    # first entry with non-negligible magnitude is made positive, row-wise
    mags = np.abs(vectors)
    thresh = 1e-12 * mags.max(axis=1, keepdims=True)
    first = np.argmax(mags > thresh, axis=1)
    signs = np.sign(vectors[np.arange(len(vectors)), first])
    signs[signs == 0] = 1.0
    return vectors * signs[:, None]


def _reorthonormalise(v):
    # one Cholesky-QR pass: vectors mapped back from the Gram eigenbasis lose
    # orthogonality roughly in proportion to the eigenvalue spread
    if v.shape[1] == 0:
        return v
    try:
        chol = np.linalg.cholesky(v.T @ v)
        return np.linalg.solve(chol, v.T).T
    except np.linalg.LinAlgError:
        q, r = np.linalg.qr(v)
        return q * np.sign(np.diag(r))


def _gram_basis(xc):
    n = xc.shape[0]
    w, u = np.linalg.eigh(xc @ xc.T / (n - 1))
    order = np.argsort(w)[::-1]
    w = np.clip(w[order], 0.0, None)
    u = u[:, order]
    k = int(np.count_nonzero(w > GRAM_RTOL * w[0])) if w[0] > 0 else 0
    return w, _reorthonormalise((xc.T @ u[:, :k]) / np.sqrt((n - 1) * w[:k]))


def _gram_pca(xc):
    """PCA of a wide centred matrix through its n x n Gram matrix."""
    n, d = xc.shape
    w, basis = _gram_basis(xc)
    scale = np.max(np.abs(xc))
    # Directions far below the leading one are invisible in the Gram spectrum.
    # Deflate and look again until what is left is rounding noise.
    extra = False
    for _ in range(4):
        if basis.shape[1] >= n - 1:
            break
        resid = xc - (xc @ basis) @ basis.T
        if np.max(np.abs(resid)) <= RESID_RTOL * scale:
            break
        _, more = _gram_basis(resid)
        if more.shape[1] == 0:
            break
        basis = _reorthonormalise(np.hstack([basis, more]))
        extra = True
    if not extra:
        return w, basis.T
    # Rayleigh-Ritz on the combined basis restores order and eigenvalues
    proj = xc @ basis
    rw, rv = np.linalg.eigh(proj.T @ proj / (n - 1))
    order = np.argsort(rw)[::-1]
    rw = np.clip(rw[order], 0.0, None)
    w = np.zeros(min(n, d))
    w[: len(rw)] = rw
    return w, (basis @ rv[:, order]).T


def pca_fit(matrix):
    x = np.asarray(matrix, dtype=np.float64)
    if x.ndim != 2:
        raise BadInput(f"expected a 2-D matrix, got shape {x.shape}")
    n, d = x.shape
    if n < 2:
        raise TooFewRows(f"PCA needs at least 2 rows, got {n}")
    if d < 1:
        raise BadInput("PCA needs at least one column")
    if not np.all(np.isfinite(x)):
        raise BadInput("matrix contains non-finite entries")

    mean = x.mean(axis=0)
    xc = x - mean
    if d <= n:
        cov = xc.T @ xc / (n - 1)
        w, v = np.linalg.eigh(cov)
        order = np.argsort(w)[::-1]
        w = np.clip(w[order], 0.0, None)
        comps = v[:, order].T
    else:
        w, comps = _gram_pca(xc)
    comps = _fix_signs(comps) if len(comps) else comps.reshape(0, d)
    return PcaModel(mean_vector=mean, components=comps, eigenvalues=w, n_retained=len(comps))


def pca_denoise(matrix, model):
    """Project centred rows onto the first ``n_retained`` components and back."""
    x = np.asarray(matrix, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.mean_vector.shape[0]:
        raise ShapeMismatch(
            f"matrix shape {x.shape} does not match a model of "
            f"{model.mean_vector.shape[0]} columns"
        )
    basis = model.components[: model.n_retained]
    xc = x - model.mean_vector
    return (xc @ basis.T) @ basis + model.mean_vector


def kaiser_count(eigenvalues):
    """Number of eigenvalues strictly above their mean."""
    w = np.asarray(eigenvalues)
    return int(np.count_nonzero(w > w.mean()))


def fraction_count(eigenvalues, p):
    """Smallest k whose leading eigenvalues explain at least ``p`` of the variance."""
    w = np.asarray(eigenvalues)
    total = w.sum()
    if p >= 1.0 or total <= 0:
        return len(w)
    return int(np.searchsorted(np.cumsum(w), p * total) + 1)


@dataclass
class MspcaConfig:
    filter: WaveletFilter = field(default_factory=lambda: make_filter("db4"))
    levels: int = 6
    retention: str = "kaiser"  # "kaiser" or "fraction"
    fraction: float = 1.0

    def __post_init__(self):
        if isinstance(self.filter, str):
            self.filter = make_filter(self.filter)
        if self.levels < 1:
            raise ValueError("levels must be >= 1")
        if self.retention not in ("kaiser", "fraction"):
            raise ValueError(f"unknown retention rule {self.retention!r}")
        if not 0.0 < self.fraction <= 1.0:
            raise ValueError("fraction must be in (0, 1]")

    def n_retained(self, model):
        if self.retention == "kaiser":
            k = kaiser_count(model.eigenvalues)
        else:
            k = fraction_count(model.eigenvalues, self.fraction)
        return min(k, model.n_components)


def mspca_denoise_array(samples, config):
    """Array form of :func:`mspca_denoise`; rows are windows."""
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise TooFewRows("MSPCA needs at least 2 windows")
    decomp = dwt_multilevel(x, config.filter, config.levels)
    cleaned = []
    for band in decomp.bands():
        model = pca_fit(band)
        model = model.with_retained(config.n_retained(model))
        cleaned.append(pca_denoise(band, model))
    decomp.details = cleaned[:-1]
    decomp.approximation = cleaned[-1]
    return idwt_multilevel(decomp)


def mspca_denoise(windows, config=None):
    config = config or MspcaConfig()
    if len(windows) < 2:
        raise TooFewRows(f"MSPCA needs at least 2 windows, got {len(windows)}")
    samples, labels = stack_windows(windows)
    out = mspca_denoise_array(samples, config)
    return [Window(row, label) for row, label in zip(out, labels)]
