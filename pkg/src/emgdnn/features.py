"""Statistical descriptors of a 6-level wavelet decomposition.

Feature layout (27 columns, band order D1, D2, D3, D4, D5, D6, A6):

    f01-f07  band means
    f08-f14  band average powers
    f15-f21  band standard deviations (population, divisor n)
    f22-f27  ratios of neighbouring band means: D1/D2, D2/D3, D3/D4, D4/D5,
             D5/D6, D6/A6

By default the ratios divide mean absolute values with a 1e-12 guard in the
denominator; ``signed_ratio=True`` divides the plain signed means instead.
"""
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import BadDecomposition, EmptyBand
from .signal_core import N_FEATURES, ClassLabel, Dataset, stack_windows
from .wavelet import BAND_NAMES_6, dwt_multilevel, make_filter

RATIO_EPS = 1e-12
N_BANDS = 7

FEATURE_NAMES = (
    tuple(f"mean_{b}" for b in BAND_NAMES_6)
    + tuple(f"power_{b}" for b in BAND_NAMES_6)
    + tuple(f"std_{b}" for b in BAND_NAMES_6)
    + tuple(f"ratio_{a}_{b}" for a, b in zip(BAND_NAMES_6, BAND_NAMES_6[1:]))
)


def _band(coeffs):
    c = np.asarray(coeffs, dtype=np.float64)
    if c.shape[-1] == 0:
        raise EmptyBand("empty coefficient band")
    return c


def band_mean(coeffs):
    return np.mean(_band(coeffs), axis=-1)


def band_power(coeffs):
    c = _band(coeffs)
    return np.sum(c * c, axis=-1) / c.shape[-1]


def band_std(coeffs):
    c = _band(coeffs)
    mu = np.mean(c, axis=-1, keepdims=True)
    return np.sqrt(np.sum((c - mu) ** 2, axis=-1) / c.shape[-1])


def band_ratio(numerator_band, denominator_band, signed=False):
    num = _band(numerator_band)
    den = _band(denominator_band)
    if signed:
        return np.mean(num, axis=-1) / np.mean(den, axis=-1)
    return np.mean(np.abs(num), axis=-1) / (np.mean(np.abs(den), axis=-1) + RATIO_EPS)


@dataclass(frozen=True)
class FeatureVector:
    values: np.ndarray
    label: Optional[ClassLabel] = None

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.shape != (N_FEATURES,):
            raise BadDecomposition(f"feature vector must have {N_FEATURES} values")
        object.__setattr__(self, "values", v)


def feature_matrix(decomp, signed_ratio=False):
    """Features for a (possibly batched) decomposition; last axis has 27 columns."""
    if decomp.levels != 6:
        raise BadDecomposition(
            f"feature extraction needs D1-D6 and A6, got {decomp.levels} detail bands"
        )
    bands = decomp.bands()
    means = [band_mean(b) for b in bands]
    powers = [band_power(b) for b in bands]
    stds = [band_std(b) for b in bands]
    ratios = [band_ratio(a, b, signed_ratio) for a, b in zip(bands, bands[1:])]
    return np.stack(means + powers + stds + ratios, axis=-1)


def extract_features(decomp, label=None, signed_ratio=False):
    values = feature_matrix(decomp, signed_ratio)
    if values.ndim != 1:
        raise BadDecomposition("extract_features takes a single-window decomposition")
    return FeatureVector(values, None if label is None else ClassLabel.parse(label))


def windows_to_dataset(windows, wavelet="db4", levels=6, signed_ratio=False):
    """DWT + feature extraction for every window; all windows must be labelled."""
    if levels != 6:
        raise BadDecomposition("the 27-feature layout requires 6 levels")
    samples, labels = stack_windows(windows)
    if any(lab is None for lab in labels):
        raise ValueError("every window needs a class label to enter a dataset")
    decomp = dwt_multilevel(samples, make_filter(wavelet), levels)
    return Dataset(feature_matrix(decomp, signed_ratio), [int(lab) for lab in labels])
