"""Periodic orthogonal discrete wavelet transform.

Alignment convention (part of the public contract, pinned by golden tests):

    approx[k] = sum_n lowpass[n]  * x[(2k + n) mod N]
    detail[k] = sum_n highpass[n] * x[(2k + n) mod N]

with ``highpass[n] = (-1)**n * lowpass[L - 1 - n]``.  Synthesis is the exact
transpose of this map, so ``idwt(dwt(x)) == x`` up to rounding.

All transforms act on the last axis, so a stack of windows with shape
``(n_windows, n_samples)`` is transformed in one call.
"""
from dataclasses import dataclass, field
import math

import numpy as np

from .errors import BadDecomposition, BadLength, BadLevels, UnknownFilter

# Daubechies scaling filters (sum = sqrt(2)), generated by spectral
# factorisation at 50 significant digits and rounded to float64.
_LOWPASS_TAPS = {
    "haar": (1 / math.sqrt(2), 1 / math.sqrt(2)),
    "db1": (1 / math.sqrt(2), 1 / math.sqrt(2)),
    "db2": (
        0.48296291314453416,
        0.8365163037378079,
        0.2241438680420134,
        -0.12940952255126037,
    ),
    "db4": (
        0.2303778133088965,
        0.7148465705529157,
        0.6308807679298589,
        -0.027983769416859854,
        -0.18703481171909309,
        0.030841381835560764,
        0.0328830116668852,
        -0.010597401785069032,
    ),
}

BAND_NAMES_6 = ("D1", "D2", "D3", "D4", "D5", "D6", "A6")


@dataclass(frozen=True)
class WaveletFilter:
    name: str
    lowpass: np.ndarray
    highpass: np.ndarray

    @property
    def length(self):
        return len(self.lowpass)


def available_filters():
    return sorted(_LOWPASS_TAPS)


def make_filter(name):
    """Return the orthogonal filter pair for ``name`` ("haar", "db2", "db4")."""
    try:
        taps = _LOWPASS_TAPS[name]
    except KeyError:
        raise UnknownFilter(
            f"unknown wavelet filter {name!r}; expected one of {available_filters()}"
        ) from None
    h = np.array(taps, dtype=np.float64)
    signs = np.where(np.arange(len(h)) % 2 == 0, 1.0, -1.0)
    g = signs * h[::-1]
    h.setflags(write=False)
    g.setflags(write=False)
    return WaveletFilter(name=name, lowpass=h, highpass=g)


@dataclass
class WaveletDecomposition:
    """Detail bands ``[D1, ..., D_levels]`` plus the final approximation.

    D1 is the finest (highest frequency) band.  Bands carry the transform
    axis last; leading axes (if any) index independent signals.
    """

    details: list
    approximation: np.ndarray
    filter: WaveletFilter
    original_length: int
    band_names: tuple = field(init=False)

    def __post_init__(self):
        n = len(self.details)
        self.band_names = tuple(f"D{j}" for j in range(1, n + 1)) + (f"A{n}",)

    @property
    def levels(self):
        return len(self.details)

    def bands(self):
        """All bands in the order D1..Dn, An."""
        return [*self.details, self.approximation]

    def to_csv(self, path):
        """Debug dump for a single-signal decomposition: ``band_name, c0, c1, ...``."""
        lines = []
        for name, band in zip(self.band_names, self.bands()):
            if np.ndim(band) != 1:
                raise BadDecomposition("CSV dump expects a single-signal decomposition")
            lines.append(",".join([name] + [repr(float(c)) for c in band]))
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(lines) + "\n")


def _gather_index(n, taps):
    k = np.arange(n // 2)[:, None]
    return (2 * k + np.arange(taps)[None, :]) % n


def dwt_step(x, filt):
    """One analysis level: returns (approximation, detail), each half length."""
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[-1]
    if n % 2:
        raise BadLength(f"single-level DWT needs an even length, got {n}")
    blocks = x[..., _gather_index(n, filt.length)]
    return blocks @ filt.lowpass, blocks @ filt.highpass


def idwt_step(approx, detail, filt):
    """Inverse of :func:`dwt_step` (transpose of the orthogonal analysis map)."""
    approx = np.asarray(approx, dtype=np.float64)
    detail = np.asarray(detail, dtype=np.float64)
    if approx.shape != detail.shape:
        raise BadDecomposition(
            f"approximation shape {approx.shape} != detail shape {detail.shape}"
        )
    half = approx.shape[-1]
    n = 2 * half
    out = np.zeros(approx.shape[:-1] + (n,))
    base = 2 * np.arange(half)
    for tap in range(filt.length):
        # for a fixed tap the target indices are distinct, so plain += is safe
        idx = (base + tap) % n
        out[..., idx] += filt.lowpass[tap] * approx + filt.highpass[tap] * detail
    return out


def dwt_multilevel(signal, filt, levels=6):
    x = np.asarray(signal, dtype=np.float64)
    if levels < 1:
        raise BadLevels(f"levels must be >= 1, got {levels}")
    n = x.shape[-1]
    if n % (2**levels):
        raise BadLength(f"length {n} is not divisible by 2**{levels}")
    if n < filt.length:
        raise BadLength(f"length {n} is shorter than the {filt.length}-tap filter")
    details = []
    approx = x
    for _ in range(levels):
        approx, detail = dwt_step(approx, filt)
        details.append(detail)
    return WaveletDecomposition(
        details=details, approximation=approx, filter=filt, original_length=n
    )


def idwt_multilevel(decomp):
    n = decomp.original_length
    levels = decomp.levels
    if levels < 1:
        raise BadDecomposition("decomposition has no detail bands")
    if n % (2**levels):
        raise BadDecomposition(f"original_length {n} not divisible by 2**{levels}")
    for j, band in enumerate(decomp.details, start=1):
        if np.shape(band)[-1] != n // 2**j:
            raise BadDecomposition(
                f"D{j} has length {np.shape(band)[-1]}, expected {n // 2**j}"
            )
    if np.shape(decomp.approximation)[-1] != n // 2**levels:
        raise BadDecomposition(
            f"A{levels} has length {np.shape(decomp.approximation)[-1]}, "
            f"expected {n // 2**levels}"
        )
    x = np.asarray(decomp.approximation, dtype=np.float64)
    for detail in reversed(decomp.details):
        x = idwt_step(x, detail, decomp.filter)
    return x
