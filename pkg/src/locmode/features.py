"""Per-signal feature extraction: 70 features per length-500 signal.

Layout of the catalog (order is fixed and load-bearing for schemas):
27 spectral features on the Welch PSD of the z-normalized signal
(17 band energies + 10 shape descriptors), the same 27 on the DCT
magnitudes, the PSD spectral entropy, 8 autocorrelation features and
7 time-domain features.  Magnitude-related time features (mean, std,
quantiles, peak-to-peak) are deliberately absent, and the spectral
transforms run on z-normalized input, so the set is insensitive to
affine amplitude changes; the time-domain skew is the single feature
whose sign follows the signal's sign.

Every degenerate case (constant or all-zero input, empty spectrum) maps
to a fixed finite value, so feature matrices never contain NaN or Inf.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.fft import dct as _dct
from scipy.signal import periodogram as _periodogram
from scipy.signal import welch as _welch

from .data_io import SAMPLE_RATE_HZ, WINDOW_SAMPLES
from .errors import ShapeError

_EPS_STD = 1e-12
_EPS_VAR = 1e-24
_EPS_SPACING = 1e-12

WELCH_SEGMENT = 256  # Hann window, 50% overlap, density scaling
ACF_MAX_LAG = 250

#: Frequency-band bounds (Hz) for the band-energy features.
BAND_EDGES_HZ = (
    (0.1, 0.5),
    (0.5, 1.0),
    (1.0, 1.5),
    (1.5, 2.0),
    (2.0, 2.5),
    (2.5, 3.0),
    (3.0, 4.0),
    (4.0, 5.0),
    (5.0, 6.0),
    (6.0, 8.0),
    (8.0, 12.0),
    (12.0, 18.0),
    (18.0, 24.0),
    (24.0, 28.0),
    (28.0, 32.0),
    (32.0, 40.0),
    (40.0, 50.0),
)

SHAPE_FEATURE_NAMES = (
    "centroid",
    "bandwidth",
    "amp_ratio",
    "amp_max",
    "amp_std",
    "amp_skew",
    "top_freq",
    "top5_mean",
    "top5_std",
    "top5_skew",
)

ACF_FEATURE_NAMES = (
    "acf_abs_mean",
    "acf_skew",
    "acf_std",
    "acf_top_freq",
    "acf_zcr",
    "acf_ssc",
    "acf_diff_entropy",
    "acf_spec_entropy",
)

TIME_FEATURE_NAMES = (
    "diff_entropy",
    "mean_crossing_rate",
    "skew",
    "kurtosis",
    "hjorth_mobility",
    "hjorth_complexity",
    "katz_fd",
)


@dataclass(frozen=True)
class FeatureDescriptor:
    name: str
    domain: str  # "spectral" | "time"
    sign_invariant: bool = True


def _band_name(lo: float, hi: float) -> str:
    return f"band_{lo:g}_{hi:g}"


def build_catalog() -> tuple[FeatureDescriptor, ...]:
    """The fixed, ordered catalog of the 70 per-signal features."""
    entries = []
    for prefix in ("psd", "dct"):
        for lo, hi in BAND_EDGES_HZ:
            entries.append(FeatureDescriptor(f"{prefix}_{_band_name(lo, hi)}", "spectral"))
        for name in SHAPE_FEATURE_NAMES:
            entries.append(FeatureDescriptor(f"{prefix}_{name}", "spectral"))
    entries.append(FeatureDescriptor("psd_entropy", "spectral"))
    for name in ACF_FEATURE_NAMES:
        entries.append(FeatureDescriptor(name, "time"))
    for name in TIME_FEATURE_NAMES:
        entries.append(
            FeatureDescriptor(name, "time", sign_invariant=(name != "skew"))
        )
    catalog = tuple(entries)
    # 2*(17 bands + 10 shape) + entropy + 8 ACF + 7 time = 70
    assert len(catalog) == 2 * (len(BAND_EDGES_HZ) + len(SHAPE_FEATURE_NAMES)) + 1 + len(
        ACF_FEATURE_NAMES
    ) + len(TIME_FEATURE_NAMES)
    assert len(catalog) == 70
    assert len({d.name for d in catalog}) == len(catalog)
    assert sum(not d.sign_invariant for d in catalog) == 1
    return catalog


FEATURE_CATALOG = build_catalog()
FEATURE_NAMES = tuple(d.name for d in FEATURE_CATALOG)
N_FEATURES_PER_SIGNAL = len(FEATURE_CATALOG)
SIGN_SENSITIVE_INDEX = next(i for i, d in enumerate(FEATURE_CATALOG) if not d.sign_invariant)
N_SPECTRAL_FEATURES = sum(d.domain == "spectral" for d in FEATURE_CATALOG)
SPECTRAL_INDICES = tuple(i for i, d in enumerate(FEATURE_CATALOG) if d.domain == "spectral")


@dataclass(frozen=True)
class Spectrum:
    """One-sided spectrum: ascending frequencies with nonnegative amps."""

    freqs: np.ndarray
    amps: np.ndarray
    kind: str  # "psd" | "dct"


# ---------------------------------------------------------------------------
# Small statistical helpers with fixed degenerate values
# ---------------------------------------------------------------------------

def _moment_skew(v: np.ndarray) -> float:
    """Population-moment skewness g1; 0 when variance is degenerate."""
    v = np.asarray(v, dtype=np.float64)
    m = v.mean()
    m2 = np.mean((v - m) ** 2)
    if m2 < _EPS_VAR:
        return 0.0
    m3 = np.mean((v - m) ** 3)
    return float(m3 / m2**1.5)


def _excess_kurtosis(v: np.ndarray) -> float:
    """Population-moment excess kurtosis g2; 0 when variance is degenerate."""
    v = np.asarray(v, dtype=np.float64)
    m = v.mean()
    m2 = np.mean((v - m) ** 2)
    if m2 < _EPS_VAR:
        return 0.0
    m4 = np.mean((v - m) ** 4)
    return float(m4 / m2**2 - 3.0)


def _sign_changes(v: np.ndarray) -> int:
    sb = np.signbit(v)
    return int(np.count_nonzero(sb[1:] != sb[:-1]))


def differential_entropy(x: np.ndarray) -> float:
    """Vasicek spacing estimator with m = floor(sqrt(n)).

    Order statistics are clamped at the ends and spacings floored at
    1e-12, so constant input yields a large negative but finite value.
    """
    x = np.asarray(x, dtype=np.float64)
    n = x.size
    m = int(np.sqrt(n))
    xs = np.sort(x)
    idx = np.arange(n)
    upper = xs[np.minimum(idx + m, n - 1)]
    lower = xs[np.maximum(idx - m, 0)]
    spacing = np.maximum(upper - lower, _EPS_SPACING)
    return float(np.mean(np.log(n / (2.0 * m) * spacing)))


# ---------------------------------------------------------------------------
# Spectral representations
# ---------------------------------------------------------------------------

def znorm(x: np.ndarray) -> np.ndarray:
    """(x - mean) / population std; all zeros when the std is degenerate."""
    x = np.asarray(x, dtype=np.float64)
    sd = x.std()
    if sd < _EPS_STD:
        return np.zeros_like(x)
    return (x - x.mean()) / sd


def welch_psd(x: np.ndarray, fs: float = SAMPLE_RATE_HZ) -> Spectrum:
    """One-sided Welch PSD (Hann, 256-sample segments, 50% overlap)."""
    freqs, amps = _welch(np.asarray(x, dtype=np.float64), fs=fs, nperseg=WELCH_SEGMENT)
    return Spectrum(freqs=freqs, amps=amps, kind="psd")


def dct_magnitudes(x: np.ndarray, fs: float = SAMPLE_RATE_HZ) -> Spectrum:
    """Magnitudes of the orthonormal type-II DCT, DC term excluded.

    Coefficient k corresponds to frequency k*fs/(2N); the k=0 term is
    dropped because the z-normalized input has (near-)zero mean.
    """
    x = np.asarray(x, dtype=np.float64)
    n = x.size
    coefs = _dct(x, type=2, norm="ortho")
    freqs = np.arange(1, n) * (fs / (2.0 * n))
    return Spectrum(freqs=freqs, amps=np.abs(coefs[1:]), kind="dct")


def band_energies(s: Spectrum) -> np.ndarray:
    """Summed amplitude per frequency band; the last band is closed."""
    out = np.empty(len(BAND_EDGES_HZ))
    last = len(BAND_EDGES_HZ) - 1
    for i, (lo, hi) in enumerate(BAND_EDGES_HZ):
        if i == last:
            sel = (s.freqs >= lo) & (s.freqs <= hi)
        else:
            sel = (s.freqs >= lo) & (s.freqs < hi)
        out[i] = s.amps[sel].sum()
    return out


def spectral_shape(s: Spectrum) -> np.ndarray:
    """The 10 shape descriptors; all zeros for an all-zero spectrum."""
    a = s.amps
    f = s.freqs
    total = a.sum()
    if total <= 0.0:
        return np.zeros(len(SHAPE_FEATURE_NAMES))
    centroid = float((f * a).sum() / total)
    bandwidth = float(np.sqrt((a * (f - centroid) ** 2).sum() / total))
    order = np.argsort(-a, kind="stable")  # ties resolve to the lower bin
    ratio = float(a[order[1]] / a[order[0]])
    amp_max = float(a[order[0]])
    amp_std = float(a.std())
    amp_skew = _moment_skew(a)
    top_freq = float(f[order[0]])
    top5 = f[order[:5]]
    return np.array(
        [
            centroid,
            bandwidth,
            ratio,
            amp_max,
            amp_std,
            amp_skew,
            top_freq,
            float(top5.mean()),
            float(top5.std()),
            _moment_skew(top5),
        ]
    )


def spectral_entropy(s: Spectrum) -> float:
    """Shannon entropy (bits) of the amplitude distribution; 0 if empty."""
    total = s.amps.sum()
    if total <= 0.0:
        return 0.0
    p = s.amps / total
    p = p[p > 0.0]
    return float(-(p * np.log2(p)).sum())


# ---------------------------------------------------------------------------
# Autocorrelation block
# ---------------------------------------------------------------------------

def acf(x: np.ndarray, max_lag: int = ACF_MAX_LAG) -> np.ndarray:
    """Normalized autocorrelation at lags 1..max_lag; zeros when constant."""
    x = np.asarray(x, dtype=np.float64)
    d = x - x.mean()
    denom = float(d @ d)
    if denom < _EPS_VAR:
        return np.zeros(max_lag)
    full = np.correlate(d, d, mode="full")[x.size - 1 :]
    return full[1 : max_lag + 1] / denom


def acf_features(r: np.ndarray, fs: float = SAMPLE_RATE_HZ) -> np.ndarray:
    """8 descriptors of an ACF sequence; all zeros for a degenerate r.

    The prominent frequency is fs over the lag of the ACF maximum, where
    the search starts after the first zero crossing to skip the trivial
    short-lag peak; without a crossing the global maximum is used.
    """
    r = np.asarray(r, dtype=np.float64)
    if not r.any():
        return np.zeros(len(ACF_FEATURE_NAMES))
    sb = np.signbit(r)
    crossings = np.nonzero(sb[1:] != sb[:-1])[0]
    start = int(crossings[0]) + 1 if crossings.size else 0
    k_star = start + int(np.argmax(r[start:])) + 1  # r[0] is lag 1
    zcr = crossings.size / (r.size - 1)
    ssc = _sign_changes(np.diff(r)) / (r.size - 2)
    psd_freqs, psd_amps = _periodogram(r, fs=fs)
    spec_ent = spectral_entropy(Spectrum(freqs=psd_freqs, amps=psd_amps, kind="psd"))
    return np.array(
        [
            float(np.abs(r).mean()),
            _moment_skew(r),
            float(r.std()),
            fs / k_star,
            zcr,
            ssc,
            differential_entropy(r),
            spec_ent,
        ]
    )


# ---------------------------------------------------------------------------
# Time-domain block
# ---------------------------------------------------------------------------

def time_features(x: np.ndarray) -> np.ndarray:
    """7 time-domain descriptors of the raw (unnormalized) signal."""
    x = np.asarray(x, dtype=np.float64)
    n = x.size

    de = differential_entropy(x)
    mcr = _sign_changes(x - x.mean()) / (n - 1)
    skew = _moment_skew(x)
    kurt = _excess_kurtosis(x)

    v0 = float(x.var())
    d1 = np.diff(x)
    v1 = float(d1.var())
    mobility = np.sqrt(v1 / v0) if v0 > _EPS_VAR else 0.0
    if v0 > _EPS_VAR and v1 > _EPS_VAR:
        v2 = float(np.diff(d1).var())
        complexity = np.sqrt(v2 / v1) / mobility
    else:
        complexity = 0.0

    path = float(np.abs(d1).sum())
    extent = float(np.abs(x - x[0]).max())
    if path == 0.0 or extent == 0.0:
        katz = 1.0
    else:
        denom = np.log10(n - 1) + np.log10(extent / path)
        katz = float(np.log10(n - 1) / denom) if denom != 0.0 else 0.0

    return np.array([de, mcr, skew, kurt, float(mobility), float(complexity), katz])


# ---------------------------------------------------------------------------
# Full per-signal vector
# ---------------------------------------------------------------------------

def extract_signal_features(x: np.ndarray, znorm_spectral: bool = True) -> np.ndarray:
    """The full ordered 70-feature vector for one length-500 signal.

    ``znorm_spectral=False`` skips the z-normalization in front of the
    spectral transforms (ablation switch; the default is what the
    magnitude-invariance guarantees rely on).
    """
    x = np.asarray(x, dtype=np.float64)
    if x.size != WINDOW_SAMPLES:
        raise ShapeError(f"expected a length-{WINDOW_SAMPLES} signal, got {x.size}")
    z = znorm(x) if znorm_spectral else x
    psd = welch_psd(z)
    dct_spec = dct_magnitudes(z)
    parts = [
        band_energies(psd),
        spectral_shape(psd),
        band_energies(dct_spec),
        spectral_shape(dct_spec),
        [spectral_entropy(psd)],
        acf_features(acf(x)),
        time_features(x),
    ]
    return np.concatenate(parts)
