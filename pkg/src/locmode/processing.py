"""Unit scaling and derivation of per-modality signals.

Each available modality yields 7 signals: the 3 scaled axes plus 4
rotation-invariant magnitude signals (the per-sample Euclidean norm of
the raw axes, of their first and second gradients, and of their running
integrals).  Gradients and integrals are applied per axis *before* the
norm; because those transforms are linear and identical across axes,
they commute with any fixed rotation of the axis frame, so the derived
magnitude signals inherit the norm's rotation invariance.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict

import numpy as np
from scipy.integrate import cumulative_trapezoid

from .data_io import AXES, ModalityKind, ModalityMask, RawWindow
from .errors import ShapeError, ValidationError

# Fixed unit conversions: m/s^2 -> g, rad/s -> Hz, uT -> Gauss.
ACC_SCALE = 9.81
GYR_SCALE = 2.0 * np.pi
MAG_SCALE = 100.0

_SCALES = {ModalityKind.ACC: ACC_SCALE, ModalityKind.GYR: GYR_SCALE, ModalityKind.MAG: MAG_SCALE}

#: Per-modality signal names in their fixed extraction order.
SIGNAL_NAMES = ("x", "y", "z", "smv", "smv_dt1", "smv_dt2", "smv_integral")
RAW_SIGNALS = SIGNAL_NAMES[:3]
SMV_SIGNALS = SIGNAL_NAMES[3:]


@dataclass(frozen=True)
class DerivedSignalSet:
    """The 7 derived signals for each available modality of one window."""

    signals: Dict[ModalityKind, Dict[str, np.ndarray]]

    @property
    def modalities(self) -> tuple[ModalityKind, ...]:
        return tuple(self.signals.keys())


def scale_units(w: RawWindow) -> RawWindow:
    """Divide each modality by its fixed unit constant; zeros stay zero."""
    samples = w.samples.copy()
    for m in ModalityKind:
        samples[m] /= _SCALES[m]
    return RawWindow(samples=samples, label=w.label, location=w.location, window_id=w.window_id)


def smv(x: np.ndarray, y: np.ndarray, z: np.ndarray) -> np.ndarray:
    """Per-sample Euclidean norm of three axis signals."""
    x, y, z = (np.asarray(v, dtype=np.float64) for v in (x, y, z))
    if not (x.shape == y.shape == z.shape):
        raise ShapeError(f"axis length mismatch: {x.shape}, {y.shape}, {z.shape}")
    return np.sqrt(x * x + y * y + z * z)


def gradient1(x: np.ndarray) -> np.ndarray:
    """Central-difference gradient with one-sided differences at the ends."""
    x = np.asarray(x, dtype=np.float64)
    if x.size < 2:
        raise ShapeError("gradient needs at least 2 samples")
    return np.gradient(x)


def gradient2(x: np.ndarray) -> np.ndarray:
    """Second-order gradient, exactly gradient1(gradient1(x))."""
    return gradient1(gradient1(x))


def integral(x: np.ndarray) -> np.ndarray:
    """Cumulative trapezoid with a leading 0 so output length equals input."""
    x = np.asarray(x, dtype=np.float64)
    if x.size < 2:
        raise ShapeError("integral needs at least 2 samples")
    return cumulative_trapezoid(x, initial=0.0)


def derive_modality_signals(xyz: np.ndarray) -> Dict[str, np.ndarray]:
    """All 7 signals for one modality given its (3, n) scaled axis block."""
    x, y, z = xyz
    out = {"x": x, "y": y, "z": z, "smv": smv(x, y, z)}
    out["smv_dt1"] = smv(gradient1(x), gradient1(y), gradient1(z))
    out["smv_dt2"] = smv(gradient2(x), gradient2(y), gradient2(z))
    out["smv_integral"] = smv(integral(x), integral(y), integral(z))
    return out


def derive_signals(w: RawWindow, mask: ModalityMask) -> DerivedSignalSet:
    """Derive the 7 signals for each of the two modalities the mask keeps.

    ``w`` must already be unit-scaled.  The mask names the modality to
    exclude (either genuinely zero-filled or simulated by exclusion on
    unmasked training data).
    """
    if mask.missing is None:
        raise ValidationError("derive_signals needs a concrete missing modality")
    signals = {m: derive_modality_signals(w.samples[m]) for m in mask.available}
    return DerivedSignalSet(signals=signals)
