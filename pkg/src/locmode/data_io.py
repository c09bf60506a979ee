"""Loading, assembly and synthesis of labeled 5-second sensor windows.

The on-disk text layout mirrors the challenge release: one whitespace
separated file per channel (``Acc_x.txt`` ... ``Mag_z.txt``) with one
window per line, a ``Label.txt`` with one sample-level label id per
column, and an optional ``Location.txt`` with one phone-location id per
window.  A faster self-describing binary cache format is provided as
well (see :func:`save_window_cache`).
"""

from __future__ import annotations

import os
import struct
import tempfile
from dataclasses import dataclass
from enum import IntEnum
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import AmbiguityError, DataError, ParseError, ShapeError, ValidationError


def atomic_write(path: str | os.PathLike, data: bytes | str) -> None:
    """Write via a temp file in the target directory, then rename.

    Guarantees no partial output file is left behind on failure.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    mode = "wb" if isinstance(data, bytes) else "w"
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, mode) as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise

SAMPLE_RATE_HZ = 100.0
WINDOW_SAMPLES = 500  # 5 s at 100 Hz
N_AXES = 3

AXES = ("x", "y", "z")


class ModalityKind(IntEnum):
    """The three sensor streams, with a stable integer encoding."""

    ACC = 0
    GYR = 1
    MAG = 2


MODALITY_NAMES = {ModalityKind.ACC: "acc", ModalityKind.GYR: "gyr", ModalityKind.MAG: "mag"}
MODALITY_FILE_PREFIX = {ModalityKind.ACC: "Acc", ModalityKind.GYR: "Gyr", ModalityKind.MAG: "Mag"}


class Location(IntEnum):
    """Phone carry position. Unknown is carried through and never filtered."""

    UNKNOWN = 0
    HAND = 1
    TORSO = 2
    HIPS = 3
    BAG = 4


#: Class id <-> name map. Ids are fixed for serialization.
CLASS_NAMES = {
    1: "Still",
    2: "Walk",
    3: "Run",
    4: "Bike",
    5: "Car",
    6: "Bus",
    7: "Train",
    8: "Subway",
}
CLASS_IDS = {name: cid for cid, name in CLASS_NAMES.items()}


@dataclass(frozen=True)
class ModalityMask:
    """Which modality of a window is zero-filled; ``None`` means none is."""

    missing: ModalityKind | None

    @property
    def available(self) -> tuple[ModalityKind, ...]:
        return tuple(m for m in ModalityKind if m != self.missing)

    @property
    def name(self) -> str:
        if self.missing is None:
            return "none"
        return MODALITY_NAMES[self.missing] + "0"


NONE_MISSING = ModalityMask(None)
ALL_MASKS = tuple(ModalityMask(m) for m in ModalityKind)


@dataclass(frozen=True)
class RawWindow:
    """One 5-second window: samples[modality, axis, t], label and metadata.

    ``samples`` has shape (3, 3, WINDOW_SAMPLES). A missing modality has
    all of its 3 x 500 values exactly equal to 0.0.  Treat the array as
    immutable.
    """

    samples: np.ndarray
    label: int
    location: Location = Location.UNKNOWN
    window_id: int = 0

    def __post_init__(self):
        s = self.samples
        if s.shape != (len(ModalityKind), N_AXES, WINDOW_SAMPLES):
            raise ShapeError(
                f"window samples must have shape (3, 3, {WINDOW_SAMPLES}), got {s.shape}"
            )
        if not np.all(np.isfinite(s)):
            raise ValidationError(f"window {self.window_id} contains non-finite samples")


def load_channel_file(path: str | os.PathLike, n_samples_per_window: int = WINDOW_SAMPLES) -> np.ndarray:
    """Read one channel text file into a (windows x n_samples) float matrix.

    Every line must parse to exactly ``n_samples_per_window`` finite
    reals; row order is preserved.  Malformed lines raise ParseError
    naming the line number, ragged rows raise ShapeError.
    """
    path = Path(path)
    rows = []
    with open(path, "r") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                row = np.array(line.split(), dtype=np.float64)
            except ValueError as exc:
                raise ParseError(f"{path}:{lineno}: cannot parse line as floats ({exc})") from None
            if row.size != n_samples_per_window:
                raise ShapeError(
                    f"{path}:{lineno}: expected {n_samples_per_window} values, got {row.size}"
                )
            if not np.all(np.isfinite(row)):
                raise ParseError(f"{path}:{lineno}: non-finite value in line")
            rows.append(row)
    if not rows:
        return np.empty((0, n_samples_per_window), dtype=np.float64)
    return np.vstack(rows)


def majority_label(row: np.ndarray) -> int:
    """Most frequent label id in a row; ties resolve to the lowest id."""
    counts = np.bincount(np.asarray(row, dtype=np.int64))
    return int(np.argmax(counts))


def assemble_windows(
    channels: Mapping[tuple[ModalityKind, str], np.ndarray],
    labels: np.ndarray,
    locations: Sequence[int] | None = None,
) -> list[RawWindow]:
    """Combine per-channel matrices and sample-level labels into windows.

    ``labels`` is (windows x samples); each window's label is the
    per-window majority vote.  Channels absent from the mapping are
    filled with zeros.  All matrices must agree on the window count.
    """
    labels = np.asarray(labels)
    if labels.ndim == 1:
        labels = labels[:, None]
    n_windows = labels.shape[0]
    for key, mat in channels.items():
        if mat.shape[0] != n_windows:
            raise ShapeError(
                f"channel {key} has {mat.shape[0]} windows, labels have {n_windows}"
            )
        if mat.shape[1] != WINDOW_SAMPLES:
            raise ShapeError(f"channel {key} has {mat.shape[1]} samples per window")
    if locations is not None and len(locations) != n_windows:
        raise ShapeError(f"{len(locations)} locations for {n_windows} windows")

    windows = []
    for i in range(n_windows):
        samples = np.zeros((len(ModalityKind), N_AXES, WINDOW_SAMPLES), dtype=np.float64)
        for m in ModalityKind:
            for a, axis in enumerate(AXES):
                mat = channels.get((m, axis))
                if mat is not None:
                    samples[m, a] = mat[i]
        loc = Location(int(locations[i])) if locations is not None else Location.UNKNOWN
        windows.append(
            RawWindow(samples=samples, label=majority_label(labels[i]), location=loc, window_id=i)
        )
    return windows


def detect_missing_modality(w: RawWindow) -> ModalityMask:
    """Identify the zero-filled modality of a window.

    Returns NONE_MISSING when no modality is all-zero (unmasked training
    data); raises AmbiguityError when two or more are.
    """
    zero = [m for m in ModalityKind if not np.any(w.samples[m])]
    if len(zero) == 0:
        return NONE_MISSING
    if len(zero) > 1:
        names = ", ".join(MODALITY_NAMES[m] for m in zero)
        raise AmbiguityError(f"window {w.window_id}: multiple all-zero modalities ({names})")
    return ModalityMask(zero[0])


def filter_locations(windows: Iterable[RawWindow], excluded: set[Location]) -> list[RawWindow]:
    """Drop windows whose phone location is in ``excluded``; order kept."""
    return [w for w in windows if w.location not in excluded]


# ---------------------------------------------------------------------------
# Synthetic data for desk-scale runs and tests
# ---------------------------------------------------------------------------

_SYNTH_BASE_MAGNITUDE = {ModalityKind.ACC: 9.81, ModalityKind.GYR: 6.28, ModalityKind.MAG: 40.0}
_SYNTH_LOCATIONS = (Location.HAND, Location.TORSO, Location.HIPS, Location.BAG)


def synth_class_frequency(label: int, modality: ModalityKind) -> float:
    """Dominant oscillation frequency (Hz) assigned to a synthetic class."""
    return 2.0 + 4.0 * (label - 1) + 1.0 * int(modality)


def synth_dataset(
    n_windows: int,
    n_classes: int,
    seed: int = 0,
    masked: bool = True,
) -> list[RawWindow]:
    """Generate a deterministic, separable synthetic dataset.

    Class labels cycle 1..n_classes so counts are balanced.  Each class
    oscillates at a distinct frequency per modality (see
    :func:`synth_class_frequency`), riding on a constant gravity-like
    offset, so any two modalities suffice to separate the classes.  With
    ``masked=True`` one modality per window is zero-filled uniformly at
    random; otherwise all three are present.
    """
    if n_classes > len(CLASS_NAMES):
        raise ValidationError(f"n_classes must be <= {len(CLASS_NAMES)}")
    rng = np.random.default_rng(seed)
    t = np.arange(WINDOW_SAMPLES) / SAMPLE_RATE_HZ
    windows = []
    for i in range(n_windows):
        label = 1 + (i % n_classes)
        samples = np.zeros((len(ModalityKind), N_AXES, WINDOW_SAMPLES), dtype=np.float64)
        for m in ModalityKind:
            base = _SYNTH_BASE_MAGNITUDE[m]
            freq = synth_class_frequency(label, m)
            direction = rng.normal(size=N_AXES)
            direction /= np.linalg.norm(direction)
            phase = rng.uniform(0.0, 2.0 * np.pi)
            carrier = base + 0.25 * base * np.sin(2.0 * np.pi * freq * t + phase)
            noise = rng.normal(scale=0.01 * base, size=(N_AXES, WINDOW_SAMPLES))
            samples[m] = direction[:, None] * carrier[None, :] + noise
        if masked:
            samples[rng.integers(0, len(ModalityKind))] = 0.0
        windows.append(
            RawWindow(
                samples=samples,
                label=label,
                location=_SYNTH_LOCATIONS[i % len(_SYNTH_LOCATIONS)],
                window_id=i,
            )
        )
    return windows


# ---------------------------------------------------------------------------
# Directory layout (challenge-style text files)
# ---------------------------------------------------------------------------

LABELS_FILENAME = "Label.txt"
LOCATIONS_FILENAME = "Location.txt"


def channel_filename(modality: ModalityKind, axis: str) -> str:
    return f"{MODALITY_FILE_PREFIX[modality]}_{axis}.txt"


def load_dataset(directory: str | os.PathLike, require_labels: bool = True) -> list[RawWindow]:
    """Load a dataset directory of channel text files into windows.

    Channel files that do not exist are filled with zeros.  ``Label.txt``
    is required unless ``require_labels`` is False (predict-only data),
    in which case labels default to 0.
    """
    directory = Path(directory)
    if not directory.is_dir():
        raise DataError(f"data directory not found: {directory}")
    channels: dict[tuple[ModalityKind, str], np.ndarray] = {}
    for m in ModalityKind:
        for axis in AXES:
            path = directory / channel_filename(m, axis)
            if path.exists():
                channels[(m, axis)] = load_channel_file(path)
    if not channels:
        raise DataError(f"no channel files found in {directory}")
    n_windows = next(iter(channels.values())).shape[0]

    labels_path = directory / LABELS_FILENAME
    if labels_path.exists():
        labels = load_channel_file(labels_path).astype(np.int64)
    elif require_labels:
        raise DataError(f"labels file not found: {labels_path}")
    else:
        labels = np.zeros((n_windows, 1), dtype=np.int64)

    locations = None
    loc_path = directory / LOCATIONS_FILENAME
    if loc_path.exists():
        locations = load_channel_file(loc_path, n_samples_per_window=1).astype(np.int64)[:, 0]

    return assemble_windows(channels, labels, locations)


def save_dataset_text(windows: Sequence[RawWindow], directory: str | os.PathLike) -> None:
    """Write windows in the challenge-style text layout (round-trip exact)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for m in ModalityKind:
        for a, axis in enumerate(AXES):
            lines = (" ".join(f"{v:.17g}" for v in w.samples[m, a]) for w in windows)
            atomic_write(directory / channel_filename(m, axis), "\n".join(lines) + "\n")
    labels = ("\n".join(" ".join([str(w.label)] * WINDOW_SAMPLES) for w in windows)) + "\n"
    atomic_write(directory / LABELS_FILENAME, labels)
    locations = "\n".join(str(int(w.location)) for w in windows) + "\n"
    atomic_write(directory / LOCATIONS_FILENAME, locations)


# ---------------------------------------------------------------------------
# Binary window cache
# ---------------------------------------------------------------------------

_CACHE_MAGIC = b"LMWCACHE"
_CACHE_VERSION = 1


def save_window_cache(path: str | os.PathLike, windows: Sequence[RawWindow]) -> None:
    """Write windows to the binary cache (little-endian float32 samples).

    Header: magic, version, window count, channel list; then one record
    per window (window_id, label, location, 9 x 500 float32 samples).
    """
    channel_names = [
        f"{MODALITY_NAMES[m]}_{axis}".encode() for m in ModalityKind for axis in AXES
    ]
    parts = [_CACHE_MAGIC]
    parts.append(struct.pack("<III", _CACHE_VERSION, len(windows), len(channel_names)))
    parts.append(struct.pack("<I", WINDOW_SAMPLES))
    for name in channel_names:
        parts.append(struct.pack("<H", len(name)))
        parts.append(name)
    for w in windows:
        parts.append(struct.pack("<iii", w.window_id, w.label, int(w.location)))
        parts.append(w.samples.astype("<f4").tobytes())
    atomic_write(path, b"".join(parts))


def load_window_cache(path: str | os.PathLike) -> list[RawWindow]:
    """Read windows back from the binary cache."""
    with open(path, "rb") as fh:
        magic = fh.read(len(_CACHE_MAGIC))
        if magic != _CACHE_MAGIC:
            raise ParseError(f"{path}: not a window cache (bad magic)")
        version, n_windows, n_channels = struct.unpack("<III", fh.read(12))
        if version != _CACHE_VERSION:
            raise ParseError(f"{path}: unsupported cache version {version}")
        (n_samples,) = struct.unpack("<I", fh.read(4))
        if n_channels != len(ModalityKind) * N_AXES or n_samples != WINDOW_SAMPLES:
            raise ShapeError(f"{path}: unexpected channel layout")
        for _ in range(n_channels):
            (name_len,) = struct.unpack("<H", fh.read(2))
            fh.read(name_len)
        windows = []
        record_floats = n_channels * n_samples
        for _ in range(n_windows):
            window_id, label, location = struct.unpack("<iii", fh.read(12))
            raw = np.frombuffer(fh.read(4 * record_floats), dtype="<f4")
            samples = raw.astype(np.float64).reshape(len(ModalityKind), N_AXES, n_samples)
            windows.append(
                RawWindow(
                    samples=samples,
                    label=label,
                    location=Location(location),
                    window_id=window_id,
                )
            )
    return windows
