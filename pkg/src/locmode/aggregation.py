"""Rotation-invariant aggregation and configuration-driven assembly.

A feature configuration selects, per available modality, some of:
the raw per-axis 70-feature blocks, a rotation-invariant statistical
aggregation of those blocks, and the 70-feature blocks of the magnitude
signals.  Aggregation condenses each {x, y, z} feature triple into
symmetric summaries (mean/std, mean/std/skew, or min/mid/max), after
dropping the time-domain signal skew: that is the only catalog entry
whose sign follows the axis sign, and axis flips are exactly what the
aggregation must be blind to.  With the skew gone, 69 features remain
per axis, which is what makes the aggregated block widths 138 and 207.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .data_io import MODALITY_NAMES, ModalityKind, ModalityMask
from .errors import SchemaError, UsageError
from .features import (
    FEATURE_NAMES,
    N_FEATURES_PER_SIGNAL,
    SIGN_SENSITIVE_INDEX,
    extract_signal_features,
)
from .processing import RAW_SIGNALS, SMV_SIGNALS, DerivedSignalSet


class AggregationKind(Enum):
    STAT2 = "stat2"
    STAT3 = "stat3"
    SORT = "sort"


AGG_STAT_NAMES = {
    AggregationKind.STAT2: ("mean", "std"),
    AggregationKind.STAT3: ("mean", "std", "skew"),
    AggregationKind.SORT: ("min", "mid", "max"),
}

#: Indices of the sign-invariant catalog entries kept under aggregation.
AGG_KEPT_INDICES = tuple(
    i for i in range(N_FEATURES_PER_SIGNAL) if i != SIGN_SENSITIVE_INDEX
)
AGG_KEPT_NAMES = tuple(FEATURE_NAMES[i] for i in AGG_KEPT_INDICES)


def _agg_output_length(kind: AggregationKind) -> int:
    return len(AGG_KEPT_INDICES) * len(AGG_STAT_NAMES[kind])


@dataclass(frozen=True)
class AblationConfig:
    """Selection of signal/aggregation blocks defining a feature subset."""

    use_raw: bool = False
    rot_inv: AggregationKind | None = None
    smv_blocks: tuple[str, ...] = ()

    def __post_init__(self):
        if self.use_raw and self.rot_inv is not None:
            raise UsageError("raw axis features and rot_inv aggregation are exclusive")
        unknown = [b for b in self.smv_blocks if b not in SMV_SIGNALS]
        if unknown:
            raise UsageError(f"unknown magnitude blocks: {unknown}")
        if len(set(self.smv_blocks)) != len(self.smv_blocks):
            raise UsageError("duplicate magnitude blocks")
        # normalize block order to the canonical signal order
        ordered = tuple(b for b in SMV_SIGNALS if b in self.smv_blocks)
        object.__setattr__(self, "smv_blocks", ordered)
        if not self.use_raw and self.rot_inv is None and not self.smv_blocks:
            raise UsageError("configuration selects no feature blocks")

    @classmethod
    def from_string(cls, text: str) -> "AblationConfig":
        """Parse e.g. ``rot_inv_stat2+smv+smv_dt2`` or ``raw`` or ``smv``."""
        use_raw = False
        rot_inv = None
        blocks = []
        tokens = [t.strip().lower() for t in re.split(r"[+\s]+", text.strip()) if t.strip()]
        if not tokens:
            raise UsageError("empty configuration string")
        for tok in tokens:
            if tok == "raw":
                use_raw = True
            elif tok.startswith("rot_inv_"):
                kind = tok[len("rot_inv_"):]
                try:
                    rot_inv = AggregationKind(kind)
                except ValueError:
                    raise UsageError(f"unknown aggregation kind: {tok}") from None
            elif tok in SMV_SIGNALS:
                blocks.append(tok)
            else:
                raise UsageError(f"unknown configuration token: {tok!r}")
        return cls(use_raw=use_raw, rot_inv=rot_inv, smv_blocks=tuple(blocks))

    def to_string(self) -> str:
        parts = []
        if self.use_raw:
            parts.append("raw")
        if self.rot_inv is not None:
            parts.append(f"rot_inv_{self.rot_inv.value}")
        parts.extend(self.smv_blocks)
        return "+".join(parts)

    def __str__(self) -> str:  # pragma: no cover - convenience
        return self.to_string()


#: The investigated configuration grid, best-scoring first.
FULL_ABLATION_GRID = tuple(
    AblationConfig.from_string(s)
    for s in (
        "rot_inv_sort+smv+smv_dt2",
        "rot_inv_stat2+smv+smv_dt2",
        "rot_inv_sort+smv+smv_dt1",
        "rot_inv_stat2+smv+smv_dt1",
        "rot_inv_sort+smv",
        "rot_inv_stat2+smv",
        "smv+smv_dt1+smv_dt2+smv_integral",
        "smv+smv_dt2+smv_integral",
        "smv+smv_dt1+smv_integral",
        "smv+smv_dt1+smv_dt2",
        "smv+smv_dt2",
        "smv+smv_dt1",
        "rot_inv_sort",
        "rot_inv_stat3",
        "rot_inv_stat2",
        "raw",
        "smv+smv_integral",
        "smv",
    )
)

DEFAULT_CONFIG = AblationConfig.from_string("rot_inv_stat2+smv+smv_dt2")


def config_length(config: AblationConfig) -> int:
    """Closed-form feature count of a configuration (two modalities)."""
    per_modality = 0
    if config.use_raw:
        per_modality += len(RAW_SIGNALS) * N_FEATURES_PER_SIGNAL
    if config.rot_inv is not None:
        per_modality += _agg_output_length(config.rot_inv)
    per_modality += len(config.smv_blocks) * N_FEATURES_PER_SIGNAL
    return 2 * per_modality


def aggregate(
    fx: np.ndarray, fy: np.ndarray, fz: np.ndarray, kind: AggregationKind
) -> np.ndarray:
    """Condense three per-axis feature vectors into symmetric summaries.

    Input vectors must be full 70-feature vectors from the same
    modality's axes; the sign-sensitive skew entry is dropped before
    aggregation.  Output is feature-major: all statistics of feature 0,
    then of feature 1, and so on.
    """
    vecs = []
    for v in (fx, fy, fz):
        v = np.asarray(v, dtype=np.float64)
        if v.shape != (N_FEATURES_PER_SIGNAL,):
            raise SchemaError(
                f"aggregate expects length-{N_FEATURES_PER_SIGNAL} vectors, got {v.shape}"
            )
        vecs.append(v[list(AGG_KEPT_INDICES)])
    tri = np.stack(vecs)  # (3, 69)

    if kind is AggregationKind.STAT2:
        stats = [tri.mean(axis=0), tri.std(axis=0)]
    elif kind is AggregationKind.STAT3:
        stats = [tri.mean(axis=0), tri.std(axis=0), _column_skew(tri)]
    else:  # SORT
        srt = np.sort(tri, axis=0)
        stats = [srt[0], srt[1], srt[2]]
    return np.column_stack(stats).ravel()


def _column_skew(tri: np.ndarray) -> np.ndarray:
    """Population-moment skew of each column of a (3, k) array; 0 if flat."""
    m = tri.mean(axis=0)
    c = tri - m
    m2 = np.mean(c**2, axis=0)
    m3 = np.mean(c**3, axis=0)
    out = np.zeros(tri.shape[1])
    ok = m2 >= 1e-24
    out[ok] = m3[ok] / m2[ok] ** 1.5
    return out


@dataclass(frozen=True)
class FeatureVector:
    """Named, deterministically ordered feature values for one window."""

    names: tuple[str, ...]
    values: np.ndarray


@dataclass(frozen=True)
class FeatureSchema:
    """Ordered column names for a configuration under one modality mask."""

    names: tuple[str, ...]
    config: AblationConfig
    mask: ModalityMask

    @property
    def hash(self) -> str:
        return schema_hash(self.names)

    def __len__(self) -> int:
        return len(self.names)


def schema_hash(names: tuple[str, ...]) -> str:
    digest = hashlib.sha256("\n".join(names).encode()).hexdigest()
    return digest[:16]


def schema_for(config: AblationConfig, mask: ModalityMask) -> FeatureSchema:
    """Column names, fixed modality order (acc, gyr, mag minus missing)."""
    names: list[str] = []
    for m in mask.available:
        mod = MODALITY_NAMES[m]
        if config.use_raw:
            for axis in RAW_SIGNALS:
                names.extend(f"{mod}_{axis}_{f}" for f in FEATURE_NAMES)
        if config.rot_inv is not None:
            stats = AGG_STAT_NAMES[config.rot_inv]
            for feat in AGG_KEPT_NAMES:
                names.extend(f"{mod}_rotinv_{feat}_{s}" for s in stats)
        for block in config.smv_blocks:
            names.extend(f"{mod}_{block}_{f}" for f in FEATURE_NAMES)
    schema = FeatureSchema(names=tuple(names), config=config, mask=mask)
    assert len(schema) == config_length(config)
    assert len(set(schema.names)) == len(schema.names)
    return schema


def signals_needed(config: AblationConfig) -> tuple[str, ...]:
    """Which of the 7 per-modality signals a configuration touches."""
    needed = []
    if config.use_raw or config.rot_inv is not None:
        needed.extend(RAW_SIGNALS)
    needed.extend(config.smv_blocks)
    return tuple(needed)


def assemble_from_modal_features(
    modal_features: dict[ModalityKind, np.ndarray],
    config: AblationConfig,
    mask: ModalityMask,
) -> np.ndarray:
    """Concatenate pre-extracted per-signal features for one window.

    ``modal_features[m]`` is the (7, 70) array of per-signal feature
    vectors for modality ``m``, rows in SIGNAL_NAMES order.
    """
    parts: list[np.ndarray] = []
    for m in mask.available:
        feats = modal_features[m]
        if config.use_raw:
            parts.append(feats[:3].ravel())
        if config.rot_inv is not None:
            parts.append(aggregate(feats[0], feats[1], feats[2], config.rot_inv))
        for block in config.smv_blocks:
            parts.append(feats[3 + SMV_SIGNALS.index(block)])
    return np.concatenate(parts)


def build_feature_vector(
    dss: DerivedSignalSet, config: AblationConfig, mask: ModalityMask
) -> FeatureVector:
    """Extract and assemble the configuration's feature vector.

    ``dss`` must hold the two modalities the mask keeps.  Only signals
    the configuration actually uses are extracted.
    """
    needed = signals_needed(config)
    schema = schema_for(config, mask)
    parts: list[np.ndarray] = []
    for m in mask.available:
        signals = dss.signals[m]
        cache = {name: extract_signal_features(signals[name]) for name in needed}
        if config.use_raw:
            parts.extend(cache[axis] for axis in RAW_SIGNALS)
        if config.rot_inv is not None:
            parts.append(aggregate(cache["x"], cache["y"], cache["z"], config.rot_inv))
        for block in config.smv_blocks:
            parts.append(cache[block])
    values = np.concatenate(parts)
    assert values.size == len(schema)
    return FeatureVector(names=schema.names, values=values)
