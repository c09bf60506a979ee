"""Orchestration: per-missing-modality training, K-fold majority voting,
out-of-fold scoring and the ablation grid.

For each of the three missing-modality scenarios a separate model is
trained on the feature schema that excludes that modality.  Unmasked
training windows qualify for every scenario (the mask is simulated by
exclusion); a window that genuinely misses a modality only qualifies
for that scenario, since any other schema would read its zero-filled
channels.  Each scenario gets K fold models plus one full fit, so a
bundle holds 3*(K+1) models.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from . import model as gbt
from .aggregation import (
    AblationConfig,
    FeatureSchema,
    assemble_from_modal_features,
    config_length,
    schema_for,
)
from .data_io import (
    ALL_MASKS,
    ModalityKind,
    ModalityMask,
    Location,
    RawWindow,
    detect_missing_modality,
    filter_locations,
)
from .errors import ParseError, SchemaError, ValidationError
from .features import N_FEATURES_PER_SIGNAL, extract_signal_features
from .model import GbtParams
from .processing import SIGNAL_NAMES, derive_modality_signals, scale_units


class SignalFeatureExtractor:
    """Extract-once cache of per-(window, modality) signal feature blocks.

    Feature extraction dominates runtime, and the ablation grid reuses
    the same per-signal features across configurations and masks, so the
    (7, 70) block per window and modality is computed once and cached by
    window object identity.
    """

    def __init__(self, znorm_spectral: bool = True):
        self.znorm_spectral = znorm_spectral
        self._cache: dict[int, tuple[RawWindow, dict[ModalityKind, np.ndarray]]] = {}

    def modal_features(self, w: RawWindow) -> dict[ModalityKind, np.ndarray]:
        cached = self._cache.get(id(w))
        if cached is not None:
            return cached[1]
        mask = detect_missing_modality(w)
        scaled = scale_units(w)
        feats: dict[ModalityKind, np.ndarray] = {}
        for m in mask.available:
            signals = derive_modality_signals(scaled.samples[m])
            block = np.empty((len(SIGNAL_NAMES), N_FEATURES_PER_SIGNAL))
            for i, name in enumerate(SIGNAL_NAMES):
                block[i] = extract_signal_features(signals[name], self.znorm_spectral)
            feats[m] = block
        self._cache[id(w)] = (w, feats)
        return feats


def eligible_rows(windows: Sequence[RawWindow], mask: ModalityMask) -> list[RawWindow]:
    """Windows usable under a scenario: unmasked ones, or ones whose
    genuinely missing modality is exactly the scenario's."""
    out = []
    for w in windows:
        missing = detect_missing_modality(w).missing
        if missing is None or missing == mask.missing:
            out.append(w)
    return out


def build_design_matrix(
    windows: Sequence[RawWindow],
    config: AblationConfig,
    mask: ModalityMask,
    extractor: SignalFeatureExtractor | None = None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, FeatureSchema]:
    """Feature matrix, labels and window ids for one scenario's rows."""
    extractor = extractor or SignalFeatureExtractor()
    schema = schema_for(config, mask)
    rows = eligible_rows(windows, mask)
    x = np.empty((len(rows), len(schema)))
    for i, w in enumerate(rows):
        x[i] = assemble_from_modal_features(extractor.modal_features(w), config, mask)
    y = np.array([w.label for w in rows], dtype=np.int64)
    ids = np.array([w.window_id for w in rows], dtype=np.int64)
    return x, y, ids, schema


def kfold_split(
    labels: Sequence[int], k: int = 3, seed: int = 0
) -> list[tuple[np.ndarray, np.ndarray]]:
    """Deterministic stratified K-fold partition.

    Folds are disjoint, cover all indices, and differ in size by at most
    one; each class is spread as evenly as possible across folds.
    """
    labels = np.asarray(labels)
    n = labels.size
    if n < k:
        raise ValidationError(f"cannot split {n} samples into {k} folds")
    rng = np.random.default_rng(seed)
    fold_of = np.empty(n, dtype=np.int64)
    cursor = 0
    for c in np.unique(labels):
        idx = np.nonzero(labels == c)[0]
        rng.shuffle(idx)
        for i in idx:
            fold_of[i] = cursor % k
            cursor += 1
    splits = []
    for f in range(k):
        test = np.nonzero(fold_of == f)[0]
        train = np.nonzero(fold_of != f)[0]
        splits.append((train, test))
    return splits


@dataclass
class MaskModels:
    """Everything trained for one missing-modality scenario."""

    mask: ModalityMask
    schema: FeatureSchema
    fold_models: list[gbt.GbtModel]
    full_model: gbt.GbtModel
    fold_splits: list[tuple[np.ndarray, np.ndarray]]
    window_ids: np.ndarray
    labels: np.ndarray


@dataclass
class ModelBundle:
    """3 scenarios x (K fold models + 1 full fit) plus the configuration."""

    config: AblationConfig
    k: int
    params: GbtParams
    per_mask: dict[ModalityKind, MaskModels]

    @property
    def model_count(self) -> int:
        return sum(len(mm.fold_models) + 1 for mm in self.per_mask.values())

    @property
    def classes(self) -> np.ndarray:
        ids = sorted({int(c) for mm in self.per_mask.values() for c in mm.full_model.classes})
        return np.asarray(ids, dtype=np.int64)


def train_bundle(
    windows: Sequence[RawWindow],
    config: AblationConfig,
    k: int = 3,
    params: GbtParams | None = None,
    extractor: SignalFeatureExtractor | None = None,
) -> ModelBundle:
    """Train K fold models plus one full fit per missing-modality scenario."""
    params = params or GbtParams()
    extractor = extractor or SignalFeatureExtractor()
    per_mask: dict[ModalityKind, MaskModels] = {}
    for mask in ALL_MASKS:
        x, y, ids, schema = build_design_matrix(windows, config, mask, extractor)
        if x.shape[0] == 0:
            raise ValidationError(f"no training rows available for scenario {mask.name}")
        weights = gbt.balanced_weights(y)
        splits = kfold_split(y, k=k, seed=params.seed + int(mask.missing))
        fold_models = [
            gbt.fit(x[tr], y[tr], gbt.balanced_weights(y[tr]), params, schema.hash)
            for tr, _ in splits
        ]
        full_model = gbt.fit(x, y, weights, params, schema.hash)
        per_mask[mask.missing] = MaskModels(
            mask=mask,
            schema=schema,
            fold_models=fold_models,
            full_model=full_model,
            fold_splits=splits,
            window_ids=ids,
            labels=y,
        )
    return ModelBundle(config=config, k=k, params=params, per_mask=per_mask)


def _group_by_mask(windows: Sequence[RawWindow]) -> dict[ModalityKind, list[int]]:
    """Positions of windows per detected missing modality (must be concrete)."""
    groups: dict[ModalityKind, list[int]] = {}
    for pos, w in enumerate(windows):
        missing = detect_missing_modality(w).missing
        if missing is None:
            raise ValidationError(
                f"window {w.window_id} has no missing modality; majority-vote "
                "prediction routes by the zero-filled modality"
            )
        groups.setdefault(missing, []).append(pos)
    return groups


def majority_vote_predict(
    bundle: ModelBundle,
    windows: Sequence[RawWindow],
    extractor: SignalFeatureExtractor | None = None,
    return_routing: bool = False,
):
    """Predict labels via majority vote of the K fold models.

    Each window is routed to the scenario of its detected missing
    modality.  Vote ties are broken by the highest probability summed
    across folds, then by the lowest class id.
    """
    extractor = extractor or SignalFeatureExtractor()
    groups = _group_by_mask(windows)
    labels = np.zeros(len(windows), dtype=np.int64)
    routing: dict[ModalityKind, list[int]] = {}
    for missing, positions in groups.items():
        mm = bundle.per_mask.get(missing)
        if mm is None:
            raise SchemaError(f"bundle has no model for the {missing.name}-missing scenario")
        subset = [windows[p] for p in positions]
        x, _, ids, schema = build_design_matrix(subset, bundle.config, mm.mask, extractor)
        if schema.hash != mm.schema.hash:
            raise SchemaError("feature schema drifted from the bundle's schema")
        k = len(mm.fold_models)
        classes = mm.full_model.classes
        votes = np.zeros((len(subset), classes.size), dtype=np.int64)
        prob_sum = np.zeros((len(subset), classes.size))
        for m in mm.fold_models:
            proba = gbt.predict_proba(m, x, schema.hash)
            votes[np.arange(len(subset)), np.argmax(proba, axis=1)] += 1
            prob_sum += proba
        # majority, then summed probability, then lowest class id
        best_votes = votes.max(axis=1, keepdims=True)
        tie_break = np.where(votes == best_votes, prob_sum, -np.inf)
        labels[positions] = classes[np.argmax(tie_break, axis=1)]
        routing[missing] = list(ids)
    if return_routing:
        return labels, routing
    return labels


def oof_score(
    bundle: ModelBundle,
    windows: Sequence[RawWindow],
    extractor: SignalFeatureExtractor | None = None,
) -> dict[ModalityKind, float]:
    """Out-of-fold macro F1 per scenario on the bundle's training windows.

    Each fold model predicts only its held-out fold; fold models alone
    are used, never the full fit.
    """
    extractor = extractor or SignalFeatureExtractor()
    scores: dict[ModalityKind, float] = {}
    for missing, mm in bundle.per_mask.items():
        x, y, ids, schema = build_design_matrix(windows, bundle.config, mm.mask, extractor)
        if not np.array_equal(ids, mm.window_ids):
            raise ValidationError(
                f"scenario {mm.mask.name}: windows do not match the bundle's training rows"
            )
        preds = np.zeros_like(y)
        seen = np.zeros(y.size, dtype=bool)
        for fold_model, (_, test) in zip(mm.fold_models, mm.fold_splits):
            preds[test] = gbt.predict(fold_model, x[test], schema.hash)
            seen[test] = True
        assert seen.all(), "fold partition must cover every training row"
        scores[missing] = gbt.macro_f1(y, preds, list(mm.full_model.classes))
    return scores


def full_fit_predict(
    bundle: ModelBundle,
    windows: Sequence[RawWindow],
    extractor: SignalFeatureExtractor | None = None,
) -> np.ndarray:
    """Predict labels with each scenario's full-fit model (no voting)."""
    extractor = extractor or SignalFeatureExtractor()
    groups = _group_by_mask(windows)
    labels = np.zeros(len(windows), dtype=np.int64)
    for missing, positions in groups.items():
        mm = bundle.per_mask[missing]
        subset = [windows[p] for p in positions]
        x, _, _, schema = build_design_matrix(subset, bundle.config, mm.mask, extractor)
        labels[positions] = gbt.predict(mm.full_model, x, schema.hash)
    return labels


# ---------------------------------------------------------------------------
# Ablation runner
# ---------------------------------------------------------------------------

@dataclass
class AblationRow:
    config: AblationConfig
    val: float
    val_mv: float
    oof: dict[ModalityKind, float]
    val_per_mask: dict[ModalityKind, float]
    n_features: int


@dataclass
class AblationReport:
    rows: list[AblationRow]
    k: int

    def sorted_rows(self) -> list[AblationRow]:
        return sorted(self.rows, key=lambda r: -r.val)


def run_ablation(
    train_windows: Sequence[RawWindow],
    val_windows: Sequence[RawWindow],
    configs: Iterable[AblationConfig],
    params: GbtParams | None = None,
    k: int = 3,
) -> AblationReport:
    """Train and score every configuration; one report row per config."""
    configs = list(configs)
    if not configs:
        raise ValidationError("ablation needs at least one configuration")
    params = params or GbtParams()
    extractor = SignalFeatureExtractor()
    rows = []
    for config in configs:
        bundle = train_bundle(train_windows, config, k=k, params=params, extractor=extractor)
        oof = oof_score(bundle, train_windows, extractor)

        val_true = np.array([w.label for w in val_windows], dtype=np.int64)
        val_full = full_fit_predict(bundle, val_windows, extractor)
        val_mv = majority_vote_predict(bundle, val_windows, extractor)
        classes = list(bundle.classes)
        groups = _group_by_mask(val_windows)
        val_per_mask = {
            missing: gbt.macro_f1(val_true[pos], val_full[pos], classes)
            for missing, pos in groups.items()
        }
        row = AblationRow(
            config=config,
            val=gbt.macro_f1(val_true, val_full, classes),
            val_mv=gbt.macro_f1(val_true, val_mv, classes),
            oof=oof,
            val_per_mask=val_per_mask,
            n_features=config_length(config),
        )
        assert row.n_features == config_length(config)
        rows.append(row)
    report = AblationReport(rows=sorted(rows, key=lambda r: -r.val), k=k)
    return report


def final_model(
    train_windows: Sequence[RawWindow],
    val_windows: Sequence[RawWindow] | None = None,
    config: AblationConfig | None = None,
    exclude_hand: bool = False,
    include_validation: bool = False,
    k: int = 3,
    params: GbtParams | None = None,
    extractor: SignalFeatureExtractor | None = None,
) -> ModelBundle:
    """Train the deployment bundle with the optional data tricks.

    ``exclude_hand`` drops hand-carried training windows; with
    ``include_validation`` the (masked) validation windows join training,
    each contributing only to its own scenario.
    """
    from .aggregation import DEFAULT_CONFIG

    rows = list(train_windows)
    if exclude_hand:
        rows = filter_locations(rows, {Location.HAND})
    if include_validation:
        if val_windows is None:
            raise ValidationError("include_validation requires validation windows")
        rows = rows + list(val_windows)
    return train_bundle(rows, config or DEFAULT_CONFIG, k=k, params=params, extractor=extractor)


# ---------------------------------------------------------------------------
# Bundle serialization
# ---------------------------------------------------------------------------

_BUNDLE_MAGIC = b"LMBD"
_BUNDLE_VERSION = 1


def serialize_bundle(bundle: ModelBundle) -> bytes:
    """Bundle container bytes: header + embedded model blobs."""
    from dataclasses import asdict

    header = {
        "version": _BUNDLE_VERSION,
        "config": bundle.config.to_string(),
        "k": bundle.k,
        "params": asdict(bundle.params),
        "masks": [],
    }
    blobs = []
    for missing in sorted(bundle.per_mask):
        mm = bundle.per_mask[missing]
        header["masks"].append(
            {
                "missing": int(missing),
                "schema_names": list(mm.schema.names),
                "window_ids": [int(i) for i in mm.window_ids],
                "labels": [int(v) for v in mm.labels],
                "fold_splits": [
                    {"train": [int(i) for i in tr], "test": [int(i) for i in te]}
                    for tr, te in mm.fold_splits
                ],
            }
        )
        for m in mm.fold_models:
            blobs.append(gbt.serialize(m))
        blobs.append(gbt.serialize(mm.full_model))
    parts = [_BUNDLE_MAGIC]
    blob = json.dumps(header, sort_keys=True).encode()
    parts.append(struct.pack("<I", len(blob)))
    parts.append(blob)
    for b in blobs:
        parts.append(struct.pack("<Q", len(b)))
        parts.append(b)
    return b"".join(parts)


def save_bundle(path, bundle: ModelBundle) -> None:
    """Write a bundle container atomically."""
    from .data_io import atomic_write

    atomic_write(path, serialize_bundle(bundle))


def load_bundle(path) -> ModelBundle:
    with open(path, "rb") as fh:
        magic = fh.read(len(_BUNDLE_MAGIC))
        if magic != _BUNDLE_MAGIC:
            raise ParseError(f"{path}: not a model bundle (bad magic)")
        (header_len,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(header_len).decode())
        if header["version"] != _BUNDLE_VERSION:
            raise ParseError(f"{path}: unsupported bundle version {header['version']}")
        config = AblationConfig.from_string(header["config"])
        params = GbtParams(**header["params"])
        k = header["k"]
        per_mask: dict[ModalityKind, MaskModels] = {}
        for entry in header["masks"]:
            missing = ModalityKind(entry["missing"])
            mask = ModalityMask(missing)
            models = []
            for _ in range(k + 1):
                (blob_len,) = struct.unpack("<Q", fh.read(8))
                models.append(gbt.deserialize(fh.read(blob_len)))
            schema = schema_for(config, mask)
            if list(schema.names) != entry["schema_names"]:
                raise SchemaError(f"{path}: stored schema does not match configuration")
            per_mask[missing] = MaskModels(
                mask=mask,
                schema=schema,
                fold_models=models[:-1],
                full_model=models[-1],
                fold_splits=[
                    (
                        np.asarray(s["train"], dtype=np.int64),
                        np.asarray(s["test"], dtype=np.int64),
                    )
                    for s in entry["fold_splits"]
                ],
                window_ids=np.asarray(entry["window_ids"], dtype=np.int64),
                labels=np.asarray(entry["labels"], dtype=np.int64),
            )
    return ModelBundle(config=config, k=k, params=params, per_mask=per_mask)
