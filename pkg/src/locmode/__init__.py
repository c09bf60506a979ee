"""Locomotion-mode classification from tri-axial phone sensors.

Magnitude- and rotation-invariant feature extraction from 5-second
sensor windows with one missing modality, per-scenario gradient-boosted
classification with K-fold majority voting, and an ablation runner over
feature configurations.
"""

from .aggregation import (
    AblationConfig,
    AggregationKind,
    DEFAULT_CONFIG,
    FULL_ABLATION_GRID,
    FeatureSchema,
    FeatureVector,
    aggregate,
    build_feature_vector,
    config_length,
    schema_for,
)
from .data_io import (
    CLASS_NAMES,
    Location,
    ModalityKind,
    ModalityMask,
    NONE_MISSING,
    RawWindow,
    assemble_windows,
    detect_missing_modality,
    filter_locations,
    load_channel_file,
    load_dataset,
    load_window_cache,
    save_window_cache,
    synth_dataset,
)
from .features import (
    FEATURE_CATALOG,
    Spectrum,
    acf,
    acf_features,
    band_energies,
    dct_magnitudes,
    extract_signal_features,
    spectral_entropy,
    spectral_shape,
    time_features,
    welch_psd,
    znorm,
)
from .model import (
    GbtModel,
    GbtParams,
    balanced_weights,
    confusion_matrix,
    fit,
    macro_f1,
    predict,
    predict_proba,
)
from .pipeline import (
    AblationReport,
    ModelBundle,
    SignalFeatureExtractor,
    final_model,
    kfold_split,
    load_bundle,
    majority_vote_predict,
    oof_score,
    run_ablation,
    save_bundle,
    train_bundle,
)
from .processing import (
    DerivedSignalSet,
    derive_signals,
    gradient1,
    gradient2,
    integral,
    scale_units,
    smv,
)

__version__ = "0.1.0"
