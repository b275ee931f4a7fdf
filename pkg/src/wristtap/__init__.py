"""Tap-gesture biometrics for wrist-worn inertial sensors.

A library and CLI covering the full pipeline: dataset ingestion, gesture
windowing, 220-member feature extraction, random-forest classification,
and the authentication / intent-recognition evaluation protocols with
F-measure, EER, and tuned-FAR reporting.
"""

from .core import (ALL_KINDS, TRIAXIAL_KINDS, GestureWindow, NonTapLabel,
                   QuaternionSample, QuaternionSeries, SensorKind, SensorStream,
                   TapLabel, TriaxialSample, TriaxialSeries, WindowParams,
                   energy, normalize_quaternion)
from .features import (FeatureVector, expand_dimensions, feature_names, featurize,
                       kinematic_features, low_pass_filter, stat_features)
from .forest import (ForestModel, LabeledExample, load_model, save_model, score,
                     score_batch, top_features, train_forest, train_forest_xy)
from .ingest import (ActivitySpan, Dataset, NfcEvent, load_dataset, save_dataset,
                     validate_sampling)
from .metrics import (MetricSet, ScoredTrial, compute_eer, confusion_metrics,
                      evaluate_trials, far_by_activity, optimize_threshold_min_frr)
from .windows import (Excluded, extract_activity_windows, extract_tap_window,
                      extract_tap_windows, segment_activity_windows, truncate_trailing)

__version__ = "0.1.0"
