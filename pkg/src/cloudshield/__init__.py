"""Two-step HPC anomaly and attack detection for cloud hosts.

Step 1 flags windows whose LSTM reconstruction errors are unlikely under a
KDE of normal-workload errors; step 2 pauses the workload and asks two more
KDE detectors (known attacks, certified benign programs) what is left.
"""

from .engine import DetectionEngine, DetectionEvent, DetectorSet, EngineConfig, latency_model, run_offline
from .features import EventUniverse, first_pc_importance, select_features
from .predictor import PredictorModel, TrainConfig, predict_next, train
from .red import KdeDetector, RedSet, build_detector, compute_red, update_detector
from .trace import EVENTS, BehaviorSample, ScenarioLabel, Trace, TraceFormatError, load_trace, save_trace

__version__ = "0.1.0"
