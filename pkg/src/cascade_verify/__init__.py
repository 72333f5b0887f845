"""Emotion-robust speaker verification with a gender -> emotion -> speaker HMM cascade."""

from .cascade import CascadeConfig, mode_score, verification_score, verify
from .errors import CascadeError
from .evaluation import EvalConfig, compute_eer, run_experiment_suite
from .frontend import FrontendConfig, extract_features, load_wav
from .hmm import Hmm, TrainConfig, train_baum_welch
from .manifest import DatasetManifest, read_manifest
from .synth import SynthSpec, generate_corpus
from .training import ModelRegistry, build_registry, load_registry

__version__ = "0.1.0"
