"""Build and persist the model hierarchy: gender, emotion and claimant models."""

from __future__ import annotations

import hashlib
import json
import logging
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

from .errors import IntegrityError, InsufficientData, ManifestInvalid, MissingModel
from .frontend import FeatureSequence, FrontendConfig, features_from_wav
from .hmm import Hmm, TrainConfig, dumps_model, load_model, train_baum_welch
from .manifest import GENDERS, DatasetManifest, Entry, validate_manifest

log = logging.getLogger(__name__)

INDEX_NAME = "registry.json"
INDEX_FORMAT = "cascade-verify-registry/1"

# registry key kinds, in build order
GENDER = "gender"
EMOTION = "emotion"
EMOTION_POOLED = "emotion_pooled"
SPEAKER = "speaker"
SPEAKER_GENDER = "speaker_gender"
SPEAKER_POOLED = "speaker_pooled"
KINDS = (GENDER, EMOTION, EMOTION_POOLED, SPEAKER, SPEAKER_GENDER, SPEAKER_POOLED)


class FeatureStore:
    """Lazily featurized manifest audio, memoised per path."""

    def __init__(self, manifest: DatasetManifest, cfg: FrontendConfig | None = None, cache_dir=None):
        self.manifest = manifest
        self.cfg = cfg or FrontendConfig()
        self.cache_dir = cache_dir
        self._memo: dict[str, FeatureSequence] = {}

    def __call__(self, entry: Entry) -> FeatureSequence:
        seq = self._memo.get(entry.path)
        if seq is None:
            seq = features_from_wav(self.manifest.resolve(entry), self.cfg, self.cache_dir)
            self._memo[entry.path] = seq
        return seq


def model_relpath(key: tuple) -> str:
    """``<stage>/<label>.model`` layout of one registry key."""
    kind, *parts = key
    return "/".join((kind, *parts[:-1], f"{parts[-1]}.model"))


def model_label(key: tuple) -> str:
    return ":".join(key)


def training_sets(m: DatasetManifest) -> dict[tuple, list[Entry]]:
    """Registry key -> the train-split entries that model is fitted on.

    Claimant-side keys cover claimants only; imposters never get models.
    """
    sets: dict[tuple, list[Entry]] = {}
    train = [e for e in m.entries if e.split == "train"]
    for g in GENDERS:
        sets[(GENDER, g)] = [e for e in train if e.gender == g]
    for g in GENDERS:
        for emo in m.emotion_set:
            sets[(EMOTION, g, emo)] = [e for e in train if e.gender == g and e.emotion == emo]
    for emo in m.emotion_set:
        sets[(EMOTION_POOLED, emo)] = [e for e in train if e.emotion == emo]
    claimants = m.claimants()
    for spk, g in claimants.items():
        mine = [e for e in train if e.speaker_id == spk]
        for emo in m.emotion_set:
            sets[(SPEAKER, g, emo, spk)] = [e for e in mine if e.emotion == emo]
    for spk, g in claimants.items():
        sets[(SPEAKER_GENDER, g, spk)] = [e for e in train if e.speaker_id == spk]
    for spk in claimants:
        sets[(SPEAKER_POOLED, spk)] = [e for e in train if e.speaker_id == spk]
    return sets


def model_seed(base_seed: int, key: tuple) -> int:
    return (base_seed + zlib.crc32(model_label(key).encode())) % (2**32)


def _fit(args):
    key, mats, cfg = args
    res = train_baum_welch(mats, replace(cfg, init_seed=model_seed(cfg.init_seed, key)), model_label(key))
    return key, res


@dataclass
class ModelRegistry:
    models: dict[tuple, Hmm]
    emotion_set: list[str]
    claimants: dict[str, str]  # speaker_id -> gender
    traces: dict[tuple, list[float]] = field(default_factory=dict)
    # frontend settings the models were trained on; test audio must use the same
    frontend: dict | None = None

    def get(self, key: tuple) -> Hmm:
        try:
            return self.models[key]
        except KeyError:
            raise MissingModel(key) from None

    def keys(self, kind: str) -> list[tuple]:
        return [k for k in self.models if k[0] == kind]

    # views named after the model families
    @property
    def gender_models(self):
        return {k[1]: m for k, m in self.models.items() if k[0] == GENDER}

    @property
    def emotion_models(self):
        return {k[1:]: m for k, m in self.models.items() if k[0] == EMOTION}

    @property
    def speaker_models(self):
        return {k[1:]: m for k, m in self.models.items() if k[0] == SPEAKER}

    @property
    def gender_pooled_speaker_models(self):
        return {k[1:]: m for k, m in self.models.items() if k[0] == SPEAKER_GENDER}

    @property
    def pooled_speaker_models(self):
        return {k[1]: m for k, m in self.models.items() if k[0] == SPEAKER_POOLED}

    @property
    def feature_dim(self) -> int:
        return next(iter(self.models.values())).feature_dim


def _train_keys(keys, sets, features, cfg, jobs=1, training_log=None):
    for key in keys:
        if not sets[key]:
            raise InsufficientData(key[1:] if len(key) > 2 else key[1])
    tasks = [(key, [features(e).vectors for e in sets[key]], cfg) for key in keys]
    if jobs > 1:
        with ProcessPoolExecutor(jobs) as pool:
            results = list(pool.map(_fit, tasks))
    else:
        results = [_fit(t) for t in tasks]
    out = {}
    for key, res in results:
        res.model.check()
        out[key] = res
        if training_log is not None:
            training_log.append({
                "key": list(key),
                "n_sequences": res.n_sequences,
                "n_frames": res.n_frames,
                "iterations": len(res.trace) - 1,
                "trace": res.trace,
                "paths": [e.path for e in sets[key]],
            })
    return out


def train_gender_models(m, cfg: TrainConfig, features=None, jobs=1, training_log=None):
    features = features or FeatureStore(m)
    sets = training_sets(m)
    res = _train_keys([(GENDER, g) for g in GENDERS], sets, features, cfg, jobs, training_log)
    return {k[1]: r.model for k, r in res.items()}


def train_emotion_models(m, cfg: TrainConfig, features=None, jobs=1, training_log=None):
    features = features or FeatureStore(m)
    sets = training_sets(m)
    keys = [(EMOTION, g, e) for g in GENDERS for e in m.emotion_set]
    res = _train_keys(keys, sets, features, cfg, jobs, training_log)
    return {k[1:]: r.model for k, r in res.items()}


def train_speaker_models(m, cfg: TrainConfig, features=None, jobs=1, training_log=None):
    """Returns (emotion-specific, gender-pooled, fully pooled) claimant model maps."""
    features = features or FeatureStore(m)
    sets = training_sets(m)
    keys = [k for k in sets if k[0] in (SPEAKER, SPEAKER_GENDER, SPEAKER_POOLED)]
    res = _train_keys(keys, sets, features, cfg, jobs, training_log)
    by_kind = {kind: {k[1:] if kind != SPEAKER_POOLED else k[1]: r.model
                      for k, r in res.items() if k[0] == kind}
               for kind in (SPEAKER, SPEAKER_GENDER, SPEAKER_POOLED)}
    return by_kind[SPEAKER], by_kind[SPEAKER_GENDER], by_kind[SPEAKER_POOLED]


def build_registry(m: DatasetManifest, cfg: TrainConfig, features=None, model_dir=None,
                   jobs: int = 1, check_files: bool = True) -> ModelRegistry:
    """Train every model the cascade and its baselines need; persist when ``model_dir`` is given."""
    problems = validate_manifest(m, check_files=check_files)
    if problems:
        raise ManifestInvalid(problems)
    features = features or FeatureStore(m)
    sets = training_sets(m)
    training_log: list[dict] = []
    results = _train_keys(list(sets), sets, features, cfg, jobs, training_log)
    reg = ModelRegistry(
        models={k: r.model for k, r in results.items()},
        emotion_set=list(m.emotion_set),
        claimants=m.claimants(),
        traces={k: r.trace for k, r in results.items()},
        frontend=asdict(features.cfg) if hasattr(features, "cfg") else None,
    )
    if model_dir is not None:
        save_registry(reg, model_dir)
        with open(Path(model_dir) / "training_log.jsonl", "w") as fh:
            for rec in training_log:
                fh.write(json.dumps(rec) + "\n")
    return reg


def save_registry(reg: ModelRegistry, model_dir) -> Path:
    model_dir = Path(model_dir)
    rows = []
    for key, model in reg.models.items():
        rel = model_relpath(key)
        text = dumps_model(model).encode()
        (model_dir / rel).parent.mkdir(parents=True, exist_ok=True)
        (model_dir / rel).write_bytes(text)
        rows.append({"key": list(key), "path": rel, "sha256": hashlib.sha256(text).hexdigest()})
    index = {
        "format": INDEX_FORMAT,
        "emotion_set": reg.emotion_set,
        "claimants": reg.claimants,
        "frontend": reg.frontend,
        "models": rows,
    }
    path = model_dir / INDEX_NAME
    path.write_text(json.dumps(index, indent=1) + "\n")
    return path


def load_registry(model_dir) -> ModelRegistry:
    """Reload a persisted registry, verifying every model file against its recorded hash."""
    model_dir = Path(model_dir)
    index_path = model_dir / INDEX_NAME
    try:
        index = json.loads(index_path.read_text())
    except FileNotFoundError:
        raise IntegrityError(index_path, "registry index not found") from None
    except json.JSONDecodeError as exc:
        raise IntegrityError(index_path, f"unreadable index ({exc})") from None
    if index.get("format") != INDEX_FORMAT:
        raise IntegrityError(index_path, f"unsupported index format {index.get('format')!r}")
    models = {}
    for row in index["models"]:
        path = model_dir / row["path"]
        try:
            raw = path.read_bytes()
        except FileNotFoundError:
            raise IntegrityError(path, "model file missing") from None
        if hashlib.sha256(raw).hexdigest() != row["sha256"]:
            raise IntegrityError(path, "content hash does not match registry index")
        try:
            models[tuple(row["key"])] = load_model(path)
        except (ValueError, KeyError, json.JSONDecodeError) as exc:
            raise IntegrityError(path, f"cannot parse model ({exc})") from None
    return ModelRegistry(models, index["emotion_set"], index["claimants"], frontend=index.get("frontend"))


def audit_registry(reg: ModelRegistry, m: DatasetManifest) -> list[tuple]:
    """Registry keys the cascade and baselines would need for the manifest's test trials but lack."""
    needed = set((GENDER, g) for g in GENDERS)
    needed |= {(EMOTION, g, e) for g in GENDERS for e in m.emotion_set}
    needed |= {(EMOTION_POOLED, e) for e in m.emotion_set}
    for spk, g in m.claimants().items():
        needed |= {(SPEAKER, g, e, spk) for e in m.emotion_set}
        needed.add((SPEAKER_GENDER, g, spk))
        needed.add((SPEAKER_POOLED, spk))
    return sorted(needed - set(reg.models))


def registry_counts(reg: ModelRegistry) -> dict[str, int]:
    return {kind: len(reg.keys(kind)) for kind in KINDS}

