"""Deterministic source-filter generator for a paper-shaped emotional speech corpus.

Each utterance is a glottal pulse train pushed through three time-varying
resonators.  Speaker identity lives in the resonator frequencies and F0,
the sentence in a shared sequence of vowel-like resonance targets, and
emotion in F0 scale, speaking rate, breathiness, bandwidth, loudness and
token-to-token variability.  Each gender also voices every emotional style
with its own fixed formant/F0 deviation; the neutral style carries none of
that and the least token variability, so it is the reference voice.
"""

from __future__ import annotations

import json
import math
import zlib
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.signal import lfilter

from .errors import MalformedWav, SpecInvalid
from .frontend import Waveform, wav_info, write_wav
from .manifest import GENDERS, PAPER_EMOTIONS, DatasetManifest, Entry, write_manifest


@dataclass(frozen=True)
class EmotionStyle:
    f0_scale: float
    rate_scale: float
    breathiness: float
    bandwidth_scale: float
    level_db: float
    variability: float
    # size of the gender- and speaker-specific ways this emotion is voiced (0 for a reference style)
    expressiveness: float = 1.0


# neutral is the identity style; the aroused styles (anger, happiness, fear) and the subdued ones
# (sadness, disgust) are deliberately near each other
DEFAULT_STYLES = {
    "neutral": EmotionStyle(1.00, 1.00, 0.02, 1.00, 0.0, 0.015, 0.0),
    "anger": EmotionStyle(1.30, 1.20, 0.08, 0.85, 5.0, 0.08),
    "sadness": EmotionStyle(0.84, 0.78, 0.12, 1.30, -5.0, 0.07),
    "happiness": EmotionStyle(1.26, 1.16, 0.07, 0.90, 4.0, 0.08),
    "disgust": EmotionStyle(0.88, 0.82, 0.11, 1.25, -4.0, 0.07),
    "fear": EmotionStyle(1.34, 1.24, 0.10, 0.95, 3.0, 0.09),
}

_BASE_FORMANTS = {"male": (500.0, 1500.0, 2500.0), "female": (620.0, 1850.0, 3100.0)}
# glottal pulse smoothing: female sources roll off faster
_BASE_TILT = {"male": 0.94, "female": 0.80}
_BASE_BANDWIDTHS = (70.0, 100.0, 140.0)
_BLOCK = 80


@dataclass
class SynthSpec:
    n_speakers_per_gender: int | tuple = 10
    emotion_set: tuple = PAPER_EMOTIONS
    n_sentences_train: int = 4
    n_sentences_test: int = 4
    n_repetitions: int = 9
    utterance_seconds: float = 1.5
    sample_rate_hz: int = 16000
    speaker_formant_spread_hz: float = 120.0
    emotion_strength: float = 1.0
    noise_snr_db: float = 30.0
    base_f0_male: tuple = (120.0, 15.0)
    base_f0_female: tuple = (210.0, 15.0)
    claimant_fraction: float = 17 / 20
    rng_seed: int = 0
    styles: dict = field(default_factory=lambda: dict(DEFAULT_STYLES))

    def speakers_per_gender(self) -> dict[str, int]:
        n = self.n_speakers_per_gender
        if isinstance(n, (tuple, list)):
            return dict(zip(GENDERS, (int(v) for v in n)))
        return {g: int(n) for g in GENDERS}

    def validate(self) -> None:
        counts = self.speakers_per_gender()
        if any(v < 1 for v in counts.values()):
            raise SpecInvalid("every gender needs at least one speaker")
        if min(self.n_sentences_train, self.n_sentences_test, self.n_repetitions) < 1:
            raise SpecInvalid("sentence and repetition counts must be >= 1")
        if self.sample_rate_hz < 8000:
            raise SpecInvalid("sample_rate_hz must be >= 8000")
        if self.utterance_seconds <= 0:
            raise SpecInvalid("utterance_seconds must be positive")
        if len(set(self.emotion_set)) != len(self.emotion_set) or not self.emotion_set:
            raise SpecInvalid("emotion_set must hold distinct labels")
        unknown = [e for e in self.emotion_set if e not in self.styles]
        if unknown:
            raise SpecInvalid(f"no acoustic style defined for emotions {unknown}")
        if self.speaker_formant_spread_hz < 0 or self.emotion_strength < 0:
            raise SpecInvalid("separability knobs must be non-negative")
        if not 0 < self.claimant_fraction <= 1:
            raise SpecInvalid("claimant_fraction must lie in (0, 1]")

    def to_json(self) -> str:
        d = asdict(self)
        d["styles"] = {k: asdict(v) for k, v in self.styles.items()}
        return json.dumps(d, indent=1, default=list) + "\n"


def n_claimants(n_speakers: int, fraction: float) -> int:
    """Claimants per gender: 17 of 20 in the reference layout, same proportion otherwise."""
    if n_speakers == 1:
        return 1
    return min(n_speakers - 1, max(1, int(math.floor(n_speakers * fraction + 1e-9))))


def plan_corpus(spec: SynthSpec, root=".") -> DatasetManifest:
    """The manifest ``generate_corpus`` would write, without rendering any audio."""
    spec.validate()
    train_ids = range(1, spec.n_sentences_train + 1)
    test_ids = range(spec.n_sentences_train + 1, spec.n_sentences_train + spec.n_sentences_test + 1)
    entries = []
    for gender, n in spec.speakers_per_gender().items():
        n_claim = n_claimants(n, spec.claimant_fraction)
        for k in range(n):
            spk = f"{gender[0]}{k + 1:02d}"
            role = "claimant" if k < n_claim else "imposter"
            for emo in spec.emotion_set:
                for split, ids in (("train", train_ids), ("test", test_ids)):
                    for sid in ids:
                        for rep in range(1, spec.n_repetitions + 1):
                            path = f"corpus/{gender}/{spk}/{emo}/s{sid}_r{rep}.wav"
                            entries.append(Entry(path, spk, gender, emo, sid, rep, split, role))
    return DatasetManifest(entries, list(spec.emotion_set), Path(root))


# --------------------------------------------------------------------------
# Synthesis


# formant multipliers of a small vowel inventory; sentences are sequences over it
_VOWELS = np.array([
    [1.45, 0.80, 1.00],
    [0.60, 1.35, 1.08],
    [0.95, 1.10, 0.97],
    [0.70, 0.70, 0.95],
    [1.15, 1.25, 1.04],
    [0.80, 0.95, 1.00],
])


def _speaker_traits(spec: SynthSpec, gender: str, spk_index: int):
    """F0, resonance frequencies and glottal tilt of one speaker."""
    rng = np.random.default_rng((spec.rng_seed, 1, GENDERS.index(gender), spk_index))
    f0_mean, f0_spread = spec.base_f0_male if gender == "male" else spec.base_f0_female
    f0 = f0_mean + rng.uniform(-f0_spread, f0_spread)
    tract = 1.0 + rng.uniform(-1.0, 1.0) * spec.speaker_formant_spread_hz / 2500.0
    offsets = rng.uniform(-1.0, 1.0, 3) * spec.speaker_formant_spread_hz * np.array([0.5, 1.0, 1.5])
    formants = np.array(_BASE_FORMANTS[gender]) * tract + offsets
    tilt = _BASE_TILT[gender] + rng.uniform(-1.0, 1.0) * min(0.05, spec.speaker_formant_spread_hz / 4000.0)
    return f0, formants, tilt


def _expression(spec: SynthSpec, gender: str, emotion: str):
    """Formant and F0 factors for how speakers of ``gender`` voice ``emotion``."""
    amount = spec.emotion_strength * spec.styles[emotion].expressiveness
    rng = np.random.default_rng((spec.rng_seed, 4, GENDERS.index(gender), zlib.crc32(emotion.encode())))
    return 1.0 + amount * rng.normal(0.0, 0.06, 3), 1.0 + amount * rng.normal(0.0, 0.08)


def _sentence_targets(spec: SynthSpec, sentence_id: int):
    """Vowel sequence (as formant multipliers) and relative durations, shared by all speakers."""
    rng = np.random.default_rng((spec.rng_seed, 2, sentence_id))
    n_seg = int(rng.integers(5, 8))
    vowels = rng.integers(0, len(_VOWELS), n_seg)
    dur = rng.uniform(0.6, 1.4, n_seg)
    return _VOWELS[vowels], dur / dur.sum()


def _resonate(x, freqs, bws, sr):
    """Cascade of unity-DC-gain two-pole resonators, parameters updated per block."""
    y = x
    n_blocks = freqs.shape[0]
    for k in range(freqs.shape[1]):
        out = np.empty_like(y)
        zi = np.zeros(2)
        for b in range(n_blocks):
            sl = slice(b * _BLOCK, min((b + 1) * _BLOCK, len(y)))
            r = math.exp(-math.pi * bws[b, k] / sr)
            c1 = 2.0 * r * math.cos(2.0 * math.pi * freqs[b, k] / sr)
            c2 = -r * r
            out[sl], zi = lfilter([1.0 - c1 - c2], [1.0, -c1, -c2], y[sl], zi=zi)
        y = out
    return y


def synthesize_utterance(spec: SynthSpec, gender: str, spk_index: int, emotion: str,
                         sentence_id: int, repetition: int) -> Waveform:
    sr = spec.sample_rate_hz
    n = int(round(spec.utterance_seconds * sr))
    style = spec.styles[emotion]
    s = spec.emotion_strength

    def scaled(v, identity):
        return identity + s * (v - identity)

    f0_scale = scaled(style.f0_scale, 1.0)
    rate = scaled(style.rate_scale, 1.0)
    breath = scaled(style.breathiness, DEFAULT_STYLES["neutral"].breathiness)
    bw_scale = scaled(style.bandwidth_scale, 1.0)
    level_db = s * style.level_db
    var = style.variability

    f0_spk, formants_spk, tilt = _speaker_traits(spec, gender, spk_index)
    formant_expr, f0_expr = _expression(spec, gender, emotion)
    formants_spk = formants_spk * formant_expr
    f0_spk = f0_spk * f0_expr
    mult, frac = _sentence_targets(spec, sentence_id)
    rng = np.random.default_rng(
        (spec.rng_seed, 3, GENDERS.index(gender), spk_index,
         spec.emotion_set.index(emotion), sentence_id, repetition)
    )

    # token-level perturbations: larger for emotional speech
    f0_tok = f0_spk * f0_scale * (1.0 + rng.normal(0.0, var))
    formants_tok = formants_spk * (1.0 + rng.normal(0.0, var / 3.0, 3))
    active = float(np.clip(0.8 / rate * (1.0 + rng.normal(0.0, var)), 0.45, 0.9))
    start = 0.05 + rng.uniform(0.0, 0.9 - active) * 0.5

    t = np.arange(n) / sr
    rel = (t / spec.utterance_seconds - start) / active  # 0..1 across the spoken part
    speaking = (rel >= 0.0) & (rel < 1.0)

    # per-block formant track: piecewise-constant targets smoothed by linear interpolation
    n_blocks = (n + _BLOCK - 1) // _BLOCK
    block_rel = np.clip((np.arange(n_blocks) * _BLOCK / sr / spec.utterance_seconds - start) / active, 0, 1)
    bounds = np.concatenate([[0.0], np.cumsum(frac)])
    centres = 0.5 * (bounds[:-1] + bounds[1:])
    track = np.column_stack([
        np.interp(block_rel, centres, mult[:, k] * formants_tok[k]) for k in range(3)
    ])
    track *= 1.0 + rng.normal(0.0, var / 6.0, track.shape)
    bws = np.tile(np.array(_BASE_BANDWIDTHS) * bw_scale, (n_blocks, 1))

    # F0 contour: declination, a prosodic wobble at the syllable rate, and frame-level jitter
    wobble = 0.06 * s * (f0_scale - 1.0 + 0.2) * np.sin(2 * np.pi * 3.0 * rate * t + rng.uniform(0, 2 * np.pi))
    drift = np.cumsum(rng.normal(0.0, var * 0.02, n)) / np.sqrt(sr / 100.0)
    f0 = f0_tok * (1.0 - 0.12 * np.clip(rel, 0, 1) + wobble + np.clip(drift, -0.2, 0.2))
    phase = np.cumsum(f0 / sr)
    pulses = np.diff(np.floor(phase), prepend=np.floor(phase[0])).astype(float)
    voiced = lfilter([1.0], [1.0, -tilt], pulses)
    source = voiced + breath * rng.normal(0.0, 1.0, n) * 3.0

    speech = _resonate(source, track, bws, sr)
    syllables = 0.55 + 0.45 * np.sin(np.pi * 4.0 * rate * np.clip(rel, 0, 1) * active * spec.utterance_seconds) ** 2
    ramp = np.clip(np.minimum(rel, 1.0 - rel) * active * spec.utterance_seconds / 0.03, 0.0, 1.0)
    speech = speech * syllables * ramp * speaking

    rms = np.sqrt(np.mean(speech[speaking] ** 2)) if np.any(speaking) else 0.0
    target = 0.05 * 10.0 ** (level_db / 20.0)
    speech = speech * (target / rms) if rms > 0 else speech

    if math.isinf(spec.noise_snr_db) and spec.noise_snr_db < 0:
        out = rng.normal(0.0, 0.05, n)
    else:
        noise_rms = 0.05 / 10.0 ** (spec.noise_snr_db / 20.0)
        out = speech + rng.normal(0.0, noise_rms, n)
    return Waveform(np.clip(out, -1.0, 32767 / 32768), sr)


def _render(args):
    spec, out_dir, entry, spk_index = args
    w = synthesize_utterance(spec, entry.gender, spk_index, entry.emotion, entry.sentence_id, entry.repetition)
    write_wav(Path(out_dir) / entry.path, w)


def generate_corpus(spec: SynthSpec, out_dir, jobs: int = 1) -> DatasetManifest:
    """Render every utterance to ``out_dir/corpus/...`` and write ``manifest.csv`` and ``spec.used``."""
    out_dir = Path(out_dir)
    manifest = plan_corpus(spec, out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    tasks = [(spec, str(out_dir), e, int(e.speaker_id[1:]) - 1) for e in manifest.entries]
    if jobs > 1:
        with ProcessPoolExecutor(jobs) as pool:
            list(pool.map(_render, tasks, chunksize=32))
    else:
        for task in tasks:
            _render(task)
    write_manifest(manifest, out_dir / "manifest.csv")
    (out_dir / "spec.used").write_text(spec.to_json())
    return manifest


# --------------------------------------------------------------------------
# Summaries


@dataclass
class CorpusSummary:
    counts: Counter  # (gender, emotion, split, role) -> utterances
    seconds: dict    # split -> total duration; absent when audio is not on disk

    def total(self, **criteria) -> int:
        keys = ("gender", "emotion", "split", "role")
        return sum(
            c for k, c in self.counts.items()
            if all(k[keys.index(name)] == v for name, v in criteria.items())
        )

    def format(self) -> str:
        lines = ["gender  emotion     split  role       utterances"]
        for (g, e, sp, r), c in sorted(self.counts.items()):
            lines.append(f"{g:<7} {e:<11} {sp:<6} {r:<10} {c:>6}")
        for sp, secs in sorted(self.seconds.items()):
            lines.append(f"total {sp} audio: {secs:.1f} s")
        return "\n".join(lines)


def describe_corpus(manifest: DatasetManifest, with_durations: bool = True) -> CorpusSummary:
    counts = Counter((e.gender, e.emotion, e.split, e.role) for e in manifest.entries)
    seconds: dict[str, float] = {}
    if with_durations:
        for e in manifest.entries:
            p = manifest.resolve(e)
            if not p.exists():
                continue
            try:
                rate, n = wav_info(p)
            except MalformedWav:
                continue
            seconds[e.split] = seconds.get(e.split, 0.0) + n / rate
    return CorpusSummary(counts, seconds)
