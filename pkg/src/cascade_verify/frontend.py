"""Audio frontend: 16-bit PCM WAV loading, pre-emphasis, framing and MFCCs."""

from __future__ import annotations

import hashlib
import os
import struct
import wave
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigInvalid, MalformedWav, SignalTooShort, UnsupportedFormat

LOG_FLOOR = 1e-10
CACHE_ENV = "CASCADE_VERIFY_CACHE"
_CVF_MAGIC = b"CVF1"
_WINDOWS = ("hamming", "hann", "rect")


@dataclass
class Waveform:
    samples: np.ndarray
    sample_rate_hz: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=float)
        if self.sample_rate_hz <= 0:
            raise ValueError("sample_rate_hz must be positive")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("waveform contains non-finite samples")

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate_hz


@dataclass
class FrameSet:
    frames: np.ndarray  # (n_frames, frame_len_samples), windowed
    frame_len_samples: int
    hop_samples: int
    sample_rate_hz: int


@dataclass
class FeatureSequence:
    """A T x D observation sequence plus the framing it came from."""

    vectors: np.ndarray
    frame_len_samples: int = 0
    hop_samples: int = 0
    sample_rate_hz: int = 0

    def __post_init__(self):
        v = np.asarray(self.vectors, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if v.ndim != 2 or v.shape[0] < 1 or v.shape[1] < 1:
            raise ValueError(f"feature matrix must be T x D with T, D >= 1, got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("feature matrix contains non-finite entries")
        self.vectors = v

    @property
    def T(self) -> int:
        return self.vectors.shape[0]

    @property
    def D(self) -> int:
        return self.vectors.shape[1]


@dataclass
class FrontendConfig:
    preemphasis_alpha: float = 0.97
    frame_ms: float = 16.0
    overlap_ms: float = 9.0
    window: str = "hamming"
    n_fft: int = 256
    n_mel_filters: int = 26
    n_ceps: int = 13
    fmin_hz: float = 0.0
    fmax_hz: float = 8000.0
    apply_cmn: bool = False
    deltas: bool = False

    def validate(self, sample_rate_hz: int | None = None) -> None:
        if not 0.0 <= self.preemphasis_alpha < 1.0:
            raise ConfigInvalid(f"preemphasis_alpha must lie in [0, 1), got {self.preemphasis_alpha}")
        if not self.frame_ms > self.overlap_ms >= 0.0:
            raise ConfigInvalid("need frame_ms > overlap_ms >= 0")
        if self.window not in _WINDOWS:
            raise ConfigInvalid(f"window must be one of {_WINDOWS}, got {self.window!r}")
        if not 1 <= self.n_ceps <= self.n_mel_filters:
            raise ConfigInvalid("need 1 <= n_ceps <= n_mel_filters")
        if not self.fmin_hz < self.fmax_hz:
            raise ConfigInvalid("need fmin_hz < fmax_hz")
        if sample_rate_hz is not None:
            if self.fmax_hz > sample_rate_hz / 2:
                raise ConfigInvalid(
                    f"fmax_hz={self.fmax_hz} exceeds Nyquist for {sample_rate_hz} Hz audio"
                )
            if self.n_fft < frame_lengths(self, sample_rate_hz)[0]:
                raise ConfigInvalid("n_fft is smaller than the frame length")

    def fingerprint(self) -> str:
        return repr(sorted(asdict(self).items()))


# --------------------------------------------------------------------------
# WAV I/O


def load_wav(path) -> Waveform:
    """Read a mono 16-bit PCM RIFF/WAVE file into samples scaled to [-1, 1)."""
    try:
        with wave.open(str(path), "rb") as wf:
            n_channels = wf.getnchannels()
            width = wf.getsampwidth()
            rate = wf.getframerate()
            n_frames = wf.getnframes()
            comptype = wf.getcomptype()
            raw = wf.readframes(n_frames)
    except wave.Error as exc:
        if str(exc).startswith("unknown format"):
            raise UnsupportedFormat(f"{path}: {exc}") from exc
        raise MalformedWav(f"{path}: {exc}") from exc
    except EOFError as exc:
        raise MalformedWav(f"{path}: truncated header") from exc

    if comptype != "NONE":
        raise UnsupportedFormat(f"{path}: compressed audio ({comptype})")
    if n_channels != 1:
        raise UnsupportedFormat(f"{path}: {n_channels} channels, expected mono")
    if width != 2:
        raise UnsupportedFormat(f"{path}: {8 * width}-bit samples, expected 16-bit")
    if len(raw) != 2 * n_frames:
        raise MalformedWav(f"{path}: data chunk truncated ({len(raw)} of {2 * n_frames} bytes)")
    if rate <= 0:
        raise MalformedWav(f"{path}: sample rate {rate}")
    pcm = np.frombuffer(raw, dtype="<i2")
    return Waveform(pcm.astype(float) / 32768.0, rate)


def write_wav(path, waveform: Waveform) -> None:
    pcm = np.clip(np.round(waveform.samples * 32768.0), -32768, 32767).astype("<i2")
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(int(waveform.sample_rate_hz))
        wf.writeframes(pcm.tobytes())


def wav_info(path) -> tuple[int, int]:
    """(sample_rate_hz, n_samples) from the header alone."""
    try:
        with wave.open(str(path), "rb") as wf:
            return wf.getframerate(), wf.getnframes()
    except (wave.Error, EOFError) as exc:
        raise MalformedWav(f"{path}: {exc}") from exc


# --------------------------------------------------------------------------
# Signal chain


def pre_emphasize(w: Waveform, alpha: float) -> Waveform:
    """First-order high-pass ``y[t] = x[t] - alpha * x[t-1]`` with ``y[0] = x[0]``."""
    x = w.samples
    y = x.copy()
    if len(x) > 1:
        y[1:] = x[1:] - alpha * x[:-1]
    return Waveform(y, w.sample_rate_hz)


def frame_lengths(cfg: FrontendConfig, sample_rate_hz: int) -> tuple[int, int]:
    frame_len = int(round(cfg.frame_ms * sample_rate_hz / 1000.0))
    hop = int(round((cfg.frame_ms - cfg.overlap_ms) * sample_rate_hz / 1000.0))
    return frame_len, hop


def window_function(name: str, n: int) -> np.ndarray:
    if name == "hamming":
        return np.hamming(n)
    if name == "hann":
        return np.hanning(n)
    if name == "rect":
        return np.ones(n)
    raise ConfigInvalid(f"unknown window {name!r}")


def frame_signal(w: Waveform, cfg: FrontendConfig) -> FrameSet:
    frame_len, hop = frame_lengths(cfg, w.sample_rate_hz)
    if not frame_len > hop > 0:
        raise ConfigInvalid(f"frame length {frame_len} / hop {hop} samples are not usable")
    n = len(w.samples)
    if n < frame_len:
        raise SignalTooShort(f"{n} samples is shorter than one {frame_len}-sample frame")
    n_frames = (n - frame_len) // hop + 1
    idx = np.arange(frame_len)[None, :] + hop * np.arange(n_frames)[:, None]
    frames = w.samples[idx] * window_function(cfg.window, frame_len)
    return FrameSet(frames, frame_len, hop, w.sample_rate_hz)


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=float) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=float) / 2595.0) - 1.0)


def mel_centers(n_filters: int, fmin_hz: float, fmax_hz: float) -> np.ndarray:
    """Edge frequencies (Hz) of ``n_filters`` triangles: n_filters + 2 points equally spaced in mel."""
    return mel_to_hz(np.linspace(hz_to_mel(fmin_hz), hz_to_mel(fmax_hz), n_filters + 2))


def mel_filterbank(n_filters, n_fft, sample_rate_hz, fmin_hz, fmax_hz) -> np.ndarray:
    """Triangular filters evaluated at the rfft bin frequencies, shape (n_filters, n_fft//2 + 1)."""
    edges = mel_centers(n_filters, fmin_hz, fmax_hz)
    freqs = np.arange(n_fft // 2 + 1) * sample_rate_hz / n_fft
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs[None, :] - lo) / (mid - lo)
    falling = (hi - freqs[None, :]) / (hi - mid)
    fb = np.maximum(0.0, np.minimum(rising, falling))
    empty = np.flatnonzero(fb.sum(axis=1) <= 0.0)
    if empty.size:
        raise ConfigInvalid(
            f"mel filters {empty.tolist()} cover no FFT bin; raise n_fft or lower n_mel_filters"
        )
    return fb


def dct_matrix(n: int) -> np.ndarray:
    """Orthonormal DCT-II basis; row k holds the k-th cosine."""
    k = np.arange(n)[:, None]
    i = np.arange(n)[None, :]
    m = np.sqrt(2.0 / n) * np.cos(np.pi * k * (2 * i + 1) / (2 * n))
    m[0] /= np.sqrt(2.0)
    return m


def log_mel_energies(frames: FrameSet, cfg: FrontendConfig) -> np.ndarray:
    if cfg.n_fft < frames.frame_len_samples:
        raise ConfigInvalid(f"n_fft={cfg.n_fft} < frame length {frames.frame_len_samples}")
    spectrum = np.abs(np.fft.rfft(frames.frames, n=cfg.n_fft, axis=1)) ** 2
    fb = mel_filterbank(cfg.n_mel_filters, cfg.n_fft, frames.sample_rate_hz, cfg.fmin_hz, cfg.fmax_hz)
    return np.log(np.maximum(spectrum @ fb.T, LOG_FLOOR))


def deltas(x: np.ndarray, width: int = 2) -> np.ndarray:
    """Regression deltas over +-``width`` frames with edge replication."""
    padded = np.pad(x, ((width, width), (0, 0)), mode="edge")
    num = sum(k * (padded[width + k : len(x) + width + k] - padded[width - k : len(x) + width - k])
              for k in range(1, width + 1))
    return num / (2 * sum(k * k for k in range(1, width + 1)))


def mfcc(frames: FrameSet, cfg: FrontendConfig) -> FeatureSequence:
    logmel = log_mel_energies(frames, cfg)
    ceps = logmel @ dct_matrix(cfg.n_mel_filters)[: cfg.n_ceps].T
    if cfg.apply_cmn:
        ceps = ceps - ceps.mean(axis=0, keepdims=True)
    if cfg.deltas:
        d1 = deltas(ceps)
        ceps = np.hstack([ceps, d1, deltas(d1)])
    return FeatureSequence(ceps, frames.frame_len_samples, frames.hop_samples, frames.sample_rate_hz)


def extract_features(w: Waveform, cfg: FrontendConfig) -> FeatureSequence:
    cfg.validate(w.sample_rate_hz)
    return mfcc(frame_signal(pre_emphasize(w, cfg.preemphasis_alpha), cfg), cfg)


# --------------------------------------------------------------------------
# CVF1 feature cache


def write_cvf(path, seq: FeatureSequence) -> None:
    v = np.ascontiguousarray(seq.vectors, dtype="<f8")
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(str(path) + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(_CVF_MAGIC + struct.pack("<II", *v.shape) + v.tobytes())
    os.replace(tmp, path)


def read_cvf(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) < 12 or data[:4] != _CVF_MAGIC:
        raise MalformedWav(f"{path}: not a CVF1 feature record")
    t, d = struct.unpack("<II", data[4:12])
    if len(data) != 12 + 8 * t * d:
        raise MalformedWav(f"{path}: CVF1 payload size mismatch")
    return np.frombuffer(data[12:], dtype="<f8").reshape(t, d).astype(float)


def features_from_wav(path, cfg: FrontendConfig, cache_dir=None) -> FeatureSequence:
    """Load + featurize one file, going through the CVF1 cache when one is configured.

    ``cache_dir`` defaults to the ``CASCADE_VERIFY_CACHE`` environment variable.
    Cache keys hash the audio bytes together with the frontend settings.
    """
    cache_dir = cache_dir or os.environ.get(CACHE_ENV)
    if not cache_dir:
        return extract_features(load_wav(path), cfg)

    raw = Path(path).read_bytes()
    key = hashlib.sha256(raw + cfg.fingerprint().encode()).hexdigest()
    cached = Path(cache_dir) / key[:2] / f"{key}.cvf"
    w = load_wav(path)
    frame_len, hop = frame_lengths(cfg, w.sample_rate_hz)
    if cached.exists():
        try:
            return FeatureSequence(read_cvf(cached), frame_len, hop, w.sample_rate_hz)
        except (MalformedWav, ValueError):
            cached.unlink(missing_ok=True)
    seq = extract_features(w, cfg)
    write_cvf(cached, seq)
    return seq
