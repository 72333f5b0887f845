import struct
import wave

import numpy as np
import pytest
import scipy.fft
from hypothesis import given, settings
from hypothesis import strategies as st

from cascade_verify.errors import ConfigInvalid, MalformedWav, SignalTooShort, UnsupportedFormat
from cascade_verify.frontend import (LOG_FLOOR, FrameSet, FrontendConfig, Waveform, dct_matrix, extract_features,
                                     features_from_wav, frame_lengths, frame_signal, load_wav, log_mel_energies,
                                     mel_centers, mel_filterbank, mfcc, pre_emphasize, read_cvf, write_cvf,
                                     write_wav)

CFG = FrontendConfig()


def _raw_wav(path, samples, rate=16000, channels=1, width=2):
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(channels)
        wf.setsampwidth(width)
        wf.setframerate(rate)
        wf.writeframes(bytes(samples))


def _parse_riff(path):
    """Minimal independent RIFF reader: (sample rate, int16 samples)."""
    data = open(path, "rb").read()
    assert data[:4] == b"RIFF" and data[8:12] == b"WAVE"
    pos, rate, pcm = 12, None, None
    while pos < len(data):
        cid, size = data[pos:pos + 4], struct.unpack("<I", data[pos + 4:pos + 8])[0]
        body = data[pos + 8:pos + 8 + size]
        if cid == b"fmt ":
            rate = struct.unpack("<I", body[4:8])[0]
        elif cid == b"data":
            pcm = struct.unpack(f"<{size // 2}h", body)
        pos += 8 + size + (size & 1)
    return rate, np.array(pcm, dtype=float)


class TestWav:
    def test_silence(self, tmp_path):
        write_wav(tmp_path / "s.wav", Waveform(np.zeros(16000), 16000))
        w = load_wav(tmp_path / "s.wav")
        assert w.sample_rate_hz == 16000
        assert len(w.samples) == 16000 and not np.any(w.samples)

    def test_full_scale_sample(self, tmp_path):
        _raw_wav(tmp_path / "one.wav", struct.pack("<h", 0x7FFF))
        assert load_wav(tmp_path / "one.wav").samples.tolist() == [32767 / 32768]

    def test_against_independent_parser_8k(self, tmp_path):
        rng = np.random.default_rng(0)
        x = rng.uniform(-0.9, 0.9, 4000)
        write_wav(tmp_path / "a.wav", Waveform(x, 8000))
        rate, pcm = _parse_riff(tmp_path / "a.wav")
        w = load_wav(tmp_path / "a.wav")
        assert w.sample_rate_hz == rate == 8000
        np.testing.assert_array_equal(w.samples, pcm / 32768.0)
        np.testing.assert_allclose(w.samples, x, atol=1 / 32768)

    def test_stereo_rejected(self, tmp_path):
        _raw_wav(tmp_path / "st.wav", b"\0\0" * 20, channels=2)
        with pytest.raises(UnsupportedFormat):
            load_wav(tmp_path / "st.wav")

    def test_8bit_rejected(self, tmp_path):
        _raw_wav(tmp_path / "b.wav", b"\x80" * 20, width=1)
        with pytest.raises(UnsupportedFormat):
            load_wav(tmp_path / "b.wav")

    def test_float_codec_rejected(self, tmp_path):
        fmt = struct.pack("<HHIIHH", 3, 1, 16000, 64000, 4, 32)
        body = b"WAVE" + b"fmt " + struct.pack("<I", len(fmt)) + fmt + b"data" + struct.pack("<I", 8) + b"\0" * 8
        (tmp_path / "f.wav").write_bytes(b"RIFF" + struct.pack("<I", len(body)) + body)
        with pytest.raises(UnsupportedFormat):
            load_wav(tmp_path / "f.wav")

    def test_truncated_data(self, tmp_path):
        write_wav(tmp_path / "t.wav", Waveform(np.zeros(1000), 16000))
        raw = (tmp_path / "t.wav").read_bytes()
        (tmp_path / "t.wav").write_bytes(raw[:-500])
        with pytest.raises(MalformedWav):
            load_wav(tmp_path / "t.wav")

    def test_garbage(self, tmp_path):
        (tmp_path / "g.wav").write_bytes(b"not a wave file at all")
        with pytest.raises((MalformedWav, UnsupportedFormat)):
            load_wav(tmp_path / "g.wav")
        (tmp_path / "e.wav").write_bytes(b"")
        with pytest.raises(MalformedWav):
            load_wav(tmp_path / "e.wav")


class TestPreEmphasis:
    def test_identity(self):
        x = np.random.default_rng(1).normal(size=50)
        np.testing.assert_array_equal(pre_emphasize(Waveform(x, 16000), 0.0).samples, x)

    def test_constant(self):
        y = pre_emphasize(Waveform(np.full(10, 2.0), 16000), 0.97).samples
        assert y[0] == 2.0
        np.testing.assert_allclose(y[1:], 0.03 * 2.0, rtol=1e-12)

    def test_hand_example(self):
        y = pre_emphasize(Waveform(np.array([1.0, 1.0, 0.0]), 16000), 0.5).samples
        np.testing.assert_allclose(y, [1.0, 0.5, -0.5])


class TestFraming:
    def test_paper_frame_geometry(self):
        assert frame_lengths(CFG, 16000) == (256, 112)

    @pytest.mark.parametrize("n,expected", [(256, 1), (480, 3)])
    def test_counts(self, n, expected):
        assert frame_signal(Waveform(np.ones(n), 16000), CFG).frames.shape == (expected, 256)

    @settings(max_examples=60, deadline=None)
    @given(st.integers(min_value=256, max_value=6000))
    def test_count_formula(self, n):
        fs = frame_signal(Waveform(np.zeros(n), 16000), CFG)
        assert fs.frames.shape[0] == (n - 256) // 112 + 1

    def test_window_applied(self):
        fs = frame_signal(Waveform(np.ones(400), 16000), CFG)
        np.testing.assert_allclose(fs.frames[0], np.hamming(256))

    def test_too_short(self):
        with pytest.raises(SignalTooShort):
            frame_signal(Waveform(np.ones(255), 16000), CFG)


class TestMel:
    def test_filterbank_matches_brute_force(self):
        fb = mel_filterbank(26, 256, 16000, 0.0, 8000.0)
        mel = lambda f: 2595.0 * np.log10(1.0 + f / 700.0)
        edges_mel = np.linspace(mel(0.0), mel(8000.0), 28)
        edges = 700.0 * (10 ** (edges_mel / 2595.0) - 1.0)
        for j in range(26):
            for k in range(129):
                f = k * 16000 / 256
                lo, c, hi = edges[j], edges[j + 1], edges[j + 2]
                if lo <= f <= c:
                    want = (f - lo) / (c - lo)
                elif c < f <= hi:
                    want = (hi - f) / (hi - c)
                else:
                    want = 0.0
                assert fb[j, k] == pytest.approx(want, abs=1e-12)

    def test_centres_increase_rows_positive(self):
        c = mel_centers(26, 0, 8000)
        assert np.all(np.diff(c) > 0)
        assert np.all(mel_filterbank(26, 256, 16000, 0, 8000).sum(axis=1) > 0)

    def test_empty_filter(self):
        with pytest.raises(ConfigInvalid):
            mel_filterbank(80, 64, 16000, 0, 8000)

    def test_sine_peaks_in_nearest_filter(self):
        t = np.arange(4000) / 16000
        w = Waveform(np.sin(2 * np.pi * 1000 * t), 16000)
        cfg = FrontendConfig(preemphasis_alpha=0.0)
        energies = log_mel_energies(frame_signal(w, cfg), cfg).mean(axis=0)
        centres = mel_centers(26, 0, 8000)[1:-1]
        # brute-force the triangular responses at exactly 1 kHz
        edges = mel_centers(26, 0, 8000)
        resp = [max(0.0, min((1000 - edges[j]) / (edges[j + 1] - edges[j]),
                             (edges[j + 2] - 1000) / (edges[j + 2] - edges[j + 1]))) for j in range(26)]
        assert int(np.argmax(energies)) == int(np.argmax(resp)) == int(np.argmin(abs(centres - 1000)))


class TestCepstra:
    def test_dct_orthonormal(self):
        m = dct_matrix(26)
        np.testing.assert_allclose(m @ m.T, np.eye(26), atol=1e-10)

    def test_dct_matches_scipy(self):
        x = np.random.default_rng(2).normal(size=26)
        np.testing.assert_allclose(dct_matrix(26) @ x, scipy.fft.dct(x, type=2, norm="ortho"), atol=1e-12)

    def test_dct_constant(self):
        c = dct_matrix(26) @ np.full(26, 3.0)
        assert c[0] != 0 and np.allclose(c[1:], 0, atol=1e-12)

    def test_zero_frames_hit_floor(self):
        fs = FrameSet(np.zeros((5, 256)), 256, 112, 16000)
        logmel = log_mel_energies(fs, CFG)
        np.testing.assert_array_equal(logmel, np.log(LOG_FLOOR))
        v = mfcc(fs, CFG).vectors
        assert np.all(v == v[0])

    def test_cmn_zero_mean(self):
        x = np.random.default_rng(3).normal(size=8000) * 0.1
        v = extract_features(Waveform(x, 16000), FrontendConfig(apply_cmn=True)).vectors
        np.testing.assert_allclose(v.mean(axis=0), 0.0, atol=1e-9)

    def test_deltas_shape(self):
        x = np.random.default_rng(4).normal(size=4000)
        v = extract_features(Waveform(x, 16000), FrontendConfig(deltas=True)).vectors
        assert v.shape[1] == 39

    def test_deterministic(self):
        x = np.random.default_rng(5).normal(size=4000)
        a = extract_features(Waveform(x, 16000), CFG).vectors
        b = extract_features(Waveform(x.copy(), 16000), CFG).vectors
        assert a.tobytes() == b.tobytes()

    def test_small_fft_rejected(self):
        with pytest.raises(ConfigInvalid):
            extract_features(Waveform(np.ones(1000), 16000), FrontendConfig(n_fft=128))

    @pytest.mark.parametrize("kw", [dict(preemphasis_alpha=1.0), dict(frame_ms=9, overlap_ms=9),
                                    dict(n_ceps=30), dict(fmin_hz=9000), dict(window="kaiser")])
    def test_invalid_config(self, kw):
        with pytest.raises(ConfigInvalid):
            FrontendConfig(**kw).validate(16000)

    def test_fmax_above_nyquist(self):
        with pytest.raises(ConfigInvalid):
            extract_features(Waveform(np.ones(1000), 8000), CFG)


class TestCache:
    def test_cvf_layout(self, tmp_path):
        v = np.arange(6, dtype=float).reshape(3, 2) / 7
        from cascade_verify.frontend import FeatureSequence
        write_cvf(tmp_path / "x.cvf", FeatureSequence(v, 256, 112, 16000))
        raw = (tmp_path / "x.cvf").read_bytes()
        assert raw[:4] == b"CVF1" and struct.unpack("<II", raw[4:12]) == (3, 2)
        np.testing.assert_array_equal(np.frombuffer(raw[12:], "<f8").reshape(3, 2), v)
        np.testing.assert_array_equal(read_cvf(tmp_path / "x.cvf"), v)

    def test_cache_hit_identical(self, tmp_path):
        x = np.random.default_rng(6).normal(size=3000) * 0.2
        write_wav(tmp_path / "u.wav", Waveform(x, 16000))
        cold = features_from_wav(tmp_path / "u.wav", CFG, tmp_path / "cache")
        assert list((tmp_path / "cache").rglob("*.cvf"))
        warm = features_from_wav(tmp_path / "u.wav", CFG, tmp_path / "cache")
        plain = features_from_wav(tmp_path / "u.wav", CFG, None)
        assert cold.vectors.tobytes() == warm.vectors.tobytes() == plain.vectors.tobytes()

    def test_corrupt_cache_recomputed(self, tmp_path):
        x = np.random.default_rng(7).normal(size=3000) * 0.2
        write_wav(tmp_path / "u.wav", Waveform(x, 16000))
        ref = features_from_wav(tmp_path / "u.wav", CFG, tmp_path / "c")
        for f in (tmp_path / "c").rglob("*.cvf"):
            f.write_bytes(b"CVF1junk")
        again = features_from_wav(tmp_path / "u.wav", CFG, tmp_path / "c")
        assert again.vectors.tobytes() == ref.vectors.tobytes()
