import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import finite_difference
from cyclewave import audio
from cyclewave import tensor as tc
from cyclewave.errors import AudioFormatError, ContractError, EmptyAudioError


def tone(freq, duration=1.0, sr=audio.SAMPLE_RATE, amp=0.5):
    n = int(duration * sr)
    return audio.AudioBuffer(amp * np.sin(2 * np.pi * freq * np.arange(n) / sr), sr)


class TestWavIO:
    def test_zero_file_roundtrip(self, tmp_path):
        path = tmp_path / "zero.wav"
        audio.save_wav(path, audio.AudioBuffer(np.zeros(1000), 22050))
        buf = audio.load_wav(path)
        assert np.all(buf.samples == 0.0) and buf.sample_rate == 22050

    def test_scaling_definition(self, tmp_path):
        import struct, wave
        path = tmp_path / "half.wav"
        with wave.open(str(path), "wb") as wf:
            wf.setnchannels(1)
            wf.setsampwidth(2)
            wf.setframerate(22050)
            wf.writeframes(struct.pack("<4h", 16384, -16384, 0, 32767))
        buf = audio.load_wav(path)
        assert buf.samples[0] == 0.5 and buf.samples[1] == -0.5

    def test_pcm_roundtrip_bit_identical(self, tmp_path):
        rng = np.random.default_rng(0)
        pcm = rng.integers(-32768, 32768, size=4096).astype(np.int16)
        first = tmp_path / "a.wav"
        second = tmp_path / "b.wav"
        audio.save_wav(first, audio.AudioBuffer(pcm / 32768.0, 22050))
        buf = audio.load_wav(first)
        audio.save_wav(second, buf)
        assert first.read_bytes() == second.read_bytes()

    def test_malformed_header_raises(self, tmp_path):
        path = tmp_path / "bad.wav"
        path.write_bytes(b"RIFFxxxxNOPE" + b"\x00" * 64)
        with pytest.raises(AudioFormatError):
            audio.load_wav(path)

    def test_unsupported_width_raises(self, tmp_path):
        import wave
        path = tmp_path / "w8.wav"
        with wave.open(str(path), "wb") as wf:
            wf.setnchannels(1)
            wf.setsampwidth(1)
            wf.setframerate(22050)
            wf.writeframes(bytes(100))
        with pytest.raises(AudioFormatError):
            audio.load_wav(path)

    def test_first_channel_of_stereo(self, tmp_path):
        import wave
        path = tmp_path / "st.wav"
        left = np.arange(10, dtype=np.int16)
        right = -np.arange(10, dtype=np.int16)
        inter = np.empty(20, dtype="<i2")
        inter[0::2] = left
        inter[1::2] = right
        with wave.open(str(path), "wb") as wf:
            wf.setnchannels(2)
            wf.setsampwidth(2)
            wf.setframerate(22050)
            wf.writeframes(inter.tobytes())
        buf = audio.load_wav(path)
        assert np.allclose(buf.samples * 32768.0, left)


class TestResample:
    def test_identity(self):
        buf = tone(440, 0.25)
        out = audio.resample(buf, buf.sample_rate)
        assert out.sample_rate == buf.sample_rate
        assert np.array_equal(out.samples, buf.samples)

    def test_halving_length(self):
        buf = tone(440, 0.5, sr=44100)
        out = audio.resample(buf, 22050)
        assert abs(len(out) - len(buf) // 2) <= 1
        assert out.sample_rate == 22050

    def test_tone_peak_preserved(self):
        buf = tone(1000, 1.0, sr=44100)
        out = audio.resample(buf, 22050)
        spec = np.abs(np.fft.rfft(out.samples * np.hanning(len(out))))
        freqs = np.fft.rfftfreq(len(out), 1.0 / 22050)
        peak = freqs[np.argmax(spec)]
        assert abs(peak - 1000.0) < 22050 / audio.WIN_LENGTH


class TestNormalizeAndTrim:
    def test_peak_normalization(self):
        buf = tone(200, 0.3, amp=0.475)
        out = audio.normalize_and_trim(buf)
        assert np.isclose(np.max(np.abs(out.samples)), 0.95, atol=1e-3)

    def test_padding_removed(self):
        rng = np.random.default_rng(1)
        interior = 0.5 * rng.uniform(0.2, 1.0, size=2000) * np.sign(rng.normal(size=2000))
        padded = np.concatenate([np.zeros(22050), interior, np.zeros(22050)])
        out = audio.normalize_and_trim(audio.AudioBuffer(padded, 22050))
        assert len(out) == len(interior)
        assert np.allclose(out.samples, interior * (0.95 / np.max(np.abs(interior))))

    def test_idempotent(self):
        rng = np.random.default_rng(2)
        x = rng.uniform(0.1, 1.0, size=1500) * np.sign(rng.normal(size=1500))
        once = audio.normalize_and_trim(audio.AudioBuffer(x, 22050))
        twice = audio.normalize_and_trim(once)
        assert np.allclose(once.samples, twice.samples)

    def test_silence_raises(self):
        with pytest.raises(EmptyAudioError):
            audio.normalize_and_trim(audio.AudioBuffer(np.zeros(100), 22050))


class TestMelSpectrogram:
    def test_one_second_frame_count(self):
        mel = audio.mel_spectrogram(tone(220, 1.0))
        assert mel.frames == 22050 // 256 + 1 == 87

    def test_zero_audio_hits_log_floor(self):
        mel = audio.mel_spectrogram(audio.AudioBuffer(np.zeros(4096), 22050))
        assert np.allclose(mel.values, np.log(audio.LOG_FLOOR))

    def test_tone_lands_in_nearest_filter(self):
        mel = audio.mel_spectrogram(tone(1000, 1.0))
        centers = audio.mel_filter_centers()
        want = int(np.argmin(np.abs(centers - 1000.0)))
        got = int(np.argmax(mel.values.mean(axis=1)))
        assert abs(got - want) <= 1

    def test_deterministic(self):
        buf = tone(333, 0.5)
        a = audio.mel_spectrogram(buf).values
        b = audio.mel_spectrogram(buf).values
        assert np.array_equal(a, b)

    def test_too_short_raises(self):
        with pytest.raises(ContractError):
            audio.mel_spectrogram(audio.AudioBuffer(np.zeros(512), 22050))

    def test_time_shift_covariance(self):
        rng = np.random.default_rng(3)
        x = rng.normal(scale=0.2, size=8192)
        shifted = np.concatenate([np.zeros(512), x])
        a = audio.mel_spectrogram(audio.AudioBuffer(x, 22050)).values
        b = audio.mel_spectrogram(audio.AudioBuffer(shifted, 22050)).values
        k = 512 // 256
        interior = slice(4, a.shape[1] - 4)
        assert np.allclose(a[:, interior], b[:, k:][:, interior], atol=1e-9)

    def test_filterbank_properties(self):
        fb = audio.mel_filterbank()
        assert np.all(fb >= 0)
        assert np.all(fb.sum(axis=1) > 0)
        peaks = np.argmax(fb, axis=1)
        assert np.all(np.diff(peaks) > 0)

    def test_mel_forward_differentiable(self):
        rng = np.random.default_rng(4)
        x = tc.Tensor(rng.normal(scale=0.3, size=1400), requires_grad=True)
        finite_difference(lambda: tc.mean(audio.mel_forward(x)), {"x": x}, rng, n_points=6)

    def test_batched_matches_single(self):
        rng = np.random.default_rng(5)
        wavs = rng.normal(scale=0.2, size=(3, 1, 2048))
        with tc.no_grad():
            batched = audio.mel_forward(tc.Tensor(wavs)).data
            for i in range(3):
                single = audio.mel_forward(tc.Tensor(wavs[i, 0])).data
                assert np.allclose(batched[i], single, atol=1e-12)

    def test_num_frames_crop(self):
        with tc.no_grad():
            full = audio.mel_forward(tc.Tensor(np.ones(16384) * 0.1)).data
            cropped = audio.mel_forward(tc.Tensor(np.ones(16384) * 0.1), num_frames=64).data
        assert full.shape[1] == 65 and cropped.shape[1] == 64
        assert np.allclose(full[:, :64], cropped)


@given(st.integers(1024, 60000))
@settings(max_examples=100, deadline=None)
def test_mel_frame_count_contract(length):
    with tc.no_grad():
        mel = audio.mel_forward(tc.Tensor(np.zeros(length)))
    assert mel.shape == (80, length // 256 + 1)


class TestF0:
    def test_pure_tone_tracked(self):
        track = audio.estimate_f0(tone(200, 0.6))
        interior = slice(5, len(track.f0_hz) - 5)
        assert np.all(track.voiced[interior])
        assert np.all(np.abs(track.f0_hz[interior] - 200.0) < 2.0)

    def test_quiet_noise_unvoiced(self):
        rng = np.random.default_rng(6)
        buf = audio.AudioBuffer(0.2 * rng.normal(size=11025), 22050)
        track = audio.estimate_f0(buf)
        assert not track.voiced.any()

    def test_silence_unvoiced(self):
        track = audio.estimate_f0(audio.AudioBuffer(np.zeros(4096), 22050))
        assert not track.voiced.any()
        assert np.all(track.f0_hz == 0.0)


class TestMcep:
    def test_deterministic(self):
        buf = tone(150, 0.4)
        a = audio.extract_mcep(buf).coeffs
        b = audio.extract_mcep(buf).coeffs
        assert np.array_equal(a, b)

    def test_gain_separation(self):
        rng = np.random.default_rng(7)
        x = 0.3 * rng.normal(size=8000)
        c1 = audio.extract_mcep(audio.AudioBuffer(x, 22050)).coeffs
        c2 = audio.extract_mcep(audio.AudioBuffer(2.0 * x, 22050)).coeffs
        assert np.allclose(c1[:, 1:], c2[:, 1:], atol=1e-8)
        assert np.all(c2[:, 0] > c1[:, 0])

    def test_zero_audio_flat_cepstrum(self):
        seq = audio.extract_mcep(audio.AudioBuffer(np.zeros(4096), 22050))
        assert np.allclose(seq.coeffs[:, 1:], 0.0)

    def test_too_short_raises(self):
        with pytest.raises(ContractError):
            audio.extract_mcep(audio.AudioBuffer(np.zeros(100), 22050))
