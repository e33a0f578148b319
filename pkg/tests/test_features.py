import numpy as np
import pytest

from mutelab import tensor as T
from mutelab.audio import AudioSignal
from mutelab.features import (
    FeatureConfig,
    LogMelFrontEnd,
    emit_spectrogram_image,
    log_mel,
    mel_center_frequencies,
    MelSpectrogram,
)

from gradcheck import numeric_grad

CFG = FeatureConfig()


class TestLogMelValues:
    def test_all_zero_signal_hits_floor(self):
        sig = AudioSignal(np.zeros(4000, dtype=np.float32) + 0.0, 16000)
        spec = log_mel(sig, CFG)
        np.testing.assert_allclose(spec.frames, -10.0, atol=1e-6)

    def test_frame_count_formula(self):
        n = 48000
        spec = log_mel(AudioSignal(np.zeros(n, dtype=np.float32)), CFG)
        assert spec.n_frames == (n - CFG.window) // CFG.hop + 1 == 298

    def test_too_short_signal_rejected(self):
        with pytest.raises(ValueError, match="shorter"):
            log_mel(AudioSignal(np.zeros(CFG.window - 1, dtype=np.float32)), CFG)

    def test_pure_tone_lands_in_nearest_mel_bin(self):
        # oracle: locate the filter whose center (from the mel-scale
        # formula) is nearest the tone frequency
        centers = mel_center_frequencies(CFG)
        for freq in (500.0, 1000.0, 2000.0, 4000.0):
            t = np.arange(8000) / CFG.sample_rate
            sig = AudioSignal((0.5 * np.sin(2 * np.pi * freq * t)).astype(np.float32))
            spec = log_mel(sig, CFG)
            hot = int(np.bincount(spec.frames.argmax(axis=1)).argmax())
            expect = int(np.abs(centers - freq).argmin())
            assert abs(hot - expect) <= 1, f"{freq} Hz: bin {hot} vs {expect}"

    def test_monotone_gain_never_decreases_values(self):
        rng = np.random.default_rng(2)
        x = rng.uniform(-0.3, 0.3, 3000).astype(np.float32)
        a = log_mel(AudioSignal(x), CFG).frames
        b = log_mel(AudioSignal(np.clip(x * 2.0, -1, 1)), CFG).frames
        assert np.all(b >= a - 1e-6)

    def test_time_shift_by_whole_hops_shifts_frames(self):
        rng = np.random.default_rng(3)
        x = rng.uniform(-0.5, 0.5, 4000).astype(np.float32)
        k = 3
        delayed = np.concatenate([np.zeros(k * CFG.hop, dtype=np.float32), x])
        a = log_mel(AudioSignal(x), CFG).frames
        b = log_mel(AudioSignal(delayed), CFG).frames
        np.testing.assert_allclose(b[k : k + a.shape[0]], a, atol=1e-5)


class TestLogMelGradient:
    def test_matches_finite_differences(self):
        # float64 graph; differences on 12 random coordinates
        rng = np.random.default_rng(4)
        x = rng.uniform(-0.3, 0.3, 700)
        front = LogMelFrontEnd(CFG)

        def scalar(arrs):
            return front(T.Tensor(arrs[0], dtype=np.float64)).sum().item()

        xt = T.Tensor(x, requires_grad=True, dtype=np.float64)
        loss = front(xt).sum()
        (auto,) = T.gradients(loss, [xt])
        coords = rng.choice(700, size=12, replace=False)
        for c in coords:
            e = np.zeros(700)
            e[c] = 1e-6
            fp = scalar([x + e])
            fm = scalar([x - e])
            num = (fp - fm) / 2e-6
            assert abs(auto[c] - num) <= 1e-6 + 1e-3 * max(abs(auto[c]), abs(num))

    def test_gradient_finite_and_nonzero_for_generic_input(self):
        rng = np.random.default_rng(5)
        x = T.Tensor(
            rng.uniform(-0.2, 0.2, 1200).astype(np.float32), requires_grad=True
        )
        loss = LogMelFrontEnd(CFG)(x).sum()
        (g,) = T.gradients(loss, [x])
        assert np.all(np.isfinite(g))
        assert np.abs(g).max() > 0

    def test_batched_equals_single(self):
        rng = np.random.default_rng(6)
        xs = rng.uniform(-0.4, 0.4, (3, 900)).astype(np.float32)
        front = LogMelFrontEnd(CFG)
        batched = front(T.Tensor(xs)).data
        for i in range(3):
            single = front(T.Tensor(xs[i])).data
            np.testing.assert_allclose(batched[i], single, atol=1e-5)


class TestSpectrogramImage:
    def _spec(self, frames):
        return MelSpectrogram(
            frames=np.asarray(frames, dtype=np.float32),
            hop=CFG.hop,
            window=CFG.window,
            n_mels=frames.shape[1],
            sample_rate=CFG.sample_rate,
        )

    def test_pgm_dimensions(self, tmp_path):
        rng = np.random.default_rng(7)
        spec = self._spec(rng.uniform(-10, 0, (100, 64)))
        p = tmp_path / "s.pgm"
        emit_spectrogram_image(spec, p)
        raw = p.read_bytes()
        assert raw.startswith(b"P5\n100 64\n255\n")
        assert len(raw) == len(b"P5\n100 64\n255\n") + 100 * 64
        assert (tmp_path / "s.csv").exists()

    def test_constant_spectrogram_maps_to_zero(self, tmp_path):
        spec = self._spec(np.full((10, 8), -3.0))
        p = tmp_path / "c.pgm"
        emit_spectrogram_image(spec, p)
        raw = p.read_bytes()
        body = raw.split(b"\n", 3)[3]
        assert set(body) == {0}

    def test_csv_rows_are_frames(self, tmp_path):
        spec = self._spec(np.arange(12, dtype=np.float32).reshape(3, 4))
        emit_spectrogram_image(spec, tmp_path / "m.pgm")
        loaded = np.loadtxt(tmp_path / "m.csv", delimiter=",")
        np.testing.assert_allclose(loaded, spec.frames, atol=1e-5)
