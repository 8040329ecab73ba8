import math
import os

import numpy as np
import pytest
from scipy.io import wavfile

from exceptions import AllZero, ConfigError, EmptyAfterTrim, EmptyClassDirectory, MalformedWav, UnsupportedEncoding
from waveforms.audio_io import load_dataset, load_wav, stratified_split, write_wav
from waveforms.generators import gen_chirp, gen_synthetic_task, gen_two_tone, instantaneous_frequency, \
    synthetic_template
from waveforms.models import ChirpParams, Spectrum, Waveform
from waveforms.preprocessing import fit_length, normalize_amplitude, preprocess, trim_silence
from waveforms.spectral import distortion_frequencies, integrated_power, psd, spectral_centroid, tone_table


def test_waveform_rejects_bad_input():
    with pytest.raises(ValueError):
        Waveform([], 1000.0)
    with pytest.raises(ValueError):
        Waveform([0.0, float('nan')], 1000.0)
    with pytest.raises(ValueError):
        Waveform([0.0], 0.0)


def test_chirp_shape_and_start_value():
    w = gen_chirp(ChirpParams(), 25e3)
    assert len(w) == 25000
    assert w.samples[0] == pytest.approx(-0.75, abs=1e-12)


def test_chirp_rejects_low_rate():
    with pytest.raises(ValueError):
        gen_chirp(ChirpParams(), 7000.0)


def test_chirp_rejects_equal_frequencies():
    with pytest.raises(ValueError):
        ChirpParams(f0=100.0, f1=100.0)


def test_chirp_near_unit_k_is_a_tone():
    p = ChirpParams(A=1.0, f0=100.0, f1=100.0001, T=1.0, phi0=0.0)
    w = gen_chirp(p, 25e3)
    tone = np.sin(2.0 * np.pi * 100.0 * w.times)
    assert np.max(np.abs(w.samples - tone)) < 1e-3


def test_chirp_zero_crossings_match_integrated_frequency():
    p = ChirpParams()
    w = gen_chirp(p, 25e3)
    cycles = p.f0 * (p.k ** p.T - 1.0) / math.log(p.k)
    crossings = np.count_nonzero(np.diff(np.signbit(w.samples)))
    assert abs(crossings - 2.0 * cycles) <= 2


def _discrete_frequency(w, amplitude, n):
    """Frequency at sample n from x[n]^2 - x[n-1]*x[n+1] = A^2 sin^2(2*pi*f/rate)."""
    x = w.samples
    energy = x[n] ** 2 - x[n - 1] * x[n + 1]
    return math.asin(math.sqrt(energy) / amplitude) * w.sample_rate / (2.0 * math.pi)


def test_chirp_sampled_phase_rate_at_both_ends():
    p = ChirpParams()
    w = gen_chirp(p, 25e3)
    assert _discrete_frequency(w, p.A, 1) == pytest.approx(p.f0, rel=1e-2)
    assert _discrete_frequency(w, p.A, len(w) - 2) == pytest.approx(p.f1, rel=1e-2)
    assert instantaneous_frequency(p, p.T) == pytest.approx(p.f1, rel=1e-12)


def test_two_tone_spectrum_has_two_lines():
    w = gen_two_tone(74.0, 174.0, 0.375, 0.375, 1.0, 25e3)
    s = psd(w, 4096)
    lines = tone_table(s, s.power_db.max() - 60.0)
    freqs = sorted(f for f, _ in lines)
    assert len(freqs) == 2
    assert abs(freqs[0] - 74.0) <= s.resolution
    assert abs(freqs[1] - 174.0) <= s.resolution


def test_single_tone_when_second_amplitude_is_zero():
    w = gen_two_tone(74.0, 174.0, 0.5, 0.0, 1.0, 25e3)
    s = psd(w, 4096)
    lines = tone_table(s, s.power_db.max() - 60.0)
    assert len(lines) == 1
    assert abs(lines[0][0] - 74.0) <= s.resolution


def test_two_tone_rejects_aliasing():
    with pytest.raises(ValueError):
        gen_two_tone(74.0, 174.0, 0.3, 0.3, 1.0, 300.0)


def _synthetic_item():
    return gen_synthetic_task(n_classes=3, per_class=4, seed=2, test_fraction=0.5).waveforms[8]


@pytest.mark.parametrize('make, segment_len, overlap', [
    (lambda: gen_two_tone(74.0, 174.0, 0.375, 0.25, 1.0, 25e3), 4096, 0.5),
    (lambda: gen_chirp(ChirpParams(), 25e3), 4096, 0.5),
    (_synthetic_item, 256, 0.0),
])
def test_parseval_for_generated_waveforms(make, segment_len, overlap):
    w = make()
    integrated = integrated_power(psd(w, segment_len, overlap))
    assert integrated == pytest.approx(np.mean(w.samples ** 2), rel=1e-2)


def test_parseval_two_tone():
    a1, a2 = 0.375, 0.25
    w = gen_two_tone(74.0, 174.0, a1, a2, 1.0, 25e3)
    assert integrated_power(psd(w, 4096)) == pytest.approx((a1 ** 2 + a2 ** 2) / 2.0, rel=1e-2)
    assert np.mean(w.samples ** 2) == pytest.approx((a1 ** 2 + a2 ** 2) / 2.0, rel=1e-2)


def test_psd_peak_location():
    t = np.arange(25000) / 25e3
    s = psd(Waveform(np.sin(2.0 * np.pi * 1000.0 * t), 25e3), 4096)
    assert int(np.argmax(s.power_db)) == s.nearest_bin(1000.0)
    assert s.resolution == pytest.approx(25e3 / 4096)


def test_psd_dc_lands_in_bin_zero():
    s = psd(Waveform(np.full(8192, 0.5), 25e3), 1024)
    assert int(np.argmax(s.power_db)) == 0


def test_psd_rejects_bad_segment():
    w = Waveform(np.zeros(1000), 25e3)
    with pytest.raises(ValueError):
        psd(w, 1000)
    with pytest.raises(ValueError):
        psd(w, 2048)


def test_white_noise_psd_is_flat():
    levels = []
    for seed in range(100):
        rng = np.random.default_rng(seed)
        s = psd(Waveform(rng.normal(0.0, 1.0, 8192), 25e3), 1024)
        levels.append(s.power_linear)
    mean = np.mean(levels, axis=0)
    mid = mean[len(mean) // 4: 3 * len(mean) // 4]
    spread_db = 10.0 * np.log10(mid / np.median(mid))
    assert np.all(np.abs(spread_db) < 3.0)


def test_distortion_frequencies_for_two_tone_pair():
    assert distortion_frequencies(74.0, 174.0) == [26.0, 126.0, 226.0]


def test_tone_table_on_empty_spectrum():
    assert tone_table(Spectrum([], []), -100.0) == []


def test_trim_silence_pointwise():
    w = Waveform([0.01, 0.2, -0.3, 0.02], 1000.0)
    assert trim_silence(w, 0.05).samples.tolist() == [0.2, -0.3]


def test_trim_silence_edges_mode_keeps_inner_samples():
    w = Waveform([0.01, 0.2, 0.02, -0.3, 0.01], 1000.0)
    assert trim_silence(w, 0.05, mode='edges').samples.tolist() == [0.2, 0.02, -0.3]


def test_trim_silence_all_quiet_raises():
    with pytest.raises(EmptyAfterTrim):
        trim_silence(Waveform(np.zeros(10), 1000.0), 0.05)


def test_trim_silence_zero_threshold_is_identity_and_idempotent():
    rng = np.random.default_rng(3)
    w = Waveform(rng.normal(0.0, 0.1, 500), 1000.0)
    assert np.array_equal(trim_silence(w, 0.0).samples, w.samples)
    once = trim_silence(w, 0.05)
    assert np.array_equal(trim_silence(once, 0.05).samples, once.samples)


def test_normalize_amplitude_scale_and_sign():
    w = Waveform([0.05, -0.1, 0.02], 1000.0)
    out = normalize_amplitude(w, 0.75)
    assert np.max(np.abs(out.samples)) == 0.75
    assert out.samples[0] == pytest.approx(0.375)
    assert np.array_equal(np.sign(out.samples), np.sign(w.samples))


def test_normalize_amplitude_identity_and_all_zero():
    w = Waveform([0.75, -0.3], 1000.0)
    assert np.array_equal(normalize_amplitude(w, 0.75).samples, w.samples)
    with pytest.raises(AllZero):
        normalize_amplitude(Waveform(np.zeros(4), 1000.0))


def test_fit_length_pads_and_crops():
    w = Waveform([0.1, 0.2, 0.3], 1000.0)
    assert fit_length(w, 5).samples.tolist() == [0.1, 0.2, 0.3, 0.0, 0.0]
    assert fit_length(w, 2).samples.tolist() == [0.1, 0.2]


def test_preprocess_gives_one_second_at_task_rate():
    w = synthetic_template(3)
    out = preprocess(w)
    assert len(out) == 12500
    assert np.max(np.abs(out.samples)) == pytest.approx(0.75)


def test_wav_round_trip(tmp_path):
    path = str(tmp_path / 'one.wav')
    t = np.arange(12500) / 12500.0
    write_wav(path, Waveform(0.5 * np.sin(2.0 * np.pi * 440.0 * t), 12500.0))
    w = load_wav(path)
    assert len(w) == 12500
    assert w.sample_rate == 12500.0
    assert np.max(np.abs(w.samples)) <= 1.0


def test_stereo_wav_is_unsupported(tmp_path):
    path = str(tmp_path / 'stereo.wav')
    wavfile.write(path, 12500, np.zeros((100, 2), dtype=np.int16))
    with pytest.raises(UnsupportedEncoding):
        load_wav(path)


def test_float_wav_is_unsupported(tmp_path):
    path = str(tmp_path / 'float.wav')
    wavfile.write(path, 12500, np.zeros(100, dtype=np.float32))
    with pytest.raises(UnsupportedEncoding):
        load_wav(path)


def test_garbage_file_is_malformed(tmp_path):
    path = tmp_path / 'bad.wav'
    path.write_bytes(b'not a riff file at all')
    with pytest.raises(MalformedWav):
        load_wav(str(path))


def _write_tree(root, n_classes, per_class):
    for label in range(n_classes):
        class_dir = os.path.join(root, f"word{label}")
        os.makedirs(class_dir)
        for i in range(per_class):
            samples = np.full(64, 0.1 * (label + 1))
            write_wav(os.path.join(class_dir, f"{i:03d}.wav"), Waveform(samples, 12500.0))


def test_load_dataset_stratified_split(tmp_path):
    _write_tree(str(tmp_path), 10, 20)
    data = load_dataset(str(tmp_path), test_fraction=0.1, seed=7)
    assert len(data) == 200
    assert data.class_names == [f"word{i}" for i in range(10)]
    for label in range(10):
        assert np.sum(data.labels[data.train_index] == label) == 18
        assert np.sum(data.labels[data.test_index] == label) == 2

    again = load_dataset(str(tmp_path), test_fraction=0.1, seed=7)
    assert np.array_equal(again.test_index, data.test_index)


def test_load_dataset_empty_class(tmp_path):
    _write_tree(str(tmp_path), 2, 3)
    os.makedirs(tmp_path / 'silent')
    with pytest.raises(EmptyClassDirectory):
        load_dataset(str(tmp_path))


def test_load_dataset_single_file_label(tmp_path):
    _write_tree(str(tmp_path), 3, 4)
    os.remove(tmp_path / 'word1' / '001.wav')
    os.remove(tmp_path / 'word1' / '002.wav')
    os.remove(tmp_path / 'word1' / '003.wav')
    with pytest.raises(ConfigError, match='word1'):
        load_dataset(str(tmp_path))


def test_load_dataset_too_few_test_items(tmp_path):
    _write_tree(str(tmp_path), 3, 4)
    with pytest.raises(ConfigError, match='cannot hold out'):
        load_dataset(str(tmp_path), test_fraction=0.1)


def test_stratified_split_rejects_bad_fraction():
    with pytest.raises(ValueError):
        stratified_split([0, 1, 0, 1], 1.5)


def test_synthetic_task_is_deterministic():
    a = gen_synthetic_task(n_classes=3, per_class=4, seed=11, test_fraction=0.25)
    b = gen_synthetic_task(n_classes=3, per_class=4, seed=11, test_fraction=0.25)
    assert np.array_equal(a.as_matrix(), b.as_matrix())
    assert np.array_equal(a.test_index, b.test_index)
    assert len(a) == 12
    assert np.max(np.abs(a.as_matrix())) == pytest.approx(0.75)


def test_synthetic_task_empty_and_invalid():
    assert len(gen_synthetic_task(n_classes=4, per_class=0)) == 0
    with pytest.raises(ValueError):
        gen_synthetic_task(n_classes=1)


def test_synthetic_classes_differ_in_centroid():
    c0 = spectral_centroid(synthetic_template(0))
    c1 = spectral_centroid(synthetic_template(1))
    assert abs(c1 - c0) > 50.0
