import logging
import math

import numpy as np

from waveforms.models import ChirpParams, LabeledWaveforms, Waveform

logger = logging.getLogger(__name__)

# Synthetic keyword task
SYNTH_RATE = 12500.0
SYNTH_DURATION = 1.0
SYNTH_VMAX = 0.75
SYNTH_SNR_DB = 20.0
SYNTH_BASE_RANGE = (110.0, 540.0)
SYNTH_TONE_RATIOS = (1.0, 2.3, 3.7)
SYNTH_TONE_AMPS = (1.0, 0.6, 0.3)
SYNTH_ONSET = 0.1
SYNTH_ACTIVE = 0.7
FREQ_JITTER = 0.03
TIMING_JITTER = 0.10

_SERIES_LIMIT = 1e-8


def _sample_count(duration, rate):
    return max(1, int(round(duration * rate)))


def _chirp_phase_integral(t, log_k):
    """(k^t - 1) / ln k, stable for ln k -> 0."""
    if abs(log_k) < _SERIES_LIMIT:
        x = t * log_k
        return t * (1.0 + x / 2.0 + x * x / 6.0)
    return np.expm1(t * log_k) / log_k


def gen_chirp(params: ChirpParams, rate):
    """
    Generate an exponential chirp A*sin(2*pi*f0*(k^t - 1)/ln(k) + phi0).

    Args:
        params (ChirpParams): Chirp parameters
        rate (float): Sample rate in S/s, at least 4*f1

    Returns:
        Waveform: T*rate samples starting at t=0
    """
    if not (math.isfinite(rate) and rate > 0):
        raise ValueError(f"rate must be positive and finite, got {rate}")
    if rate < 4.0 * params.f1:
        raise ValueError(f"rate={rate} must be at least 4*f1={4.0 * params.f1}")

    n = _sample_count(params.T, rate)
    t = np.arange(n) / rate
    phase = 2.0 * np.pi * params.f0 * _chirp_phase_integral(t, params.log_k) + params.phi0
    return Waveform(params.A * np.sin(phase), rate)


def instantaneous_frequency(params: ChirpParams, t):
    """Instantaneous frequency f0*k^t of the chirp in Hz."""
    return params.f0 * np.exp(params.log_k * np.asarray(t, dtype=np.float64))


def gen_two_tone(f1, f2, a1, a2, T, rate):
    """
    Generate a1*sin(2*pi*f1*t) + a2*sin(2*pi*f2*t).

    Args:
        f1 (float): Lower tone frequency in Hz
        f2 (float): Upper tone frequency in Hz
        a1 (float): Amplitude of the lower tone in V
        a2 (float): Amplitude of the upper tone in V
        T (float): Duration in s
        rate (float): Sample rate in S/s

    Returns:
        Waveform: Two-tone signal
    """
    for name, value in (('f1', f1), ('f2', f2), ('a1', a1), ('a2', a2), ('T', T), ('rate', rate)):
        if not math.isfinite(value):
            raise ValueError(f"{name} must be finite, got {value}")
    if not f2 > f1 > 0:
        raise ValueError(f"two-tone requires f2 > f1 > 0, got f1={f1}, f2={f2}")
    if a1 < 0 or a2 < 0:
        raise ValueError("tone amplitudes must be non-negative")
    if T <= 0:
        raise ValueError(f"T must be positive, got {T}")
    if rate <= 2.0 * f2:
        raise ValueError(f"rate={rate} aliases f2={f2}; need rate > {2.0 * f2}")

    t = np.arange(_sample_count(T, rate)) / rate
    samples = a1 * np.sin(2.0 * np.pi * f1 * t) + a2 * np.sin(2.0 * np.pi * f2 * t)
    return Waveform(samples, rate)


def class_base_frequencies(n_classes):
    return np.linspace(SYNTH_BASE_RANGE[0], SYNTH_BASE_RANGE[1], n_classes)


def _syllable_envelope(t, n_syllables, onset, active):
    envelope = np.zeros_like(t)
    slot = active / n_syllables
    width = 0.8 * slot
    for s in range(n_syllables):
        start = onset + s * slot + 0.1 * slot
        u = (t - start) / width
        inside = (u >= 0.0) & (u <= 1.0)
        envelope[inside] = np.sin(np.pi * u[inside]) ** 2
    return envelope


def _render_class(label, n_classes, rate, duration, freq_scale=1.0, onset=SYNTH_ONSET,
                  active=SYNTH_ACTIVE, phases=None):
    base = class_base_frequencies(n_classes)[label] * freq_scale
    t = np.arange(_sample_count(duration, rate)) / rate
    if phases is None:
        phases = np.zeros(len(SYNTH_TONE_RATIOS))

    carrier = np.zeros_like(t)
    for ratio, amp, phase in zip(SYNTH_TONE_RATIOS, SYNTH_TONE_AMPS, phases):
        carrier += amp * np.sin(2.0 * np.pi * base * ratio * t + phase)

    n_syllables = 1 + (label % 3)
    return carrier * _syllable_envelope(t, n_syllables, onset, active)


def synthetic_template(label, n_classes=10, rate=SYNTH_RATE, duration=SYNTH_DURATION):
    """
    Noise-free, jitter-free template of one class, normalized to the task amplitude.

    Args:
        label (int): Class index
        n_classes (int): Number of classes of the task
        rate (float): Sample rate in S/s
        duration (float): Length in s

    Returns:
        Waveform: Class template
    """
    if not 0 <= label < n_classes:
        raise ValueError(f"label {label} outside [0, {n_classes})")
    samples = _render_class(label, n_classes, rate, duration)
    samples = samples * (SYNTH_VMAX / np.max(np.abs(samples)))
    return Waveform(samples, rate)


def gen_synthetic_task(n_classes=10, per_class=20, seed=0, test_fraction=0.1,
                       rate=SYNTH_RATE, duration=SYNTH_DURATION, snr_db=SYNTH_SNR_DB):
    """
    Build the bundled synthetic keyword task.

    Each class is a three-tone formant-like template with a class-specific base
    frequency and syllable count. Every item jitters the frequencies by up to 3%,
    the onset and active length by up to 10%, and adds white noise at the given
    SNR before normalizing to +/-0.75 V.

    Args:
        n_classes (int): Number of classes, at least 2
        per_class (int): Items per class
        seed (int): Seed of the generator and of the train/test split
        test_fraction (float): Stratified test share
        rate (float): Sample rate in S/s
        duration (float): Item length in s
        snr_db (float): Signal-to-noise ratio of the additive noise

    Returns:
        LabeledWaveforms: Items ordered class by class with a stratified split
    """
    from waveforms.audio_io import stratified_split

    if n_classes < 2:
        raise ValueError(f"n_classes must be at least 2, got {n_classes}")
    if per_class < 0:
        raise ValueError(f"per_class must be non-negative, got {per_class}")

    rng = np.random.default_rng(seed)
    waveforms = []
    labels = []
    noise_scale = 10.0 ** (-snr_db / 20.0)

    for label in range(n_classes):
        for _ in range(per_class):
            freq_scale = rng.uniform(1.0 - FREQ_JITTER, 1.0 + FREQ_JITTER)
            onset = SYNTH_ONSET * rng.uniform(1.0 - TIMING_JITTER, 1.0 + TIMING_JITTER)
            active = SYNTH_ACTIVE * rng.uniform(1.0 - TIMING_JITTER, 1.0 + TIMING_JITTER)
            phases = rng.uniform(0.0, 2.0 * np.pi, size=len(SYNTH_TONE_RATIOS))
            clean = _render_class(label, n_classes, rate, duration, freq_scale, onset, active, phases)

            signal_rms = np.sqrt(np.mean(clean ** 2))
            noisy = clean + rng.normal(0.0, signal_rms * noise_scale, size=clean.size)
            noisy = noisy * (SYNTH_VMAX / np.max(np.abs(noisy)))

            waveforms.append(Waveform(noisy, rate))
            labels.append(label)

    labels = np.asarray(labels, dtype=np.int64)
    class_names = [f"class_{label:02d}" for label in range(n_classes)]
    if labels.size:
        train_index, test_index = stratified_split(labels, test_fraction, seed)
    else:
        train_index = np.zeros(0, dtype=np.int64)
        test_index = np.zeros(0, dtype=np.int64)

    logger.debug(f"Generated synthetic task: {n_classes} classes x {per_class} items (seed={seed})")
    return LabeledWaveforms(
        waveforms=waveforms,
        labels=labels,
        class_names=class_names,
        train_index=train_index,
        test_index=test_index,
        metadata={'source': 'synthetic', 'seed': int(seed), 'snr_db': snr_db},
    )
