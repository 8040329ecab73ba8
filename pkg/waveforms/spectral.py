import logging

import numpy as np
import pandas as pd
from scipy import signal as sps

from waveforms.generators import instantaneous_frequency
from waveforms.models import ChirpParams, Spectrum, Waveform

logger = logging.getLogger(__name__)

WINDOW = 'hann'
DEFAULT_SEGMENT = 4096
# Bins within which a harmonic is searched around its nominal frequency
PEAK_SEARCH_BINS = 2
_TINY = np.finfo(np.float64).tiny


def _is_power_of_two(n):
    return n >= 1 and (n & (n - 1)) == 0


def _to_db(power):
    return 10.0 * np.log10(np.maximum(power, _TINY))


def default_segment(n_samples, preferred=DEFAULT_SEGMENT):
    """Largest power of two not above min(preferred, n_samples)."""
    limit = max(1, min(preferred, n_samples))
    return 1 << (limit.bit_length() - 1)


def psd(w: Waveform, segment_len=None, overlap=0.5):
    """
    Welch power spectral density with a Hann window.

    Args:
        w (Waveform): Input trace
        segment_len (int, optional): Power-of-two segment length; defaults to the
            largest power of two up to 4096 that fits the trace
        overlap (float): Fractional segment overlap in [0, 1)

    Returns:
        Spectrum: One-sided PSD in dB re 1 V^2/Hz, resolution rate/segment_len
    """
    if segment_len is None:
        segment_len = default_segment(len(w))
    segment_len = int(segment_len)
    if not _is_power_of_two(segment_len):
        raise ValueError(f"segment_len must be a power of two, got {segment_len}")
    if segment_len > len(w):
        raise ValueError(f"segment_len={segment_len} exceeds waveform length {len(w)}")
    if not 0.0 <= overlap < 1.0:
        raise ValueError(f"overlap must be in [0, 1), got {overlap}")

    freqs, power = sps.welch(
        w.samples,
        fs=w.sample_rate,
        window=WINDOW,
        nperseg=segment_len,
        noverlap=int(segment_len * overlap),
        detrend=False,
        return_onesided=True,
        scaling='density',
    )
    return Spectrum(freqs, _to_db(power), window=f"{WINDOW}/{segment_len}/{overlap:g}")


def integrated_power(s: Spectrum, f_lo=None, f_hi=None):
    """Sum of PSD bins times resolution over [f_lo, f_hi] in V^2."""
    mask = np.ones(len(s), dtype=bool)
    if f_lo is not None:
        mask &= s.frequencies >= f_lo
    if f_hi is not None:
        mask &= s.frequencies <= f_hi
    return float(np.sum(s.power_linear[mask]) * s.resolution)


def hann_leakage_db(distance_bins):
    """Upper bound of the Hann window sidelobe level at a bin distance (dB)."""
    nu = np.maximum(np.asarray(distance_bins, dtype=np.float64), 2.0)
    return -20.0 * np.log10(np.pi * nu * (nu * nu - 1.0))


def tone_table(s: Spectrum, floor_db, prominence_db=3.0, leakage_margin_db=6.0):
    """
    List spectral lines above a floor, strongest first.

    Local maxima that sit inside the window leakage skirt of a stronger line are
    not reported, so a pure tone yields a single entry.

    Args:
        s (Spectrum): Input spectrum
        floor_db (float): Absolute power floor in dB
        prominence_db (float): Minimum peak prominence in dB
        leakage_margin_db (float): Required excess over the leakage bound

    Returns:
        list: (frequency_hz, power_db) tuples sorted by descending power
    """
    if len(s) < 3:
        return []
    peaks, _ = sps.find_peaks(s.power_db, height=floor_db, prominence=prominence_db)
    order = peaks[np.argsort(-s.power_db[peaks], kind='stable')]

    resolution = s.resolution
    accepted = []
    for idx in order:
        power = s.power_db[idx]
        freq = s.frequencies[idx]
        masked = False
        for acc_freq, acc_power in accepted:
            distance = abs(freq - acc_freq) / resolution
            if distance < 2.0 or power < acc_power + hann_leakage_db(distance) + leakage_margin_db:
                masked = True
                break
        if not masked:
            accepted.append((float(freq), float(power)))
    return accepted


def distortion_frequencies(f1, f2, orders=(1, 2, 3)):
    """Two-tone distortion product frequencies |(n+1)*f1 - n*f2|."""
    return [abs((n + 1) * f1 - n * f2) for n in orders]


def line_level(s: Spectrum, frequency, search_bins=PEAK_SEARCH_BINS):
    """Peak PSD level (dB) within +/-search_bins of a frequency."""
    centre = s.nearest_bin(frequency)
    lo = max(0, centre - search_bins)
    hi = min(len(s), centre + search_bins + 1)
    return float(np.max(s.power_db[lo:hi]))


def local_floor(s: Spectrum, frequency, exclude_bins=4, width_bins=32):
    """Median PSD level (dB) around a frequency, excluding the line itself."""
    centre = s.nearest_bin(frequency)
    lo = max(0, centre - width_bins)
    hi = min(len(s), centre + width_bins + 1)
    idx = np.arange(lo, hi)
    idx = idx[np.abs(idx - centre) > exclude_bins]
    if idx.size == 0:
        return float('-inf')
    return float(np.median(s.power_db[idx]))


def harmonic_levels(s: Spectrum, f0, n=5):
    """
    Levels of the fundamental and its harmonics.

    Returns:
        DataFrame: harmonic, freq_hz, power_db, dbc (relative to the fundamental)
    """
    nyquist = s.frequencies[-1]
    rows = []
    for h in range(1, n + 1):
        freq = h * f0
        if freq > nyquist:
            break
        rows.append({'harmonic': h, 'freq_hz': freq, 'power_db': line_level(s, freq)})
    df = pd.DataFrame(rows, columns=['harmonic', 'freq_hz', 'power_db'])
    if not df.empty:
        df['dbc'] = df['power_db'] - df['power_db'].iloc[0]
    else:
        df['dbc'] = []
    return df


def _line_power(s: Spectrum, frequency, half_width=PEAK_SEARCH_BINS):
    centre = s.nearest_bin(frequency)
    lo = max(0, centre - half_width)
    hi = min(len(s), centre + half_width + 1)
    return float(np.sum(s.power_linear[lo:hi]))


def thd(w: Waveform, f0, n_harmonics=5, segment_len=None):
    """
    Total harmonic distortion as a power ratio (harmonics / fundamental).

    Args:
        w (Waveform): Trace containing a tone at f0
        f0 (float): Fundamental in Hz
        n_harmonics (int): Highest harmonic number included
        segment_len (int, optional): PSD segment length

    Returns:
        float: THD ratio
    """
    s = psd(w, segment_len)
    fundamental = _line_power(s, f0)
    if fundamental <= 0:
        return float('inf')
    nyquist = w.sample_rate / 2.0
    harmonics = sum(
        _line_power(s, h * f0) for h in range(2, n_harmonics + 1) if h * f0 < nyquist
    )
    return harmonics / fundamental


def spectral_centroid(w: Waveform, segment_len=None):
    """Power-weighted mean frequency in Hz."""
    s = psd(w, segment_len)
    power = s.power_linear
    total = np.sum(power)
    if total <= 0:
        return 0.0
    return float(np.sum(s.frequencies * power) / total)


def spectrogram(w: Waveform, segment_len=1024, overlap=0.75):
    """
    Short-time PSD on a Hann window.

    Returns:
        tuple: (times_s, freqs_hz, power_db) with power_db shaped (freqs, times)
    """
    if not _is_power_of_two(int(segment_len)):
        raise ValueError(f"segment_len must be a power of two, got {segment_len}")
    if segment_len > len(w):
        raise ValueError(f"segment_len={segment_len} exceeds waveform length {len(w)}")
    freqs, times, power = sps.spectrogram(
        w.samples,
        fs=w.sample_rate,
        window=WINDOW,
        nperseg=int(segment_len),
        noverlap=int(segment_len * overlap),
        detrend=False,
        scaling='density',
        mode='psd',
    )
    return times, freqs, _to_db(power)


def harmonic_ridges(spec, params: ChirpParams, n_harmonics=5, floor_dbc=-60.0, search_bins=3):
    """
    Follow the fundamental and harmonics of a chirp response through a spectrogram.

    For each time slice the level of harmonic h is read near h*f0*k^t and compared
    with the fundamental of the same slice.

    Args:
        spec (tuple): Output of `spectrogram`
        params (ChirpParams): Chirp that drove the response
        n_harmonics (int): Highest harmonic number examined
        floor_dbc (float): Level relative to the fundamental a ridge must exceed
        search_bins (int): Half-width of the search around the nominal bin

    Returns:
        DataFrame: harmonic, median_dbc, present for h = 2..n_harmonics
    """
    times, freqs, power_db = spec
    df_bin = freqs[1] - freqs[0]
    nyquist = freqs[-1]
    f_inst = instantaneous_frequency(params, times)

    def level(h, col):
        centre = int(round(h * f_inst[col] / df_bin))
        lo = max(0, centre - search_bins)
        hi = min(len(freqs), centre + search_bins + 1)
        return np.max(power_db[lo:hi, col])

    valid_cols = np.flatnonzero(times <= params.T)
    rows = []
    for h in range(2, n_harmonics + 1):
        cols = [c for c in valid_cols if h * f_inst[c] < 0.9 * nyquist]
        if not cols:
            rows.append({'harmonic': h, 'median_dbc': float('-inf'), 'present': False})
            continue
        dbc = np.array([level(h, c) - level(1, c) for c in cols])
        median = float(np.median(dbc))
        rows.append({'harmonic': h, 'median_dbc': median, 'present': bool(median > floor_dbc)})
    return pd.DataFrame(rows, columns=['harmonic', 'median_dbc', 'present'])
