import logging

import numpy as np
import pandas as pd
from scipy.optimize import brentq

from dnpu.models import N_CONTROLS, CircuitConfig, ControlSet, DnpuModel, control_matrix
from dnpu.simulator import simulate_batch
from dnpu.surrogate import CURRENT_VMAX, net_current, static_power
from exceptions import NoSettle
from waveforms.generators import gen_chirp, gen_two_tone
from waveforms.models import ChirpParams, Waveform
from waveforms.spectral import line_level, local_floor, psd, spectrogram, thd

logger = logging.getLogger(__name__)

STEP_RATE = 50e3
STEP_VOLTAGE = 1.0
STEP_FRACTION = 0.63
STEP_T_MAX = 1.0
STEP_WINDOW = 0.02
SETTLE_TOLERANCE = 1e-3

TWO_TONE_AMPLITUDE = 0.375
TWO_TONE_DURATION = 2.0
TWO_TONE_RATE = 25e3
TWO_TONE_SEGMENT = 8192
TRANSIENT_DISCARD = 0.25

CHIRP_RATE = 25e3

_SCAN_STEP = 0.005


def _rows(models, n):
    if isinstance(models, DnpuModel):
        return [models] * n
    models = list(models)
    if len(models) != n:
        raise ValueError(f"got {len(models)} devices for {n} rows")
    return models


def reached_equilibrium(m: DnpuModel, v_in, c, v_start=0.0):
    """
    Steady output voltage reached from v_start under a constant input.

    A one-state autonomous system moves monotonically, so the state settles on
    the first zero of the net current in the direction it starts moving.

    Returns:
        float or None: Equilibrium voltage, None if the current never changes sign
    """
    i_start = net_current(m, v_in, v_start, c)
    if i_start == 0.0:
        return float(v_start)
    direction = 1.0 if i_start > 0 else -1.0
    bound = direction * CURRENT_VMAX
    n_steps = int(np.ceil(abs(bound - v_start) / _SCAN_STEP))
    grid = np.linspace(v_start, bound, n_steps + 1)
    currents = net_current(m, v_in, grid, c)
    crossings = np.flatnonzero(np.sign(currents) != np.sign(i_start))
    if crossings.size == 0:
        return None
    j = int(crossings[0])
    if currents[j] == 0.0:
        return float(grid[j])
    return float(brentq(lambda v: net_current(m, v_in, v, c), grid[j - 1], grid[j], xtol=1e-12))


def step_response_tau_batch(models, cfg: CircuitConfig, controls, rate=STEP_RATE,
                            t_max=STEP_T_MAX, window=STEP_WINDOW):
    """
    Step-response time constants for many (device, control set) rows.

    Each row starts from the equilibrium V_0 at V_in = 0. The input is 0 V for one
    sample and 1 V afterwards. tau is the time from the step until the output
    first reaches V_0 + 0.63*(V_max - V_0), V_max being the settled value. With
    V_0 = 0 this is the first time V_out >= 0.63*V_max; with a control bias the
    threshold is taken on the swing so a first-order circuit still yields C_ext/G.

    Args:
        models (DnpuModel or sequence): Device per row (or shared)
        cfg (CircuitConfig): Output circuit
        controls (sequence): ControlSets
        rate (float): Input sample rate in S/s
        t_max (float): Simulated time limit in s
        window (float): Length of one integration window in s

    Returns:
        ndarray: tau in s per row
    """
    control_rows = control_matrix(controls)
    n = control_rows.shape[0]
    devices = _rows(models, n)

    v0 = np.empty(n)
    v1 = np.empty(n)
    for r in range(n):
        start = reached_equilibrium(devices[r], 0.0, control_rows[r], 0.0)
        end = None if start is None else reached_equilibrium(devices[r], STEP_VOLTAGE, control_rows[r], start)
        if start is None or end is None or end == start:
            raise NoSettle(f"row {r}: the output has no steady state to settle to")
        v0[r], v1[r] = start, end
    swing = v1 - v0

    tau = np.full(n, np.nan)
    settled = np.zeros(n, dtype=bool)
    state = v0.copy()
    n_window = max(2, int(round(window * rate)))
    n_total = int(round(t_max * rate))
    offset = 0

    while offset < n_total and not np.all(settled):
        active = np.flatnonzero(~settled)
        inputs = np.full((active.size, n_window), STEP_VOLTAGE)
        if offset == 0:
            inputs[:, 0] = 0.0
        trace, final = simulate_batch([devices[r] for r in active], cfg, inputs, rate,
                                      control_rows[active], state[active], return_final=True)
        progress = (trace - v0[active, None]) / swing[active, None]
        for row, r in enumerate(active):
            if np.isnan(tau[r]):
                hits = np.flatnonzero(progress[row] >= STEP_FRACTION)
                if hits.size:
                    tau[r] = (offset + hits[0] - 1) / rate
        state[active] = final
        settled[active] = (~np.isnan(tau[active])
                           & (np.abs(final - v1[active]) <= SETTLE_TOLERANCE * np.abs(swing[active])))
        offset += n_window

    if not np.all(settled):
        missing = np.flatnonzero(~settled).tolist()
        raise NoSettle(f"{len(missing)} rows did not settle within {t_max} s (rows {missing[:10]})")
    return tau


def step_response_tau(m: DnpuModel, cfg: CircuitConfig, c: ControlSet, **kwargs):
    """Step-response time constant of one device and control set (s)."""
    return float(step_response_tau_batch(m, cfg, [c], **kwargs)[0])


def _input_rows(w: Waveform, n):
    return np.tile(w.samples, (n, 1))


def _steady_initial(devices, controls):
    return np.array([
        reached_equilibrium(m, 0.0, c, 0.0) or 0.0 for m, c in zip(devices, controls)
    ])


def two_tone_response_batch(models, cfg: CircuitConfig, controls, f1=74.0, f2=174.0,
                            amplitude=TWO_TONE_AMPLITUDE, T=TWO_TONE_DURATION, rate=TWO_TONE_RATE,
                            segment_len=TWO_TONE_SEGMENT, discard=TRANSIENT_DISCARD):
    """
    Output spectra for a two-tone drive, one per control row.

    The output starts at its V_in = 0 equilibrium and the first `discard` seconds
    are excluded from the PSD.

    Returns:
        list: Spectrum per row
    """
    control_rows = control_matrix(controls)
    devices = _rows(models, control_rows.shape[0])
    drive = gen_two_tone(f1, f2, amplitude, amplitude, T, rate)
    v_init = _steady_initial(devices, control_rows)
    out = simulate_batch(devices, cfg, _input_rows(drive, len(devices)), rate, control_rows, v_init)
    skip = int(round(discard * rate))
    segment = min(segment_len, 1 << ((out.shape[1] - skip).bit_length() - 1))
    return [psd(Waveform(row[skip:], rate), segment) for row in out]


def two_tone_response(m: DnpuModel, cfg: CircuitConfig, c, f1=74.0, f2=174.0, **kwargs):
    """
    Output PSD of the device driven by a two-tone input (0.375 V per tone).

    Args:
        m (DnpuModel): Device
        cfg (CircuitConfig): Output circuit
        c (ControlSet): Control voltages
        f1 (float): Lower tone in Hz
        f2 (float): Upper tone in Hz

    Returns:
        Spectrum: Output PSD
    """
    if not f2 > f1:
        raise ValueError(f"two-tone response needs f2 > f1, got f1={f1}, f2={f2}")
    return two_tone_response_batch(m, cfg, [c], f1, f2, **kwargs)[0]


def imd_contrast(spectrum, frequency):
    """Level of a line above the surrounding floor (dB)."""
    return line_level(spectrum, frequency) - local_floor(spectrum, frequency)


def chirp_response_batch(models, cfg: CircuitConfig, controls, params=None, rate=CHIRP_RATE,
                         segment_len=1024, overlap=0.75):
    """
    Chirp responses and their spectrograms, one per control row.

    Returns:
        list: (output Waveform, (times, freqs, power_db)) per row
    """
    params = params or ChirpParams()
    control_rows = control_matrix(controls)
    devices = _rows(models, control_rows.shape[0])
    drive = gen_chirp(params, rate)
    out = simulate_batch(devices, cfg, _input_rows(drive, len(devices)), rate, control_rows, 0.0)
    results = []
    for row in out:
        w = Waveform(row, rate)
        results.append((w, spectrogram(w, segment_len, overlap)))
    return results


def chirp_response(m: DnpuModel, cfg: CircuitConfig, c, params=None, **kwargs):
    """
    Drive one device with an exponential chirp.

    Returns:
        tuple: (output Waveform, spectrogram triple)
    """
    return chirp_response_batch(m, cfg, [c], params, **kwargs)[0]


def alternating_controls(magnitude):
    """Raw control vector +m, -m, +m, ... used for bias sweeps beyond the sampling range."""
    signs = np.array([1.0 if j % 2 == 0 else -1.0 for j in range(N_CONTROLS)])
    return magnitude * signs


def thd_sweep(m: DnpuModel, cfg: CircuitConfig, control_magnitudes=(0.0, 0.1, 0.2, 0.3, 0.4, 0.5),
              f0=200.0, amplitude=TWO_TONE_AMPLITUDE, T=0.6, rate=12.5e3, discard=0.1):
    """
    Total harmonic distortion of a tone response as the control bias grows.

    All six controls sit at the same magnitude with alternating signs.

    Returns:
        DataFrame: control_magnitude_V, thd
    """
    magnitudes = np.asarray(control_magnitudes, dtype=np.float64)
    controls = [alternating_controls(mag) for mag in magnitudes]
    t = np.arange(int(round(T * rate))) / rate
    drive = Waveform(amplitude * np.sin(2.0 * np.pi * f0 * t), rate)
    devices = [m] * len(controls)
    v_init = _steady_initial(devices, controls)
    out = simulate_batch(devices, cfg, _input_rows(drive, len(controls)), rate, controls, v_init)
    skip = int(round(discard * rate))
    ratios = [thd(Waveform(row[skip:], rate), f0, segment_len=2048) for row in out]
    return pd.DataFrame({'control_magnitude_V': magnitudes, 'thd': ratios})


def control_sensitivity(m: DnpuModel, cfg: CircuitConfig, w: Waveform, c: ControlSet, step=0.01):
    """
    Central-difference derivative of the output RMS with respect to each control.

    Returns:
        ndarray: d(RMS)/dv_cj in V/V for j = 1..6
    """
    base = c.vector
    rows = []
    for j in range(N_CONTROLS):
        for sign in (1.0, -1.0):
            shifted = base.copy()
            shifted[j] += sign * step
            rows.append(shifted)
    out = simulate_batch(m, cfg, _input_rows(w, len(rows)), w.sample_rate, rows, 0.0)
    rms = np.sqrt(np.mean(out ** 2, axis=1))
    return (rms[0::2] - rms[1::2]) / (2.0 * step)


def static_power_survey(m: DnpuModel, controls, v_in=0.0, v_out=0.0):
    """Static power per control set at a fixed bias (W)."""
    return np.array([static_power(m, v_in, v_out, c) for c in controls])


def tau_survey(m: DnpuModel, cfg: CircuitConfig, controls):
    """
    Step-response time constants over many control sets.

    Returns:
        DataFrame: set_index, c1_V..c6_V, tau_s
    """
    matrix = control_matrix(controls)
    tau = step_response_tau_batch(m, cfg, controls)
    df = pd.DataFrame(matrix, columns=[f"c{j + 1}_V" for j in range(N_CONTROLS)])
    df.insert(0, 'set_index', np.arange(len(df)))
    df['tau_s'] = tau
    logger.info(f"tau survey: median {np.median(tau) * 1e3:.3f} ms over {len(tau)} control sets")
    return df
