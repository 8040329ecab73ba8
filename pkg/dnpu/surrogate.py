import logging

import numpy as np
import pandas as pd

from dnpu.models import BRANCH_NAMES, N_BRANCHES, N_CONTROLS, ControlSet, DnpuModel

logger = logging.getLogger(__name__)

# Sampling distributions
S_RANGE = (0.05e-9, 2e-9)
EXPONENT_SAMPLING = (1.0, 4.0)
GAMMA_SIGMA = 0.5
GAMMA_CLIP = 1.5
NDR_PROBABILITY = 0.5
NDR_AMPLITUDE = 5e-9
LAM_RANGE = (0.2, 0.6)
MAX_NDR_DRAWS = 20

# Bias domain over which passivity is guaranteed
PASSIVE_VMAX = 0.5
_PASSIVITY_GRID = np.concatenate([
    np.linspace(-2 * PASSIVE_VMAX, -1e-3, 1000),
    np.linspace(1e-3, 2 * PASSIVE_VMAX, 1000),
])

STATIC_VMAX = 0.5
SWEEP_VMAX = 0.5
CURRENT_VMAX = 1.5


def _controls_vector(c):
    if c is None:
        return np.zeros(N_CONTROLS)
    if isinstance(c, ControlSet):
        return c.vector
    v = np.asarray(c, dtype=np.float64)
    if v.shape != (N_CONTROLS,):
        raise ValueError(f"expected {N_CONTROLS} control voltages, got shape {v.shape}")
    return v


def passivity_limit(s, a, b, gamma_row, lam, vmax=PASSIVE_VMAX):
    """
    Largest negative NDR amplitude |d| a branch tolerates while staying passive.

    Passivity means delta*I(delta) >= 0 for every bias with electrode potentials
    in [-vmax, vmax], using the weakest gating exp(-vmax*sum|gamma|).

    Returns:
        float: Limit in A/V
    """
    g_min = s * np.exp(-vmax * np.sum(np.abs(gamma_row)))
    delta = _PASSIVITY_GRID
    ratio = g_min * (np.expm1(a * delta) - np.expm1(-b * delta)) / delta
    ratio = ratio * np.exp((delta / lam) ** 2)
    at_origin = g_min * (a + b)
    return float(min(at_origin, np.min(ratio)))


def is_branch_passive(s, a, b, gamma_row, d, lam, vmax=PASSIVE_VMAX):
    if d >= 0:
        return True
    return -d <= passivity_limit(s, a, b, gamma_row, lam, vmax)


def sample_device(seed):
    """
    Sample surrogate parameters for one device.

    A negative NDR amplitude that would make its branch active somewhere in the
    +/-0.5 V bias domain is redrawn; after repeated failures the branch gets d=0.

    Args:
        seed (int): Device seed

    Returns:
        DnpuModel: Device parameters
    """
    rng = np.random.default_rng(seed)
    s = np.exp(rng.uniform(np.log(S_RANGE[0]), np.log(S_RANGE[1]), N_BRANCHES))
    a = rng.uniform(*EXPONENT_SAMPLING, N_BRANCHES)
    b = rng.uniform(*EXPONENT_SAMPLING, N_BRANCHES)
    gamma = np.clip(rng.normal(0.0, GAMMA_SIGMA, (N_BRANCHES, N_BRANCHES)), -GAMMA_CLIP, GAMMA_CLIP)
    lam = rng.uniform(*LAM_RANGE, N_BRANCHES)

    d = np.zeros(N_BRANCHES)
    for k in range(N_BRANCHES):
        for attempt in range(MAX_NDR_DRAWS):
            if rng.random() < NDR_PROBABILITY:
                d[k] = 0.0
                break
            candidate = rng.uniform(-NDR_AMPLITUDE, NDR_AMPLITUDE)
            if is_branch_passive(s[k], a[k], b[k], gamma[k], candidate, lam[k]):
                d[k] = candidate
                break
            logger.debug(f"Device {seed}: redraw NDR term of branch {BRANCH_NAMES[k]} (attempt {attempt + 1})")
        else:
            logger.debug(f"Device {seed}: branch {BRANCH_NAMES[k]} kept without NDR term")
            d[k] = 0.0

    return DnpuModel(s=s, a=a, b=b, gamma=gamma, d=d, lam=lam, seed=seed)


def electrode_potentials(v_in, c):
    """Potentials of the input and control electrodes, shape (..., 7)."""
    v_in = np.asarray(v_in, dtype=np.float64)
    controls = np.broadcast_to(_controls_vector(c), v_in.shape + (N_CONTROLS,))
    return np.concatenate([v_in[..., None], controls], axis=-1)


def branch_currents(m: DnpuModel, v_in, v_out, c=None):
    """
    Current of every branch into the output node.

    Args:
        m (DnpuModel): Device
        v_in (float or ndarray): Input electrode voltage
        v_out (float or ndarray): Output node voltage
        c (ControlSet or array): Control voltages

    Returns:
        ndarray: Currents in A with a trailing axis of length 7
    """
    v_in, v_out = np.broadcast_arrays(np.asarray(v_in, dtype=np.float64),
                                      np.asarray(v_out, dtype=np.float64))
    potentials = electrode_potentials(v_in, c)
    delta = potentials - v_out[..., None]
    if m.linear:
        gate = m.s * np.exp(potentials[..., 1:] @ m.gamma[:, 1:].T)
        return (gate * (m.a + m.b) + m.d) * delta
    gate = m.s * np.exp(potentials @ m.gamma.T)
    exp_part = gate * (np.exp(m.a * delta) - np.exp(-m.b * delta))
    ndr_part = m.d * delta * np.exp(-(delta / m.lam) ** 2)
    return exp_part + ndr_part


def net_current(m: DnpuModel, v_in, v_out, c=None):
    """
    Total current into the output node,
    I = sum_k s_k*(exp(a_k*dk) - exp(-b_k*dk))*exp(sum_j gamma_kj*V_j) + d_k*dk*exp(-(dk/lam_k)^2).
    """
    v_in_arr = np.asarray(v_in, dtype=np.float64)
    v_out_arr = np.asarray(v_out, dtype=np.float64)
    if np.any(np.abs(v_in_arr) > CURRENT_VMAX) or np.any(np.abs(v_out_arr) > CURRENT_VMAX):
        raise ValueError(f"voltages must lie within +/-{CURRENT_VMAX} V")
    if np.any(np.abs(_controls_vector(c)) > CURRENT_VMAX):
        raise ValueError(f"control voltages must lie within +/-{CURRENT_VMAX} V")
    currents = branch_currents(m, v_in_arr, v_out_arr, c)
    total = np.sum(currents, axis=-1)
    return float(total) if total.ndim == 0 else total


def net_conductance(m: DnpuModel, v_in, v_out, c=None):
    """Small-signal conductance -dI/dv_out at an operating point (S)."""
    v_in, v_out = np.broadcast_arrays(np.asarray(v_in, dtype=np.float64),
                                      np.asarray(v_out, dtype=np.float64))
    potentials = electrode_potentials(v_in, c)
    delta = potentials - v_out[..., None]
    if m.linear:
        gate = m.s * np.exp(potentials[..., 1:] @ m.gamma[:, 1:].T)
        per_branch = gate * (m.a + m.b) + m.d
    else:
        gate = m.s * np.exp(potentials @ m.gamma.T)
        u = (delta / m.lam) ** 2
        per_branch = (gate * (m.a * np.exp(m.a * delta) + m.b * np.exp(-m.b * delta))
                      + m.d * np.exp(-u) * (1.0 - 2.0 * u))
    total = np.sum(per_branch, axis=-1)
    return float(total) if total.ndim == 0 else total


def r_dnpu(m: DnpuModel, v_in, v_out, c=None):
    """Small-signal device resistance seen from the output node (ohm)."""
    g = np.abs(np.asarray(net_conductance(m, v_in, v_out, c), dtype=np.float64))
    with np.errstate(divide='ignore'):
        r = 1.0 / g
    return float(r) if r.ndim == 0 else r


def fading_memory_window(m: DnpuModel, cfg, v_in=0.0, v_out=0.0, c=None):
    """
    Memory time constant R_DNPU * C_ext at an operating point (s).

    Input variations slower than this window are followed by the output; faster
    ones are integrated together with the charge already on C_ext.
    """
    return r_dnpu(m, v_in, v_out, c) * cfg.C_ext


def static_power(m: DnpuModel, v_in, v_out, c=None):
    """
    Static power sum_k V_k * I_k over all 8 electrodes (W).

    The output electrode carries minus the sum of the branch currents.
    """
    controls = _controls_vector(c)
    if max(abs(v_in), abs(v_out), float(np.max(np.abs(controls), initial=0.0))) > STATIC_VMAX:
        raise ValueError(f"static power is defined for voltages within +/-{STATIC_VMAX} V")
    currents = branch_currents(m, v_in, v_out, controls)
    potentials = np.concatenate([[v_in], controls, [v_out]])
    electrode_currents = np.concatenate([currents, [-np.sum(currents)]])
    return float(np.dot(potentials, electrode_currents))


def static_iv_sweep(m: DnpuModel, electrode, v_range, fixed=None, input_voltage=0.0):
    """
    Sweep one electrode while the output node is held at virtual ground.

    Args:
        m (DnpuModel): Device
        electrode (int or str): 0 or 'input' for the input electrode, 1..6 or 'c1'..'c6'
        v_range (array-like): Sweep voltages within +/-0.5 V
        fixed (ControlSet or array, optional): Control voltages of the other electrodes
        input_voltage (float): Input voltage while a control electrode is swept

    Returns:
        DataFrame: v_V, i_out_A and one i_<branch>_A column per branch
    """
    index = BRANCH_NAMES.index(electrode) if isinstance(electrode, str) else int(electrode)
    if not 0 <= index < N_BRANCHES:
        raise ValueError(f"unknown electrode {electrode!r}")
    sweep = np.asarray(v_range, dtype=np.float64)
    if np.any(np.abs(sweep) > SWEEP_VMAX):
        raise ValueError(f"sweep voltages must lie within +/-{SWEEP_VMAX} V")

    controls = np.tile(_controls_vector(fixed), (sweep.size, 1))
    v_in = np.full(sweep.size, float(input_voltage))
    if index == 0:
        v_in = sweep.copy()
    else:
        controls[:, index - 1] = sweep

    currents = np.stack([
        branch_currents(m, v_in[i], 0.0, controls[i]) for i in range(sweep.size)
    ]) if sweep.size else np.zeros((0, N_BRANCHES))

    df = pd.DataFrame({'v_V': sweep, 'i_out_A': currents.sum(axis=1)})
    for k, name in enumerate(BRANCH_NAMES):
        df[f"i_{name}_A"] = currents[:, k]
    return df


def has_ndr(iv: pd.DataFrame):
    """True when a swept output current has a falling segment."""
    return bool(np.any(np.diff(iv['i_out_A'].to_numpy()) < 0))
