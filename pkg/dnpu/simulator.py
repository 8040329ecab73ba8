import logging
from dataclasses import dataclass

import numpy as np

from dnpu.models import N_CONTROLS, CircuitConfig, DnpuModel, control_matrix
from exceptions import StepTooLarge
from waveforms.models import Waveform

logger = logging.getLogger(__name__)

MIN_INPUT_RATE = 1000.0
# Ratio between the local RC constant and the ODE step the guard demands
STIFFNESS_RATIO = 5.0


@dataclass
class BranchBatch:
    """Per-row branch parameters, each (n_rows, 7)."""
    s: np.ndarray
    a: np.ndarray
    neg_b: np.ndarray
    d: np.ndarray
    neg_inv_lam2: np.ndarray
    gate_ctrl: np.ndarray
    gamma_in: np.ndarray
    controls: np.ndarray
    linear: bool

    @property
    def n_rows(self):
        return self.s.shape[0]

    @classmethod
    def build(cls, models, controls):
        """
        Args:
            models (DnpuModel or sequence): One device for all rows or one per row
            controls (sequence): ControlSets or raw 6-vectors, one per row
        """
        controls = control_matrix(controls)
        n = controls.shape[0]
        if isinstance(models, DnpuModel):
            models = [models] * n
        models = list(models)
        if len(models) != n:
            raise ValueError(f"got {len(models)} devices for {n} control rows")
        linear_flags = {m.linear for m in models}
        if len(linear_flags) > 1:
            raise ValueError("cannot mix linearized and nonlinear devices in one batch")

        stack = lambda name: np.stack([getattr(m, name) for m in models]) if n else np.zeros((0, 7))
        gamma = np.stack([m.gamma for m in models]) if n else np.zeros((0, 7, 7))
        return cls(
            s=stack('s'),
            a=stack('a'),
            neg_b=-stack('b'),
            d=stack('d'),
            neg_inv_lam2=-1.0 / stack('lam') ** 2,
            gate_ctrl=np.einsum('nkj,nj->nk', gamma[:, :, 1:], controls),
            gamma_in=gamma[:, :, 0].copy(),
            controls=controls,
            linear=linear_flags.pop() if linear_flags else False,
        )


def _currents(v, potentials, gate, p: BranchBatch):
    delta = potentials - v[:, None]
    if p.linear:
        return gate * delta
    return (gate * (np.exp(p.a * delta) - np.exp(p.neg_b * delta))
            + p.d * delta * np.exp(delta * delta * p.neg_inv_lam2))


def _conductance(v, potentials, gate, p: BranchBatch):
    if p.linear:
        return np.sum(gate, axis=1)
    delta = potentials - v[:, None]
    u = delta * delta * p.neg_inv_lam2
    return np.sum(gate * (p.a * np.exp(p.a * delta) - p.neg_b * np.exp(p.neg_b * delta))
                  + p.d * np.exp(u) * (1.0 + 2.0 * u), axis=1)


def simulate_batch(models, cfg: CircuitConfig, inputs, sample_rate, controls, v_out_init=0.0,
                   check_step=True, return_final=False):
    """
    Integrate C_ext*dV_out/dt = I(V_in, V_out, c) for many rows at once.

    Classical RK4 at dt = 1/(rate*oversample) with V_in held constant within each
    input sample. Rows never interact, so a row's trace does not depend on what
    else is in the batch.

    Args:
        models (DnpuModel or sequence): Device per row (or shared)
        cfg (CircuitConfig): Output circuit
        inputs (ndarray): Input voltages, shape (n_rows, n_samples)
        sample_rate (float): Input sample rate in S/s
        controls (sequence): Control voltages per row
        v_out_init (float or ndarray): Initial output voltage
        check_step (bool): Enforce the stiffness guard
        return_final (bool): Also return the state after the last sample

    Returns:
        ndarray: V_out at the input sample instants (n_rows, n_samples), and the
        final state when requested
    """
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"inputs must be 2-D (rows, samples), got shape {x.shape}")
    if sample_rate < MIN_INPUT_RATE:
        raise ValueError(f"input sample rate must be at least {MIN_INPUT_RATE} S/s, got {sample_rate}")

    p = BranchBatch.build(models, controls)
    if p.n_rows != x.shape[0]:
        raise ValueError(f"{x.shape[0]} input rows but {p.n_rows} control rows")

    n_rows, n_samples = x.shape
    h = 1.0 / (sample_rate * cfg.oversample)
    half = 0.5 * h
    sixth = h / 6.0
    inv_c = 1.0 / cfg.C_ext

    v = np.array(np.broadcast_to(np.asarray(v_out_init, dtype=np.float64), (n_rows,)))
    out = np.empty((n_rows, n_samples))
    potentials = np.empty((n_rows, N_CONTROLS + 1))
    potentials[:, 1:] = p.controls

    if p.linear:
        # (gate*(a+b) + d), independent of V_in
        fixed_gate = p.s * np.exp(p.gate_ctrl) * (p.a - p.neg_b) + p.d

    def rate_of_change(state):
        return np.sum(_currents(state, potentials, gate, p), axis=1) * inv_c

    for i in range(n_samples):
        out[:, i] = v
        v_in = x[:, i]
        potentials[:, 0] = v_in
        if p.linear:
            gate = fixed_gate
        else:
            gate = p.s * np.exp(p.gate_ctrl + p.gamma_in * v_in[:, None])

        if check_step:
            conductance = np.abs(_conductance(v, potentials, gate, p))
            g_max = float(np.max(conductance)) if n_rows else 0.0
            if g_max > 0 and h > cfg.C_ext / g_max / STIFFNESS_RATIO:
                tau_est = cfg.C_ext / g_max
                logger.error(f"Stiffness guard tripped at sample {i}: dt={h:.3e} s, tau_est={tau_est:.3e} s")
                raise StepTooLarge(h, tau_est, i)

        for _ in range(cfg.oversample):
            k1 = rate_of_change(v)
            k2 = rate_of_change(v + half * k1)
            k3 = rate_of_change(v + half * k2)
            k4 = rate_of_change(v + h * k3)
            v = v + sixth * (k1 + 2.0 * k2 + 2.0 * k3 + k4)

        if not np.all(np.isfinite(v)):
            raise FloatingPointError(f"output voltage became non-finite at sample {i}")

    if return_final:
        return out, v
    return out


def simulate(m: DnpuModel, cfg: CircuitConfig, input: Waveform, c, v_out_init=0.0):
    """
    Output voltage of one device driven by a waveform.

    Args:
        m (DnpuModel): Device
        cfg (CircuitConfig): Output circuit
        input (Waveform): V_in(t)
        c (ControlSet): Control voltages
        v_out_init (float): Initial output voltage

    Returns:
        Waveform: V_out at the input sample instants
    """
    out = simulate_batch(m, cfg, input.samples[None, :], input.sample_rate, [c], v_out_init)
    return Waveform(out[0], input.sample_rate)
