import logging

import numpy as np
import pytest

from dnpu.characterize import STEP_RATE, control_sensitivity, imd_contrast, reached_equilibrium, step_response_tau
from dnpu.models import CircuitConfig, ControlSet, DnpuModel
from dnpu.simulator import simulate, simulate_batch
from dnpu.surrogate import (has_ndr, net_conductance, net_current, r_dnpu, fading_memory_window, sample_device,
                            static_iv_sweep, static_power)
from exceptions import StepTooLarge
from waveforms.generators import gen_chirp
from waveforms.models import ChirpParams, Spectrum, Waveform

logger = logging.getLogger('test_dnpu')


@pytest.fixture
def device():
    return sample_device(0)


def _monotone_device():
    ones = np.ones(7)
    return DnpuModel(s=np.full(7, 1e-9), a=2.0 * ones, b=3.0 * ones, gamma=np.zeros((7, 7)),
                     d=np.zeros(7), lam=0.3 * ones)


def test_sample_device_is_deterministic(device):
    again = sample_device(0)
    for name in ('s', 'a', 'b', 'gamma', 'd', 'lam'):
        assert np.array_equal(getattr(device, name), getattr(again, name))
    assert not np.array_equal(sample_device(1).s, device.s)


def test_sample_device_parameter_ranges():
    for seed in range(20):
        m = sample_device(seed)
        assert np.all((m.s >= 0.05e-9) & (m.s <= 2e-9))
        assert np.all((m.a >= 1.0) & (m.a <= 4.0))
        assert np.all((m.b >= 1.0) & (m.b <= 4.0))
        assert np.all(np.abs(m.gamma) <= 1.5)
        assert np.all((m.lam >= 0.2) & (m.lam <= 0.6))
        assert np.all(np.abs(m.d) <= 5e-9)


def test_device_json_round_trip(device):
    restored = DnpuModel.from_json(device.to_json())
    assert np.array_equal(restored.gamma, device.gamma)
    assert restored.seed == device.seed


def test_control_limits():
    ControlSet((0.4, -0.4, 0.4, -0.4, 0.2, -0.2))
    with pytest.raises(ValueError):
        ControlSet((0.0, 0.0, 0.0, 0.0, 0.3, 0.0))
    with pytest.raises(ValueError):
        ControlSet((0.5, 0.0, 0.0, 0.0, 0.0, 0.0))


def test_circuit_config_limits():
    with pytest.raises(ValueError):
        CircuitConfig(C_ext=1e-13)
    with pytest.raises(ValueError):
        CircuitConfig(oversample=0)
    with pytest.raises(ValueError):
        CircuitConfig(buffer_impedance=1e6)


def test_net_current_zero_at_origin(device):
    assert net_current(device, 0.0, 0.0, ControlSet.zero()) == 0.0


def test_net_current_rejects_large_voltages(device):
    with pytest.raises(ValueError):
        net_current(device, 2.0, 0.0)


def test_conductance_at_origin(device):
    expected = np.sum(device.s * (device.a + device.b) + device.d)
    assert net_conductance(device, 0.0, 0.0) == pytest.approx(expected, rel=1e-12)


@pytest.mark.parametrize('v_in,v_out,fraction', [(0.0, 0.0, 0.0), (0.2, 0.1, 0.5), (-0.3, 0.25, -0.8)])
def test_conductance_matches_finite_difference(device, v_in, v_out, fraction):
    c = ControlSet.scaled(fraction)
    h = 1e-6
    numeric = -(net_current(device, v_in, v_out + h, c) - net_current(device, v_in, v_out - h, c)) / (2.0 * h)
    assert net_conductance(device, v_in, v_out, c) == pytest.approx(numeric, rel=1e-6)


def test_fading_memory_window_is_rc(device):
    cfg = CircuitConfig()
    assert fading_memory_window(device, cfg) == pytest.approx(r_dnpu(device, 0.0, 0.0) * cfg.C_ext)


def test_zero_input_stays_at_fixed_point(device):
    out = simulate(device, CircuitConfig(), Waveform(np.zeros(200), 25e3), ControlSet.zero())
    assert np.all(out.samples == 0.0)


def test_simulate_is_deterministic(device):
    w = gen_chirp(ChirpParams(T=0.05), 25e3)
    c = ControlSet.scaled(0.3)
    a = simulate(device, CircuitConfig(), w, c)
    b = simulate(device, CircuitConfig(), w, c)
    assert np.array_equal(a.samples, b.samples)


def test_simulate_rejects_low_rate(device):
    with pytest.raises(ValueError):
        simulate(device, CircuitConfig(), Waveform(np.zeros(10), 500.0), ControlSet.zero())


def test_stiffness_guard(device):
    cfg = CircuitConfig(C_ext=1e-12, oversample=1)
    with pytest.raises(StepTooLarge) as info:
        simulate(device, cfg, Waveform(np.zeros(10), 1000.0), ControlSet.zero())
    assert info.value.dt == pytest.approx(1e-3)


def test_rk4_converges_when_oversample_doubles(device):
    w = gen_chirp(ChirpParams(T=0.25), 25e3)
    c = ControlSet.zero()
    coarse = simulate(device, CircuitConfig(oversample=8), w, c).samples
    fine = simulate(device, CircuitConfig(oversample=16), w, c).samples
    assert np.sqrt(np.mean((coarse - fine) ** 2)) < 1e-4


def test_rk4_error_falls_with_step(device):
    rate = 25e3
    t = np.arange(1250) / rate
    inputs = (0.3 * np.sin(2.0 * np.pi * 50.0 * t))[None, :]
    controls = [ControlSet.scaled(0.2)]
    reference = simulate_batch(device, CircuitConfig(oversample=8), inputs, rate, controls)
    err_1 = np.sqrt(np.mean((simulate_batch(device, CircuitConfig(oversample=1), inputs, rate, controls)
                             - reference) ** 2))
    err_2 = np.sqrt(np.mean((simulate_batch(device, CircuitConfig(oversample=2), inputs, rate, controls)
                             - reference) ** 2))
    assert err_2 * 8.0 <= err_1


def test_fading_memory_forgets_initial_condition(device):
    cfg = CircuitConfig()
    grid = np.linspace(0.0, 0.2, 41)
    g_min = float(np.min(net_conductance(device, 0.0, grid)))
    assert g_min > 0
    tau = cfg.C_ext / g_min
    rate = 25e3
    n = int(np.ceil(10.0 * tau * rate)) + 1
    inputs = np.zeros((2, n))
    out = simulate_batch(device, cfg, inputs, rate, [ControlSet.zero()] * 2, np.array([0.0, 0.2]))
    assert abs(out[0, -1] - out[1, -1]) < 1e-3


def test_static_power_zero_bias(device):
    assert static_power(device, 0.0, 0.0, ControlSet.zero()) == 0.0


def test_static_power_is_never_negative():
    rng = np.random.default_rng(42)
    for seed in range(5):
        m = sample_device(seed)
        for _ in range(2000):
            v_in, v_out = rng.uniform(-0.5, 0.5, 2)
            c = rng.uniform(-1.0, 1.0, 6) * np.array([0.4, 0.4, 0.4, 0.4, 0.2, 0.2])
            assert static_power(m, v_in, v_out, c) >= -1e-24


def test_static_power_rejects_large_bias(device):
    with pytest.raises(ValueError):
        static_power(device, 0.6, 0.0)


def test_iv_sweep_of_zero_device_is_zero():
    iv = static_iv_sweep(DnpuModel.zeros(), 'input', np.linspace(-0.4, 0.4, 21))
    assert np.all(iv['i_out_A'] == 0.0)
    assert list(iv.columns[:2]) == ['v_V', 'i_out_A']


def test_iv_sweep_monotone_without_ndr():
    iv = static_iv_sweep(_monotone_device(), 'input', np.linspace(-0.4, 0.4, 81))
    assert np.all(np.diff(iv['i_out_A']) > 0)
    assert not has_ndr(iv)


def test_iv_sweep_rejects_wide_range(device):
    with pytest.raises(ValueError):
        static_iv_sweep(device, 'c1', [0.0, 0.6])


def test_some_device_shows_ndr():
    sweep = np.linspace(-0.4, 0.4, 161)
    found = any(has_ndr(static_iv_sweep(sample_device(seed), 'input', sweep)) for seed in range(100))
    assert found


def test_linearized_device_current_is_linear(device):
    lin = device.linearized()
    c = ControlSet.scaled(0.4)
    i1 = net_current(lin, 0.1, 0.0, c)
    i2 = net_current(lin, 0.2, 0.0, c)
    i0 = net_current(lin, 0.0, 0.0, c)
    assert (i2 - i0) == pytest.approx(2.0 * (i1 - i0), rel=1e-9)


@pytest.mark.parametrize('bias', [0.0, 0.5])
def test_step_response_tau_of_first_order_device(bias):
    lin = _monotone_device().linearized()
    c = ControlSet.scaled(bias)
    cfg = CircuitConfig(C_ext=100e-12)
    expected = cfg.C_ext / net_conductance(lin, 0.0, 0.0, c)
    assert expected == pytest.approx(100e-12 / 3.5e-8, rel=1e-9)
    if bias:
        assert reached_equilibrium(lin, 0.0, c) > 0.0

    tau = step_response_tau(lin, cfg, c)
    logger.info(f"bias {bias}: tau {tau * 1e3:.4f} ms, C/G {expected * 1e3:.4f} ms")
    assert tau == pytest.approx(expected, abs=0.01 * expected + 2.0 / STEP_RATE)


def test_reached_equilibrium_is_a_zero_of_the_current(device):
    c = ControlSet.scaled(0.5)
    v = reached_equilibrium(device, 0.3, c)
    assert v is not None
    assert abs(net_current(device, 0.3, v, c)) < 1e-15


def test_controls_matter(device):
    t = np.arange(2500) / 25e3
    w = Waveform(0.375 * np.sin(2.0 * np.pi * 200.0 * t), 25e3)
    sensitivity = control_sensitivity(device, CircuitConfig(), w, ControlSet.scaled(0.25))
    logger.info(f"RMS sensitivity per control: {sensitivity}")
    assert np.count_nonzero(np.abs(sensitivity) > 1e-6) >= 4


def test_imd_contrast_of_synthetic_line():
    freqs = np.arange(0.0, 500.0, 1.0)
    power = np.full(freqs.size, -120.0)
    power[26] = -90.0
    assert imd_contrast(Spectrum(freqs, power), 26.0) == pytest.approx(30.0)
