import math

import numpy as np
import pytest

from aimc.crossbar import (Tile, analog_forward, analog_mvm, calibrate_output_ranges, device_utilization,
                           load_program, map_model, program, read_weights, repeated_inference, save_program,
                           sigma_prog_sweep, utilization_frame, utilization_summary)
from aimc.hwa import HwaConfig, HwaContext, clip_weights, hwa_retrain, quantize
from exceptions import HashMismatch, ShapeMismatch
from net.arch import ArchSpec, catalog, conv, gap, linear
from net.model import build
from net.train import TrainConfig, train


@pytest.fixture(scope='module')
def ti46_model():
    return build(catalog('ti46-aimc'), init_seed=1)


def _small_model(seed=0):
    return build(catalog('ti46-aimc', n_channels=4), init_seed=seed)


def _features(n=3, channels=4, frames=200, seed=0):
    return np.random.default_rng(seed).normal(size=(n, channels, frames))


def test_ti46_maps_to_expected_tiles(ti46_model):
    p = map_model(ti46_model, input_len=1250)
    assert [(lm.rows, lm.cols) for lm in p.layers] == [(512, 96), (288, 96), (288, 36), (36, 10)]
    assert [len(lm.tiles) for lm in p.layers] == [2, 2, 2, 1]
    assert len(p.tiles) == 7
    assert p.cores_used == 7
    assert p.packed_cores == 2
    assert [lm.mvm_count for lm in p.layers] == [1243, 308, 75, 1]


def test_linear_tile_utilization(ti46_model):
    p = map_model(ti46_model)
    head = p.tiles_of(p.layers[-1].layer_index)[0]
    assert head.utilization == pytest.approx(360 / 65536)
    assert device_utilization(17152) == pytest.approx(17152 / 262144)
    assert device_utilization(17152) == pytest.approx(0.0654, abs=1e-4)


def test_utilization_reports(ti46_model):
    p = map_model(ti46_model)
    frame = utilization_frame(p)
    assert len(frame) == 8
    assert frame['tile'].iloc[-1] == 'total'
    assert frame['cells'].iloc[-1] == 512 * 96 + 288 * 96 + 288 * 36 + 36 * 10
    summary = utilization_summary(p)
    assert summary['tiles'] == 7
    assert summary['cores_available'] == 64


def test_map_rejects_bad_tile_dim(ti46_model):
    with pytest.raises(ValueError):
        map_model(ti46_model, tile_dim=512)


def test_conductances_are_differential_and_bounded(ti46_model):
    for t in map_model(ti46_model).tiles:
        assert np.all((t.g_plus >= 0) & (t.g_plus <= 1))
        assert np.all((t.g_minus >= 0) & (t.g_minus <= 1))
        assert not np.any((t.g_plus > 0) & (t.g_minus > 0))
        assert max(t.g_plus.max(), t.g_minus.max()) == pytest.approx(1.0)


def test_read_weights_recovers_layer_weights(ti46_model):
    weights = read_weights(map_model(ti46_model))
    for index, layer in ti46_model.matrix_layers:
        assert weights[index].shape == layer.params['W'].shape
        assert np.allclose(weights[index], layer.params['W'], rtol=1e-15, atol=0)


def test_small_tiles_still_reassemble():
    model = _small_model()
    p = map_model(model, tile_dim=7)
    assert all(t.rows <= 7 and t.cols <= 7 for t in p.tiles)
    for index, layer in model.matrix_layers:
        assert np.allclose(read_weights(p)[index], layer.params['W'], rtol=1e-15, atol=0)


def test_noiseless_analog_forward_matches_digital():
    model = _small_model()
    x = _features()
    analog = analog_forward(map_model(model), model, x, hwa=HwaConfig.noiseless())
    assert np.allclose(analog, model.forward(x), rtol=0, atol=1e-12)


def test_analog_mvm_shape_check():
    t = Tile(0, 0, 0, np.eye(3), np.zeros((3, 3)), 1.0, 0)
    with pytest.raises(ShapeMismatch):
        analog_mvm(t, np.ones(4), 0, HwaConfig.noiseless())


def test_analog_mvm_output_quantization():
    t = Tile(0, 0, 0, np.eye(2), np.zeros((2, 2)), 1.0, 0, output_range=1.0)
    hwa = HwaConfig(weight_noise_frac=0.0, mvm_out_noise_sigma=0.0, input_bits=None, output_bits=8)
    y = analog_mvm(t, np.array([3.0, 0.3]), 0, hwa)
    assert y[0] == pytest.approx(1.0)
    assert y[1] == pytest.approx(38 / 127)


def test_tile_rejects_oversized_blocks():
    with pytest.raises(ShapeMismatch):
        Tile(0, 0, 0, np.zeros((257, 2)), np.zeros((257, 2)), 1.0, 0)
    with pytest.raises(ShapeMismatch):
        Tile(0, 0, 0, np.zeros((2, 2)), np.zeros((2, 3)), 1.0, 0)


def test_programming_noise_statistics():
    rng = np.random.default_rng(0)
    g_plus = rng.uniform(0.2, 0.8, (256, 256))
    g_minus = rng.uniform(0.2, 0.8, (256, 256))
    tile = Tile(0, 0, 0, g_plus, g_minus, 2.0, 0)
    p = map_model(_small_model())
    p.tiles = [tile]
    noisy = program(p, sigma_prog=0.03, seed=5)
    error = (noisy.tiles[0].weights() - tile.weights()) / tile.scale
    assert np.std(error) == pytest.approx(math.sqrt(2.0) * 0.03, rel=0.05)
    assert np.array_equal(p.tiles[0].g_plus, g_plus)
    assert noisy.sigma_prog == 0.03
    assert noisy.program_seed == 5


def test_programming_clamps_and_zero_sigma_copies():
    p = map_model(_small_model())
    noisy = program(p, sigma_prog=0.5, seed=1)
    for t in noisy.tiles:
        assert np.all((t.g_plus >= 0) & (t.g_plus <= 1))
    same = program(p, sigma_prog=0.0)
    for a, b in zip(same.tiles, p.tiles):
        assert np.array_equal(a.g_plus, b.g_plus)
    with pytest.raises(ValueError):
        program(p, sigma_prog=-0.1)


def test_quantize():
    assert quantize(np.array([0.0, 1.0, -1.0, 2.0]), 8, limit=1.0).tolist() == [0.0, 1.0, -1.0, 1.0]
    x = np.random.default_rng(1).uniform(-1, 1, 1000)
    assert np.max(np.abs(quantize(x, 8, limit=1.0) - x)) <= 0.5 / 127 + 1e-15
    assert quantize(x, None) is x
    assert np.array_equal(quantize(np.zeros(3), 4), np.zeros(3))


def test_hwa_config_validation():
    with pytest.raises(ValueError):
        HwaConfig(weight_noise_frac=-0.1)
    with pytest.raises(ValueError):
        HwaConfig(input_bits=1)
    assert not HwaConfig.noiseless().injects_noise
    assert HwaConfig().injects_noise


def test_hwa_context_perturbs_outputs_not_weights():
    model = _small_model()
    x = _features()
    stored = [p.copy() for p in model.parameters()]
    clean = model.forward(x)
    noisy = model.forward(x, ctx=HwaContext(HwaConfig(seed=3)))
    assert not np.allclose(clean, noisy)
    for before, after in zip(stored, model.parameters()):
        assert np.array_equal(before, after)


def test_clip_weights_bounds_weights_and_biases():
    model = _small_model()
    model.layers[0].params['W'][0, 0, 0] = 50.0
    model.layers[0].params['b'][0] = -50.0
    records = clip_weights(model, 1.5)
    _, sigma, bound = records[0]
    assert bound == pytest.approx(1.5 * sigma)
    assert np.max(np.abs(model.layers[0].params['W'])) <= bound
    assert model.layers[0].params['b'][0] == pytest.approx(-bound)


def _tiny_task(seed=0):
    rng = np.random.default_rng(seed)
    y = np.repeat([0, 1], 12)
    x = rng.normal(0.0, 0.3, size=(24, 2, 16))
    x[y == 0, 0] += 1.0
    x[y == 1, 1] += 1.0
    return x, y


def _tiny_arch():
    return ArchSpec('tiny', [conv(2, 6, 4), gap(), linear(6, 2)])


def test_noiseless_retraining_equals_plain_training():
    x, y = _tiny_task()
    data = ((x[:16], y[:16]), (x[16:], y[16:]))
    cfg = TrainConfig(lr=1e-2, epochs=3, batch_size=4)
    base = build(_tiny_arch(), init_seed=2)
    untouched = [p.copy() for p in base.parameters()]
    retrained, history = hwa_retrain(base, data, HwaConfig.noiseless(), cfg)
    reference, reference_history = train(base.copy(), data, cfg)
    for p, q in zip(retrained.parameters(), reference.parameters()):
        assert np.array_equal(p, q)
    assert history.equals(reference_history)
    for before, after in zip(untouched, base.parameters()):
        assert np.array_equal(before, after)


def test_retraining_calls_clip_hook():
    x, y = _tiny_task()
    calls = []
    hwa_retrain(build(_tiny_arch()), ((x, y), (x, y)), HwaConfig(seed=1),
                TrainConfig(lr=1e-2, epochs=1, batch_size=8), on_clip=calls.append)
    assert len(calls) == 3
    assert len(calls[0]) == 2


def test_calibration_sets_every_range():
    model = _small_model()
    p = calibrate_output_ranges(map_model(model), model, _features(4))
    assert p.is_calibrated
    assert all(t.output_range > 0 for t in p.tiles)


def test_repeated_inference_summary():
    x, y = _tiny_task()
    model, _ = train(build(_tiny_arch()), ((x, y), (x, y)), TrainConfig(lr=1e-2, epochs=5, batch_size=8))
    p = map_model(model)
    frame, summary = repeated_inference(p, model, x, y, HwaConfig.noiseless(), repetitions=10, seed=4)
    assert len(frame) == 10
    assert summary['std'] == pytest.approx(0.0, abs=1e-12)
    assert summary['mean'] == pytest.approx(float(np.mean(model.predict(x) == y)))
    assert 'mean ± std over 10 repetitions' in summary['text']

    _, noisy = repeated_inference(p, model, x, y, HwaConfig(), repetitions=3, seed=4, sigma_prog=0.03)
    assert 0.0 <= noisy['mean'] <= 1.0
    with pytest.raises(ValueError):
        repeated_inference(p, model, x, y, repetitions=0)


def test_sigma_prog_sweep_columns():
    x, y = _tiny_task()
    model = build(_tiny_arch())
    sweep = sigma_prog_sweep(map_model(model), model, x, y, sigmas=(0.0, 0.05), repetitions=2)
    assert list(sweep.columns) == ['sigma_prog', 'mean_accuracy', 'std_accuracy']
    assert sweep['sigma_prog'].tolist() == [0.0, 0.05]


def test_program_save_load_round_trip(tmp_path):
    model = _small_model()
    p = calibrate_output_ranges(program(map_model(model, input_len=200), 0.03, seed=2), model, _features(2))
    manifest_path, _ = save_program(p, str(tmp_path), 'crossbar_hwa')
    restored = load_program(manifest_path)
    assert restored.layers == p.layers
    assert restored.sigma_prog == 0.03
    for a, b in zip(restored.tiles, p.tiles):
        assert np.array_equal(a.g_plus, b.g_plus)
        assert np.array_equal(a.g_minus, b.g_minus)
        assert a.output_range == b.output_range


def test_program_blob_tampering_is_detected(tmp_path):
    manifest_path, blob_path = save_program(map_model(_small_model()), str(tmp_path))
    with open(blob_path, 'ab') as f:
        f.write(b'\x00')
    with pytest.raises(HashMismatch):
        load_program(manifest_path)
