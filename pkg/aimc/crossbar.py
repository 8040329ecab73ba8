import logging
import math
import os
from dataclasses import dataclass, field, replace
from typing import List, Optional, Tuple

import numpy as np
import pandas as pd

from aimc.hwa import HwaConfig, quantize
from exceptions import HashMismatch, SchemaMismatch, ShapeMismatch
from helpers import atomic_write_bytes, derive_seed, read_json, sha256_bytes, write_json
from net.checkpoint import pack_tensors, unpack_tensors
from net.layers import Conv1d, Linear
from net.model import CnnModel
from net.train import scores

logger = logging.getLogger(__name__)

TILE_DIM = 256
CELLS_PER_CORE = TILE_DIM * TILE_DIM
DEVICES_PER_CELL = 4
N_CORES = 64
DEFAULT_SIGMA_PROG = 0.03
PROGRAM_VERSION = 1


@dataclass
class Tile:
    """
    One core's share of a layer matrix, stored as a differential conductance pair.

    Attributes:
        layer_index (int): Index of the source layer in the model stack
        row_offset (int): First matrix row held by the tile
        col_offset (int): First matrix column held by the tile
        g_plus (ndarray): Conductances of positive weights, normalized to [0, 1]
        g_minus (ndarray): Conductances of negative weights, normalized to [0, 1]
        scale (float): Weight represented by a unit conductance difference
        core (int): Core the tile is programmed on
        output_range (float): Calibrated output ADC range, None until calibrated
    """
    layer_index: int
    row_offset: int
    col_offset: int
    g_plus: np.ndarray
    g_minus: np.ndarray
    scale: float
    core: int
    output_range: Optional[float] = None

    def __post_init__(self):
        if self.g_plus.shape != self.g_minus.shape or self.g_plus.ndim != 2:
            raise ShapeMismatch(f"conductance pair shapes differ: {self.g_plus.shape} vs {self.g_minus.shape}")
        if self.g_plus.shape[0] > TILE_DIM or self.g_plus.shape[1] > TILE_DIM:
            raise ShapeMismatch(f"tile {self.g_plus.shape} exceeds {TILE_DIM}x{TILE_DIM}")

    @property
    def rows(self):
        return int(self.g_plus.shape[0])

    @property
    def cols(self):
        return int(self.g_plus.shape[1])

    @property
    def cells(self):
        return self.rows * self.cols

    @property
    def utilization(self):
        return self.cells / CELLS_PER_CORE

    def weights(self):
        return self.scale * (self.g_plus - self.g_minus)


@dataclass(frozen=True)
class LayerMap:
    """Where one conv/linear layer landed: its matrix shape and tile indices."""
    layer_index: int
    kind: str
    rows: int
    cols: int
    tiles: List[int]
    mvm_count: Optional[int] = None
    weight_shape: Tuple[int, ...] = ()
    stride: int = 1


@dataclass
class CrossbarProgram:
    """
    A model mapped onto 256x256 cores, one tile per core.

    Attributes:
        tiles (list): Tiles in core order
        layers (list): LayerMap per conv/linear layer
        sigma_prog (float): Programming noise applied so far (0 for a fresh mapping)
        program_seed (int): Seed of the programming noise, None when unprogrammed
    """
    tiles: List[Tile]
    layers: List[LayerMap]
    sigma_prog: float = 0.0
    program_seed: Optional[int] = None
    metadata: dict = field(default_factory=dict)

    @property
    def cores_used(self):
        return len({t.core for t in self.tiles})

    @property
    def cells(self):
        return sum(t.cells for t in self.tiles)

    @property
    def packed_cores(self):
        """Lower bound on cores if cells could be packed densely."""
        return math.ceil(self.cells / CELLS_PER_CORE)

    @property
    def is_calibrated(self):
        return all(t.output_range is not None for t in self.tiles)

    def layer(self, layer_index):
        for lm in self.layers:
            if lm.layer_index == layer_index:
                return lm
        raise KeyError(f"layer {layer_index} is not mapped")

    def tiles_of(self, layer_index):
        return [self.tiles[i] for i in self.layer(layer_index).tiles]


def device_utilization(n_weights, cores=1):
    """Fraction of PCM devices (4 per cell) a weight count occupies on `cores` cores."""
    return n_weights / (CELLS_PER_CORE * DEVICES_PER_CELL * cores)


def map_model(model: CnnModel, tile_dim=TILE_DIM, input_len=None):
    """
    Partition every conv/linear weight matrix into row-major tiles of at most tile_dim x tile_dim.

    Conv weights are laid out as (in_ch * kernel) rows by out_ch columns, linear
    weights as in x out. Each tile scales by its own max |w| (1 for an all-zero
    tile) and stores w >= 0 in g_plus, w < 0 in g_minus.

    Args:
        model (CnnModel): Trained model
        tile_dim (int): Crossbar side
        input_len (int, optional): Frames per input, records the MVM count of each layer

    Returns:
        CrossbarProgram
    """
    if not 1 <= tile_dim <= TILE_DIM:
        raise ValueError(f"tile_dim must lie in [1, {TILE_DIM}], got {tile_dim}")
    lengths = model.arch.output_lengths(input_len) if input_len is not None else None

    tiles, layers = [], []
    for index, layer in model.matrix_layers:
        matrix = layer.weight_matrix()
        rows, cols = matrix.shape
        ids = []
        for r0 in range(0, rows, tile_dim):
            for c0 in range(0, cols, tile_dim):
                block = matrix[r0:r0 + tile_dim, c0:c0 + tile_dim]
                scale = float(np.max(np.abs(block)))
                if scale == 0.0:
                    scale = 1.0
                g_plus = np.where(block > 0, block / scale, 0.0)
                g_minus = np.where(block < 0, -block / scale, 0.0)
                ids.append(len(tiles))
                tiles.append(Tile(index, r0, c0, g_plus, g_minus, scale, core=len(tiles)))

        mvm_count = None
        if lengths is not None:
            mvm_count = lengths[index] if isinstance(layer, Conv1d) else 1
        layers.append(LayerMap(index, layer.kind, rows, cols, ids, mvm_count, tuple(layer.params['W'].shape),
                               getattr(layer, 'stride', 1)))

    program = CrossbarProgram(tiles, layers, metadata={'arch': model.arch.name, 'input_len': input_len})
    if program.cores_used > N_CORES:
        logger.warning(f"'{model.arch.name}' needs {program.cores_used} cores, the chip has {N_CORES}")
    logger.info(f"Mapped '{model.arch.name}' onto {len(tiles)} tiles ({program.cells} cells, "
                f"{program.packed_cores} packed cores)")
    return program


def read_weights(p: CrossbarProgram):
    """
    Reassemble layer weights from the conductances: w = scale * (g_plus - g_minus).

    Returns:
        dict: layer index -> weight tensor in the layer's own shape
    """
    weights = {}
    for lm in p.layers:
        matrix = np.zeros((lm.rows, lm.cols))
        for i in lm.tiles:
            t = p.tiles[i]
            matrix[t.row_offset:t.row_offset + t.rows, t.col_offset:t.col_offset + t.cols] = t.weights()
        # conv rows are c * kernel + k, so the transpose reshapes straight to (out, in, kernel)
        weights[lm.layer_index] = matrix.T.reshape(lm.weight_shape or matrix.T.shape)
    return weights


def load_weights(model: CnnModel, weights):
    """Copy of `model` with conv/linear weights replaced (e.g. by `read_weights`)."""
    clone = model.copy()
    for index, w in weights.items():
        target = clone.layers[index].params['W']
        target[...] = w.reshape(target.shape)
    return clone


def program(p: CrossbarProgram, sigma_prog=DEFAULT_SIGMA_PROG, seed=0):
    """
    Emulate conductance programming: add N(0, sigma_prog^2) to every g_plus and g_minus
    cell, then clamp to [0, 1].

    Returns:
        CrossbarProgram: New program; `p` is unchanged
    """
    if sigma_prog < 0:
        raise ValueError(f"sigma_prog must be non-negative, got {sigma_prog}")
    if sigma_prog == 0:
        return replace(p, tiles=[replace(t) for t in p.tiles])
    rng = np.random.default_rng(seed)
    tiles = []
    for t in p.tiles:
        g_plus = np.clip(t.g_plus + rng.normal(0.0, sigma_prog, t.g_plus.shape), 0.0, 1.0)
        g_minus = np.clip(t.g_minus + rng.normal(0.0, sigma_prog, t.g_minus.shape), 0.0, 1.0)
        tiles.append(replace(t, g_plus=g_plus, g_minus=g_minus))
    logger.debug(f"Programmed {len(tiles)} tiles with sigma_prog={sigma_prog} (seed {seed})")
    return replace(p, tiles=tiles, sigma_prog=sigma_prog, program_seed=seed)


def analog_mvm(t: Tile, x, rng, hwa: HwaConfig):
    """
    One noisy crossbar MVM.

    Inputs are quantized to hwa.input_bits over each vector's own range, multiplied
    through the conductance difference, read with additive Gaussian noise and, on a
    calibrated tile, quantized to hwa.output_bits over the calibrated range.

    Args:
        t (Tile): Programmed tile
        x (ndarray): (rows,) vector or (n, rows) batch of vectors
        rng: numpy Generator or seed of the read noise
        hwa (HwaConfig): Quantization and noise settings

    Returns:
        ndarray: (cols,) or (n, cols) outputs in weight units
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != t.rows:
        raise ShapeMismatch(f"tile has {t.rows} rows, input has {x.shape[-1]} elements")
    rng = np.random.default_rng(rng)
    x_q = quantize(x, hwa.input_bits, axis=-1)
    y = t.scale * (x_q @ (t.g_plus - t.g_minus))
    if hwa.mvm_out_noise_sigma > 0:
        y = y + rng.normal(0.0, hwa.mvm_out_noise_sigma, size=y.shape)
    if t.output_range is not None and hwa.output_bits is not None:
        y = quantize(y, hwa.output_bits, limit=t.output_range)
    return y


def _layer_mvm(p: CrossbarProgram, index, inputs_2d, rng, hwa, record):
    lm = p.layer(index)
    out = np.zeros((inputs_2d.shape[0], lm.cols))
    for i in lm.tiles:
        t = p.tiles[i]
        partial = analog_mvm(t, inputs_2d[:, t.row_offset:t.row_offset + t.rows], rng, hwa)
        if record is not None:
            record[i] = max(record.get(i, 0.0), float(np.max(np.abs(partial))) if partial.size else 0.0)
        out[:, t.col_offset:t.col_offset + t.cols] += partial
    return out


def _forward(p: CrossbarProgram, model: CnnModel, x, rng, hwa, record=None):
    x = np.asarray(x, dtype=np.float64)
    for index, layer in enumerate(model.layers):
        if isinstance(layer, Conv1d):
            cols, l_out = layer.im2col(x)
            out = _layer_mvm(p, index, cols, rng, hwa, record) + layer.params['b']
            x = out.reshape(x.shape[0], l_out, layer.out_ch).transpose(0, 2, 1)
        elif isinstance(layer, Linear):
            x = _layer_mvm(p, index, layer.flatten(x), rng, hwa, record) + layer.params['b']
        else:
            x = layer.forward(x, training=False)
    return x


def _as_batch(fm):
    values = getattr(fm, 'values', fm)
    values = np.asarray(values, dtype=np.float64)
    return values[None] if values.ndim == 2 else values


def analog_forward(p: CrossbarProgram, model: CnnModel, fm, seed=0, hwa: HwaConfig = None):
    """
    Logits with every conv/linear MVM executed on the crossbar and batchnorm,
    activations and pooling computed digitally.

    Args:
        p (CrossbarProgram): Program mapped from `model`
        model (CnnModel): Source of biases and the off-chip layers
        fm: FeatureMatrix, (channels, frames) array or (N, channels, frames) batch
        seed: Seed or Generator of the read noise
        hwa (HwaConfig): Inference non-idealities; defaults to HwaConfig()

    Returns:
        ndarray: (N, n_classes) logits
    """
    hwa = hwa or HwaConfig()
    return _forward(p, model, _as_batch(fm), np.random.default_rng(seed), hwa)


def calibrate_output_ranges(p: CrossbarProgram, model: CnnModel, x_train, hwa: HwaConfig = None, batch_size=64):
    """
    Set every tile's output range to the max |partial MVM| seen on the training features,
    measured without read noise.

    Returns:
        CrossbarProgram: Calibrated copy
    """
    hwa = hwa or HwaConfig()
    quiet = replace(hwa, mvm_out_noise_sigma=0.0, output_bits=None)
    x_train = _as_batch(x_train)
    record = {}
    rng = np.random.default_rng(0)
    for start in range(0, len(x_train), batch_size):
        _forward(p, model, x_train[start:start + batch_size], rng, quiet, record)
    tiles = [replace(t, output_range=record.get(i, 0.0) or 1.0) for i, t in enumerate(p.tiles)]
    logger.debug(f"Calibrated {len(tiles)} tile output ranges on {len(x_train)} items")
    return replace(p, tiles=tiles)


def analog_predict(p, model, x, seed, hwa, batch_size=64):
    x = _as_batch(x)
    rng = np.random.default_rng(seed)
    out = [_forward(p, model, x[i:i + batch_size], rng, hwa) for i in range(0, len(x), batch_size)]
    return np.concatenate(out, axis=0).argmax(axis=1)


def repeated_inference(p: CrossbarProgram, model: CnnModel, x, y, hwa: HwaConfig = None, repetitions=10,
                       seed=0, sigma_prog=None):
    """
    Repeat noisy inference and summarize the accuracy as mean +- std.

    Each repetition draws its own read noise; with `sigma_prog` set, it also
    reprograms the mapped conductances with fresh programming noise.

    Args:
        p (CrossbarProgram): Mapped (and calibrated) program
        model (CnnModel): Source model
        x, y: Features and labels of the evaluation split
        hwa (HwaConfig): Inference non-idealities
        repetitions (int): Number of inference measurements
        seed (int): Master seed of the repetitions
        sigma_prog (float, optional): Programming noise redrawn per repetition

    Returns:
        tuple: (DataFrame of repetition, accuracy; summary dict with mean, std, text)
    """
    if repetitions < 1:
        raise ValueError(f"repetitions must be at least 1, got {repetitions}")
    hwa = hwa or HwaConfig()
    y = np.asarray(y, dtype=np.int64)
    rows = []
    for r in range(repetitions):
        target = p
        if sigma_prog is not None:
            target = program(p, sigma_prog, seed=derive_seed(seed, 'program', r))
        predicted = analog_predict(target, model, x, derive_seed(seed, 'read', r), hwa)
        rows.append({'repetition': r, 'accuracy': scores(y, predicted, model.arch.n_classes)['accuracy']})
    frame = pd.DataFrame(rows, columns=['repetition', 'accuracy'])
    mean = float(frame['accuracy'].mean())
    std = float(frame['accuracy'].std(ddof=1)) if repetitions > 1 else 0.0
    summary = {
        'mean': mean,
        'std': std,
        'repetitions': repetitions,
        'text': f"accuracy {100 * mean:.2f} ± {100 * std:.2f} % (mean ± std over {repetitions} repetitions)",
    }
    logger.info(summary['text'])
    return frame, summary


def sigma_prog_sweep(p: CrossbarProgram, model: CnnModel, x, y, sigmas=(0.0, 0.01, 0.03, 0.05, 0.1),
                     hwa: HwaConfig = None, repetitions=10, seed=0):
    """Mean and std accuracy over `repetitions` programming draws for each sigma_prog."""
    rows = []
    for sigma in sigmas:
        _, summary = repeated_inference(p, model, x, y, hwa, repetitions, seed, sigma_prog=sigma)
        rows.append({'sigma_prog': sigma, 'mean_accuracy': summary['mean'], 'std_accuracy': summary['std']})
    return pd.DataFrame(rows, columns=['sigma_prog', 'mean_accuracy', 'std_accuracy'])


def utilization_frame(p: CrossbarProgram):
    """
    Per-tile utilization with an aggregate row.

    Returns:
        DataFrame: tile, layer_index, kind, row_offset, col_offset, rows, cols, cells,
            core, utilization, scale
    """
    kinds = {lm.layer_index: lm.kind for lm in p.layers}
    rows = [{
        'tile': str(i), 'layer_index': t.layer_index, 'kind': kinds[t.layer_index],
        'row_offset': t.row_offset, 'col_offset': t.col_offset, 'rows': t.rows, 'cols': t.cols,
        'cells': t.cells, 'core': t.core, 'utilization': t.utilization, 'scale': t.scale,
    } for i, t in enumerate(p.tiles)]
    rows.append({
        'tile': 'total', 'layer_index': None, 'kind': f"{p.cores_used}/{N_CORES} cores",
        'row_offset': None, 'col_offset': None, 'rows': None, 'cols': None, 'cells': p.cells,
        'core': p.packed_cores, 'utilization': p.cells / (CELLS_PER_CORE * max(p.cores_used, 1)),
        'scale': None,
    })
    return pd.DataFrame(rows)


def utilization_summary(p: CrossbarProgram):
    return {
        'tiles': len(p.tiles),
        'cores_used': p.cores_used,
        'cores_available': N_CORES,
        'core_fraction': p.cores_used / N_CORES,
        'cells': p.cells,
        'packed_cores': p.packed_cores,
        'cell_utilization': p.cells / (CELLS_PER_CORE * max(p.cores_used, 1)),
        'device_utilization': device_utilization(p.cells, max(p.cores_used, 1)),
        'layers': [{'layer_index': lm.layer_index, 'kind': lm.kind, 'rows': lm.rows, 'cols': lm.cols,
                    'tiles': len(lm.tiles)} for lm in p.layers],
    }


def save_program(p: CrossbarProgram, directory, name='crossbar'):
    """
    Write `<name>.json` (tile geometry, scales, cores, ranges) and `<name>.bin` (conductances).

    Returns:
        tuple: (manifest path, blob path)
    """
    tensors = {}
    for i, t in enumerate(p.tiles):
        tensors[f"tile{i:04d}.g_plus"] = t.g_plus
        tensors[f"tile{i:04d}.g_minus"] = t.g_minus
    blob = pack_tensors(tensors)
    blob_path = os.path.join(directory, f"{name}.bin")
    manifest_path = os.path.join(directory, f"{name}.json")
    atomic_write_bytes(blob_path, blob)
    write_json(manifest_path, {
        'version': PROGRAM_VERSION,
        'sigma_prog': p.sigma_prog,
        'program_seed': p.program_seed,
        'metadata': p.metadata,
        'blob': os.path.basename(blob_path),
        'blob_sha256': sha256_bytes(blob),
        'tiles': [{
            'layer_index': t.layer_index, 'row_offset': t.row_offset, 'col_offset': t.col_offset,
            'rows': t.rows, 'cols': t.cols, 'scale': t.scale, 'core': t.core,
            'output_range': t.output_range, 'utilization': t.utilization,
        } for t in p.tiles],
        'layers': [{'layer_index': lm.layer_index, 'kind': lm.kind, 'rows': lm.rows, 'cols': lm.cols,
                    'tiles': list(lm.tiles), 'mvm_count': lm.mvm_count,
                    'weight_shape': list(lm.weight_shape), 'stride': lm.stride} for lm in p.layers],
        'utilization': utilization_summary(p),
    })
    return manifest_path, blob_path


def load_program(manifest_path):
    manifest = read_json(manifest_path)
    if manifest.get('version') != PROGRAM_VERSION:
        raise SchemaMismatch(f"{manifest_path}: unsupported program version {manifest.get('version')}")
    blob_path = os.path.join(os.path.dirname(manifest_path), manifest['blob'])
    with open(blob_path, 'rb') as f:
        blob = f.read()
    if sha256_bytes(blob) != manifest['blob_sha256']:
        raise HashMismatch(f"{blob_path} does not match the hash recorded in {manifest_path}")
    tensors = unpack_tensors(blob, blob_path)

    tiles = []
    for i, entry in enumerate(manifest['tiles']):
        g_plus = tensors.get(f"tile{i:04d}.g_plus")
        g_minus = tensors.get(f"tile{i:04d}.g_minus")
        if g_plus is None or g_minus is None or g_plus.shape != (entry['rows'], entry['cols']):
            raise SchemaMismatch(f"{blob_path}: conductances of tile {i} disagree with the manifest")
        tiles.append(Tile(entry['layer_index'], entry['row_offset'], entry['col_offset'], g_plus, g_minus,
                          entry['scale'], entry['core'], entry['output_range']))
    layers = [LayerMap(lm['layer_index'], lm['kind'], lm['rows'], lm['cols'], list(lm['tiles']), lm['mvm_count'],
                       tuple(lm['weight_shape']), lm['stride'])
              for lm in manifest['layers']]
    return CrossbarProgram(tiles, layers, manifest['sigma_prog'], manifest['program_seed'], manifest['metadata'])
